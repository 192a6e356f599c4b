import argparse
import asyncio
import logging
import os
import sys
from typing import List, Optional

from project.analyzeExperiment_service import Experiment, analyzeExperiment
from project.errors import ConfigError, MissingArtifactError
from project.replayRun_service import replayRun
from project.runExperiment_service import runExperiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _default_jobs() -> int:
    value = os.environ.get("MORPHX_JOBS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        logger.warning("ignoring MORPHX_JOBS=%r, not an integer", value)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphx",
        description="Co-optimize robot designs and controllers under a step budget.",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute every arm x repetition of a config")
    run.add_argument("--config", required=True, help="dotted-key experiment config")
    run.add_argument("--out", default=None, help="output directory for run logs")
    run.add_argument(
        "--jobs",
        type=int,
        default=_default_jobs(),
        help="parallel worker processes (default: $MORPHX_JOBS or 1)",
    )
    run.add_argument(
        "--seed-offset", type=int, default=0, help="added to every master seed"
    )

    analyze = sub.add_parser("analyze", help="curves and summary of one experiment")
    analyze.add_argument("--out", required=True, help="directory written by 'run'")
    analyze.add_argument(
        "--experiment",
        required=True,
        choices=[e.value for e in Experiment],
    )

    replay = sub.add_parser("replay", help="re-simulate a logged design")
    replay.add_argument("runlog", help="a '<arm>_<seed>.csv' run log")
    replay.add_argument("row", type=int, help="0-based data row")
    replay.add_argument("--out", default=None, help="trace file to write")

    serve = sub.add_parser("serve", help="start the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _run(args: argparse.Namespace) -> None:
    res = asyncio.run(runExperiment(args.config, args.out, args.seed_offset, args.jobs))
    for run in res.runs:
        print(run.describe())


def _analyze(args: argparse.Namespace) -> None:
    res = asyncio.run(analyzeExperiment(args.out, Experiment(args.experiment)))
    for line in res.summary:
        print(line)
    for path in res.files:
        print(f"wrote {path}")


def _replay(args: argparse.Namespace) -> None:
    res = asyncio.run(replayRun(args.runlog, args.row, args.out))
    print(
        f"wrote {res.frames} frames to {res.trajectory_path}; objective "
        f"{res.objective!r} (logged {res.logged_objective!r})"
    )


def _serve(args: argparse.Namespace) -> None:
    import uvicorn

    uvicorn.run("project.server:app", host=args.host, port=args.port)


_COMMANDS = {"run": _run, "analyze": _analyze, "replay": _replay, "serve": _serve}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        logger.error("%s", e)
        return EXIT_MISSING
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
