import logging
from typing import List, Optional

import project.analyzeExperiment_service
import project.replayRun_service
import project.runExperiment_service
import project.simulateEpisode_service
from fastapi import FastAPI
from fastapi.encoders import jsonable_encoder
from fastapi.responses import JSONResponse
from project.errors import ConfigError, ContractViolationError
from project.physics import DEFAULT_DT, MorphologyGraph
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

app = FastAPI(
    title="morphx",
    description="Co-optimization of robot design and control under a fixed step budget",
)


class RunExperimentRequest(BaseModel):
    config_path: str
    out_dir: Optional[str] = None
    seed_offset: int = Field(default=0, ge=0)
    jobs: int = Field(default=1, ge=1)


class AnalyzeExperimentRequest(BaseModel):
    out_dir: str


class ReplayRunRequest(BaseModel):
    runlog_path: str
    row_index: int
    out_path: Optional[str] = None


class SimulateEpisodeRequest(BaseModel):
    genome: MorphologyGraph
    controller: List[float]
    episode_steps: int = Field(ge=1)
    dt: float = Field(default=DEFAULT_DT, gt=0)


def _error_response(e: Exception) -> JSONResponse:
    logger.exception("Error processing request")
    res = dict()
    res["error"] = str(e)
    status = 400 if isinstance(e, (ConfigError, ContractViolationError)) else 500
    return JSONResponse(content=jsonable_encoder(res), status_code=status)


@app.post(
    "/runs", response_model=project.runExperiment_service.RunExperimentResponse
)
async def api_post_runExperiment(
    request: RunExperimentRequest,
) -> project.runExperiment_service.RunExperimentResponse | JSONResponse:
    """
    Runs every arm of an experiment config for every repetition.
    """
    try:
        res = await project.runExperiment_service.runExperiment(
            request.config_path, request.out_dir, request.seed_offset, request.jobs
        )
        return res
    except Exception as e:
        return _error_response(e)


@app.post(
    "/analysis/{experiment}",
    response_model=project.analyzeExperiment_service.AnalyzeExperimentResponse,
)
async def api_post_analyzeExperiment(
    experiment: project.analyzeExperiment_service.Experiment,
    request: AnalyzeExperimentRequest,
) -> project.analyzeExperiment_service.AnalyzeExperimentResponse | JSONResponse:
    """
    Writes the curve CSVs and text summary of one experiment from its run logs.
    """
    try:
        res = await project.analyzeExperiment_service.analyzeExperiment(
            request.out_dir, experiment
        )
        return res
    except Exception as e:
        return _error_response(e)


@app.post("/replay", response_model=project.replayRun_service.ReplayRunResponse)
async def api_post_replayRun(
    request: ReplayRunRequest,
) -> project.replayRun_service.ReplayRunResponse | JSONResponse:
    """
    Re-simulates a logged design and writes its frame-by-frame trace.
    """
    try:
        res = await project.replayRun_service.replayRun(
            request.runlog_path, request.row_index, request.out_path
        )
        return res
    except Exception as e:
        return _error_response(e)


@app.post(
    "/simulate",
    response_model=project.simulateEpisode_service.SimulateEpisodeResponse,
)
async def api_post_simulateEpisode(
    request: SimulateEpisodeRequest,
) -> project.simulateEpisode_service.SimulateEpisodeResponse | JSONResponse:
    """
    Scores one episode of a design under a given open-loop controller.
    """
    try:
        res = await project.simulateEpisode_service.simulateEpisode(
            request.genome, request.controller, request.episode_steps, request.dt
        )
        return res
    except Exception as e:
        return _error_response(e)
