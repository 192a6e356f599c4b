from typing import List, Optional


class ContractViolationError(ValueError):
    """
    Raised when a caller breaks an operation's precondition, e.g. a controller whose
    length does not match the genome it is simulated with.
    """


class ConfigError(ValueError):
    """
    Malformed experiment configuration. Carries the 1-based line and the offending key
    when they are known so the diagnostic can point at them.
    """

    def __init__(
        self, message: str, line: Optional[int] = None, key: Optional[str] = None
    ):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class MissingArtifactError(LookupError):
    """
    A requested artifact is not available: a run-log row without a payload, or the
    run logs an analysis needs.
    """

    def __init__(self, message: str, missing: Optional[List[str]] = None):
        self.missing = list(missing or [])
        super().__init__(message)
