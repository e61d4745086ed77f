# =================================================================================================
# TOUR HEADER: Errors
# =================================================================================================
#
# JOB:
# One exception hierarchy for the whole package. Every error carries the process exit code the
# CLI reports for it, so main.py never has to know which module raised what.
#
# EXIT CODES:
# 0 success, 1 internal/contract error, 2 configuration error, 3 data error, 4 training failure.
#
# =================================================================================================


class ChameleonError(Exception):
    exit_code = 1


class ConfigError(ChameleonError):
    """Invalid experiment configuration or variant/encoder mismatch."""
    exit_code = 2


class DependencyError(ConfigError):
    """A stage was started without the artifact an upstream stage writes."""

    def __init__(self, required_file, stage: str = ""):
        self.required_file = str(required_file)
        hint = f" (run '{stage}' first)" if stage else ""
        super().__init__(f"Missing upstream artifact: {self.required_file}{hint}")


class DataError(ChameleonError):
    exit_code = 3


class SamplingError(DataError):
    pass


class TrainingError(ChameleonError):
    """Raised when a loss turns non-finite. `trace` holds the losses seen so far."""
    exit_code = 4

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class DimensionError(ChameleonError, ValueError):
    pass


class ShapeError(DimensionError):
    pass


class ContractError(ChameleonError):
    pass


class UndefinedTestError(ContractError):
    pass
