"""
Error types for the Market Causality Portal.
Every domain failure raised by the services layer derives from CausalPortalError.
"""

from typing import Any, List, Optional


class CausalPortalError(Exception):
    """Base class for all domain errors."""


class DatasetError(CausalPortalError):
    """Raised for ingestion, alignment and transform failures."""

    def __init__(self, message: str, path: Optional[str] = None, row: Optional[int] = None):
        self.path = path
        self.row = row
        details = []
        if path is not None:
            details.append(f"file {path}")
        if row is not None:
            details.append(f"row {row}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class StatTestError(CausalPortalError):
    """Raised when a hypothesis test or regression cannot be computed."""


class RankDeficientError(StatTestError):
    """Raised when a design matrix does not have full column rank."""


class VarModelError(CausalPortalError):
    """Raised for VAR estimation and order-selection failures."""


class IcaConvergenceError(CausalPortalError):
    """Raised when FastICA fails to converge after all restarts."""

    def __init__(self, message: str, trace: Optional[List[Any]] = None):
        self.trace = list(trace or [])
        super().__init__(message)


class SingularAssignmentError(CausalPortalError):
    """Raised when every row assignment leaves a zero on the diagonal."""


class KnowledgeError(CausalPortalError):
    """Raised for contradictory or malformed domain knowledge."""


class GraphError(CausalPortalError):
    """Raised for invalid graphs, unknown export formats and shape mismatches."""


class BenchmarkError(CausalPortalError):
    """Raised for invalid ground truths and benchmark requests."""


class ConfigError(CausalPortalError):
    """Raised when a run configuration cannot be loaded."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class PipelineStageError(CausalPortalError):
    """Raised when a pipeline stage fails; names the stage and its cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
