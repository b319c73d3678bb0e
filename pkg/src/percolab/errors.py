"""Exception types shared across the package (mapped to CLI exit codes)."""


class PercolabError(Exception):
    exit_code = 3


class ConfigError(PercolabError, ValueError):
    """Invalid experiment configuration or schema violation."""
    exit_code = 2


class EstimatorError(PercolabError, RuntimeError):
    """An estimator could not produce a defined result."""
    exit_code = 3


class VertexLimitExceeded(EstimatorError):
    def __init__(self, sample_index: int, limit: int):
        super().__init__(f"sample {sample_index}: cluster exceeded the vertex limit {limit}")
        self.sample_index = sample_index
        self.limit = limit


class BudgetExceeded(PercolabError, RuntimeError):
    """A budget, escalation limit or acceptance floor was hit."""
    exit_code = 4

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
