"""Exception hierarchy shared by all modules."""


class EpisynthError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(EpisynthError):
    """A model, manifest or stream is malformed or inconsistent."""


class DomainError(EpisynthError, ValueError):
    """An argument lies outside the domain of a density or transform."""


class EvaluationError(EpisynthError):
    """A functional node produced a non-finite value where none is allowed."""

    def __init__(self, node: str, message: str = "NaN produced"):
        super().__init__(f"node {node!r}: {message}")
        self.node = node


class StepSizeError(EpisynthError):
    """A discretised compartment went negative; reduce the time step."""


class RegimeError(EpisynthError):
    """Per-contact escape probability left (0, 1]: parameters outside the Reed-Frost regime."""


class DegenerateEnsembleError(EpisynthError):
    """Every particle weight underflowed; temper the batch instead."""


class InitializationError(EpisynthError):
    """No starting point with finite posterior density was found."""


class SplitDesignError(ConfigurationError):
    """A node-split partition cannot identify the separator."""


class PoolingError(ConfigurationError):
    """Marginal densities cannot be pooled (for example, disjoint supports under log pooling)."""


class UndefinedPValueError(EpisynthError):
    """A conflict p-value was requested for a degenerate (zero-variance) difference sample."""
