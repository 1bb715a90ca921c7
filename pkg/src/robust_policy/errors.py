"""Exceptions raised by the robust-policy library."""


class RobustPolicyError(Exception):
    """Base class for all library errors."""


class DatasetError(RobustPolicyError):
    """Malformed, mis-shaped or out-of-schema observational data."""


class ModelFitError(RobustPolicyError):
    """A generative or propensity model could not be fitted."""


class NotFittedError(RobustPolicyError):
    """A model was used before it was fitted."""


class ReducerError(RobustPolicyError):
    """Dimension reduction is not possible for the given covariates."""
