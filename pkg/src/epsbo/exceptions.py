"""Error types raised by the library.

Invalid arguments raise the builtin ``ValueError``; the classes below cover
failures that happen after validation succeeded.
"""


class EpsboError(Exception):
    """Base class for library failures."""


class ModelFitError(EpsboError):
    """A covariance matrix could not be factorized even after jitter escalation."""


class OptimizerError(EpsboError):
    """The inner optimizer hit a non-finite value or failed to run."""


class ObjectiveError(EpsboError):
    """An objective evaluation failed (bad value, dead subprocess, timeout)."""


class ProposalError(EpsboError):
    """A proposal could not be separated from the existing observations."""
