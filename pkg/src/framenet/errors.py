"""Exception hierarchy shared by all modules.

The CLI maps :class:`InputError` (and its subclasses) to exit code 1 and
every other :class:`FrameNetError` to exit code 2.
"""


class FrameNetError(Exception):
    """Base class for all package errors."""


class InputError(FrameNetError, ValueError):
    """Invalid user input: wrong shapes, out-of-range parameters, bad config."""


class DegenerateFrameError(FrameNetError):
    """The frame operator is numerically singular."""


class InfeasibleBudgetError(FrameNetError):
    """A construction would need an error budget below machine precision."""


class UnsupportedError(FrameNetError):
    """A requested variant is deliberately not implemented."""


class SolverError(FrameNetError):
    """An iterative solver failed to converge."""


class TrainingError(FrameNetError):
    """Risk minimization diverged."""


class GenerationError(FrameNetError):
    """Dataset generation failed for a specific sample."""
