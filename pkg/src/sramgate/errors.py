"""Exception hierarchy shared by both stages.

The CLI maps these onto exit codes: validation problems exit 1,
infeasible configurations exit 2, anything else exits 3.
"""


class SramgateError(Exception):
    """Base class for all package errors."""


class ValidationError(SramgateError, ValueError):
    """Malformed input or a violated invariant in a spec/config/table."""


class InfeasibleError(SramgateError):
    """A configuration that cannot execute, e.g. no capacity on the sizing grid works."""


class CapacityError(InfeasibleError):
    """A single allocation is larger than the memory it targets."""


class DeadlockError(InfeasibleError):
    """The simulator has no runnable sub-op and nothing in flight.

    Working sets that can never fit raise :class:`CapacityError` first, so
    this points at a plan whose array queues contradict its dependencies.
    It is still reported as an infeasible run.
    """
