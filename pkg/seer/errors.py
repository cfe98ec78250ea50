"""Exception hierarchy for the scheduler.

Everything the package raises on purpose derives from ``SeerError`` so the CLI
can turn it into a one-line diagnostic and a non-zero exit. Argument-shaped
failures also subclass ``ValueError``; callers that only care about "bad
input" can keep catching that.

Dropped requests are never exceptions. They are counted in the metrics.
"""


class SeerError(Exception):
    """Root of every deliberate failure raised by the package."""


class InvalidConfigError(SeerError, ValueError):
    """A configuration value is out of range or inconsistent."""


class TraceFormatError(SeerError, ValueError):
    """A trace file is malformed. ``row`` is the 1-based data row, if known."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ClusteringError(SeerError, ValueError):
    """The request features cannot support the requested cluster count."""


class UndefinedCorrelationError(SeerError, ValueError):
    """A correlation was requested on a series with zero variance."""


class InsufficientHistoryError(SeerError, ValueError):
    """Not enough past request matrices for the requested operation."""


class ShapeMismatchError(SeerError, ValueError):
    """Arrays that must agree on (E, M, N) do not."""


class TrainingDataError(SeerError, ValueError):
    """A model was asked to train on an empty or invalid sample set."""


class LPSolverError(SeerError):
    """The LP solver could not finish (iteration cap, unboundedness)."""


class LPInfeasibleError(SeerError):
    """The reduced pre-scheduling LP has no feasible point.

    ``aggregate`` names the violated aggregate (``"beta_capacity"``,
    ``"alpha_floor"``, ``"no_servers"`` or ``"server_bounds"``) and
    ``required``/``available`` carry the two sides of it.
    """

    def __init__(self, aggregate: str, required: float, available: float):
        super().__init__(
            f"pre-scheduling LP infeasible ({aggregate}): "
            f"required {required:.6g}, available {available:.6g}"
        )
        self.aggregate = aggregate
        self.required = required
        self.available = available


class SimulationError(SeerError):
    """A module error raised inside a simulation cycle, tagged with the cycle."""

    def __init__(self, cycle: int, cause: Exception):
        super().__init__(f"cycle {cycle}: {cause}")
        self.cycle = cycle
        self.cause = cause
