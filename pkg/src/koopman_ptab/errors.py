"""Exception types shared across the package."""

from __future__ import annotations


class KoopmanPTABError(Exception):
    """Base class for library errors."""


class RankDeficientError(KoopmanPTABError, ValueError):
    """Raised when the EDMDc regressor is rank deficient and no ridge is set."""

    def __init__(self, rank: int, size: int):
        self.rank = rank
        self.size = size
        super().__init__(
            f"EDMDc regressor has rank {rank} < {size}; "
            "add a ridge penalty or a richer excitation"
        )


class UncontrollableError(KoopmanPTABError, ValueError):
    """Raised when (A, B) cannot be brought into a chain realization."""

    def __init__(self, rank: int, sv_ratio: float, detail: str = ""):
        self.rank = rank
        self.sv_ratio = sv_ratio
        msg = (
            f"lifted pair (A, B) is numerically uncontrollable: rank {rank}, "
            f"sigma_min/sigma_max = {sv_ratio:.3e}. Shrink the dictionary or "
            "use the output-chain realization."
        )
        if detail:
            msg += " " + detail
        super().__init__(msg)


class NonFiniteError(KoopmanPTABError, FloatingPointError):
    """Raised when a computation produces NaN or Inf.

    ``stage`` names the offending computation (e.g. a backstepping stage
    index) and ``step`` the integration step, when known.  ``record`` may
    carry a partial trajectory up to the failure.
    """

    def __init__(self, message: str, stage=None, step=None, record=None):
        self.stage = stage
        self.step = step
        self.record = record
        super().__init__(message)


class TrajectoryEscapeError(KoopmanPTABError):
    """Raised when a simulated state leaves the configured escape radius."""

    def __init__(self, step: int, t: float, norm: float, radius: float, record=None):
        self.step = step
        self.t = t
        self.norm = norm
        self.radius = radius
        self.record = record
        super().__init__(
            f"trajectory escaped at step {step} (t={t:.4g}): ||x|| = {norm:.4g} > {radius:g}"
        )


class DataFormatError(KoopmanPTABError, ValueError):
    """Raised when an input file cannot be parsed; ``line`` is 1-based."""

    def __init__(self, path, line: int | None, detail: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}, line {line}" if line is not None else self.path
        super().__init__(f"{where}: {detail}")
