"""Closed-loop trajectory records and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError
from .sysid import SnapshotDataset

__all__ = [
    "TrajectoryRecord",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass(eq=False)
class TrajectoryRecord:
    """Time series of one closed-loop run sampled at the control rate.

    ``e`` holds the chain error coordinates (length ``r``), ``w`` the full
    chain-coordinate lifted state, and ``alpha_grad[k]`` the gradients of
    the virtual controls with respect to ``w`` at step ``k``.
    """

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    e: np.ndarray
    u: np.ndarray
    theta_hat: np.ndarray
    V: np.ndarray
    rho: np.ndarray
    clamped: np.ndarray
    phi: np.ndarray
    alpha_grad: np.ndarray
    theta_true: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dt: float = 0.0
    tag: str = ""
    failure: str | None = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def clamped_from(self) -> float | None:
        idx = np.flatnonzero(self.clamped)
        return float(self.times[idx[0]]) if idx.size else None

    @property
    def e_norm(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=1)

    @property
    def x_norm(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def maxima(self) -> dict[str, float]:
        return {
            "max_abs_u": float(np.max(np.abs(self.u))) if len(self) else 0.0,
            "max_theta_hat_norm": float(np.max(np.linalg.norm(self.theta_hat, axis=1))) if len(self) else 0.0,
            "max_x_norm": float(np.max(self.x_norm)) if len(self) else 0.0,
        }

    def truncated(self, stop: int) -> "TrajectoryRecord":
        keys = ("times", "x", "z", "w", "e", "u", "theta_hat", "V", "rho", "clamped", "phi", "alpha_grad")
        kw = {k: getattr(self, k)[:stop] for k in keys}
        return TrajectoryRecord(**kw, theta_true=self.theta_true, dt=self.dt, tag=self.tag,
                                failure=self.failure)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path, rec: TrajectoryRecord) -> None:
    """Header ``t, x1..xn, u, e_norm, V, theta_hat_1..p, clamped``."""
    n = rec.x.shape[1]
    p = rec.theta_hat.shape[1]
    header = ["t", *[f"x{i + 1}" for i in range(n)], "u", "e_norm", "V",
              *[f"theta_hat_{j + 1}" for j in range(p)], "clamped"]
    en = rec.e_norm
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for k in range(len(rec)):
            wr.writerow([_fmt(rec.times[k]), *map(_fmt, rec.x[k]), _fmt(rec.u[k]), _fmt(en[k]),
                         _fmt(rec.V[k]), *map(_fmt, rec.theta_hat[k]), int(bool(rec.clamped[k]))])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Load a trajectory CSV into column arrays keyed by header name."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [list(map(float, r)) for r in rd if r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def write_dataset_csv(path, data: SnapshotDataset) -> None:
    """Header ``t, x1..xn, u``; the final state row has an empty ``u``."""
    header = ["t", *[f"x{i + 1}" for i in range(data.n)], "u"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for k in range(data.M + 1):
            u = _fmt(data.inputs[k]) if k < data.M else ""
            wr.writerow([_fmt(data.t0 + k * data.dt), *map(_fmt, data.states[k]), u])


def read_dataset_csv(path, split_tag: str = "train", dt: float | None = None) -> SnapshotDataset:
    """Parse a dataset CSV; malformed content raises :class:`DataFormatError`.

    ``dt`` (e.g. from the manifest) overrides the step inferred from the
    time column, which is still checked for uniform sampling.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot open dataset: {exc.strerror}") from None
    with fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if not header or header[0] != "t" or header[-1] != "u" or len(header) < 3:
            raise DataFormatError(path, 1, "expected header 't, x1..xn, u'")
        n = len(header) - 2
        times, states, inputs = [], [], []
        for row in rd:
            line = rd.line_num
            if not row:
                continue
            if len(row) != n + 2:
                raise DataFormatError(path, line, f"expected {n + 2} fields, found {len(row)}")
            try:
                vals = [float(v) for v in row[:-1]]
                u = float(row[-1]) if row[-1].strip() else None
            except ValueError as exc:
                raise DataFormatError(path, line, f"non-numeric field ({exc})") from None
            if not all(np.isfinite(vals)) or (u is not None and not np.isfinite(u)):
                raise DataFormatError(path, line, "non-finite value")
            if len(inputs) < len(states):
                raise DataFormatError(path, line, "only the final row may omit u")
            times.append(vals[0])
            states.append(vals[1:])
            if u is not None:
                inputs.append(u)
    if len(states) < 2:
        raise DataFormatError(path, None, "dataset needs at least two state rows")
    if len(inputs) == len(states):
        inputs = inputs[:-1]
    if len(inputs) != len(states) - 1:
        raise DataFormatError(path, None, "only the final row may omit u")
    dts = np.diff(times)
    step = float(np.mean(dts)) if dt is None else float(dt)
    if not (step > 0) or np.max(np.abs(dts - step)) > 1e-6 * step:
        raise DataFormatError(path, None, "time column is not uniformly sampled")
    return SnapshotDataset(np.array(states), np.array(inputs), step, split_tag, times[0])
