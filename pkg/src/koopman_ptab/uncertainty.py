"""Lumped model-error residuals and the linear bound ``||Delta|| <= d0 + d1 ||z||``."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .sysid import KoopmanModel, SnapshotDataset

__all__ = [
    "ResidualSample",
    "ResidualSet",
    "compute_residuals",
    "fit_bound",
    "bound_objective",
    "upper_hull",
    "write_residuals_csv",
]

FEAS_SLACK = 1e-12


class ResidualSample(NamedTuple):
    norm_delta: float
    norm_z: float


@dataclass(frozen=True, eq=False)
class ResidualSet:
    """Per-snapshot residual norms, ``norm_delta[k]`` against ``norm_z[k]``."""

    norm_z: np.ndarray
    norm_delta: np.ndarray

    def __post_init__(self):
        nz = np.asarray(self.norm_z, dtype=float).reshape(-1)
        nd = np.asarray(self.norm_delta, dtype=float).reshape(-1)
        if nz.shape != nd.shape:
            raise ValueError("norm_z and norm_delta must have equal length")
        if not (np.all(np.isfinite(nz)) and np.all(np.isfinite(nd))):
            raise ValueError("residual norms must be finite")
        if np.any(nz < 0) or np.any(nd < 0):
            raise ValueError("residual norms must be nonnegative")
        object.__setattr__(self, "norm_z", nz)
        object.__setattr__(self, "norm_delta", nd)

    def __len__(self):
        return len(self.norm_z)

    def __iter__(self):
        for d, z in zip(self.norm_delta, self.norm_z):
            yield ResidualSample(float(d), float(z))

    @classmethod
    def from_samples(cls, samples: Iterable) -> "ResidualSet":
        pairs = [(float(s[0]), float(s[1])) for s in samples]
        if not pairs:
            return cls(np.zeros(0), np.zeros(0))
        d, z = zip(*pairs)
        return cls(norm_z=np.array(z), norm_delta=np.array(d))


def compute_residuals(model: KoopmanModel, val: SnapshotDataset, return_vectors: bool = False):
    """One-step residuals ``(Psi(x_{k+1}) - Psi(x_k))/dt - (A Psi(x_k) + B u_k)``.

    Uses the continuous-time ``(A, B)`` of ``model``.  With
    ``return_vectors`` the raw ``(M, N)`` residual array is returned as well.
    """
    if abs(val.dt - model.dt) > 1e-12 * model.dt:
        raise ValueError(f"validation dt={val.dt} does not match model dt={model.dt}")
    Z = model.dictionary.lift(val.states)
    dz = (Z[1:] - Z[:-1]) / val.dt
    delta = dz - (Z[:-1] @ model.A.T + np.outer(val.inputs, model.B.ravel()))
    rs = ResidualSet(norm_z=np.linalg.norm(Z[:-1], axis=1), norm_delta=np.linalg.norm(delta, axis=1))
    return (rs, delta) if return_vectors else rs


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, ResidualSet):
        return samples.norm_z, samples.norm_delta
    rs = ResidualSet.from_samples(samples)
    return rs.norm_z, rs.norm_delta


def upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper concave hull of points ``(x_k, y_k)``, left to right.

    A line lies on or above every point iff it lies on or above every hull
    vertex, so constraints off the hull are redundant for the bound fit.
    """
    order = np.lexsort((-y, x))
    hull: list[int] = []
    last_x = None
    for i in order:
        if last_x is not None and x[i] == last_x:
            continue  # same abscissa, lower ordinate: dominated
        last_x = x[i]
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(int(i))
    return np.array(hull, dtype=int)


def bound_objective(delta0: float, delta1: float, kappa: float) -> float:
    return float(delta0 + kappa * delta1)


def _candidates(nz: np.ndarray, nd: np.ndarray, pairs: str = "all") -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return _vertex_candidates(nz, nd, pairs)


def _vertex_candidates(nz, nd, pairs):
    cands = [np.zeros((1, 2))]
    cands.append(np.column_stack([nd, np.zeros_like(nd)]))
    pos = nz > 0
    cands.append(np.column_stack([np.zeros(pos.sum()), nd[pos] / nz[pos]]))
    if len(nz) >= 2:
        if pairs == "all":
            i, j = np.triu_indices(len(nz), k=1)
        else:
            i = np.arange(len(nz) - 1)
            j = i + 1
        dn = nz[i] - nz[j]
        ok = dn != 0
        d1 = (nd[i][ok] - nd[j][ok]) / dn[ok]
        d0 = nd[i][ok] - d1 * nz[i][ok]
        cands.append(np.column_stack([d0, d1]))
    C = np.vstack(cands)
    C = C[np.all(np.isfinite(C), axis=1)]
    return C[(C[:, 0] >= 0) & (C[:, 1] >= 0)]


def fit_bound(samples, kappa: float | None = None, max_all_pairs: int = 400):
    """Conservative linear bound on the residual norms.

    Solves ``min d0 + kappa * d1`` subject to ``norm_delta_k <= d0 + d1 *
    norm_z_k`` and ``d0, d1 >= 0`` exactly, by enumerating the vertices of
    the two-variable feasible region: all pairwise constraint intersections
    and axis intercepts, each checked for feasibility.  Constraints strictly
    below the upper concave hull of the samples are redundant and are
    removed first; beyond ``max_all_pairs`` hull vertices only adjacent
    hull pairs are intersected, which are the only pairs that can be
    vertices of the feasible region.

    Parameters
    ----------
    samples : ResidualSet or iterable of (norm_delta, norm_z)
    kappa : float, optional
        Weight on ``d1``; defaults to the mean of ``norm_z``.

    Returns
    -------
    (delta0, delta1)
    """
    nz, nd = _as_arrays(samples)
    if len(nz) == 0:
        raise ValueError("fit_bound needs at least one residual sample")
    if kappa is None:
        kappa = float(np.mean(nz))
    if np.all(nd == 0):
        return 0.0, 0.0
    h = upper_hull(nz, nd)
    hz, hd = nz[h], nd[h]
    cands = _candidates(hz, hd, "all" if len(h) <= max_all_pairs else "adjacent")
    scale = max(1.0, float(np.max(nd)))
    # a huge slope overflows to an infinite bound: feasible, never optimal
    with np.errstate(over="ignore"):
        viol = hd[None, :] - (cands[:, :1] + cands[:, 1:] * hz[None, :])
        feasible = np.all(viol <= FEAS_SLACK * scale, axis=1)
        cands = cands[feasible]
        obj = cands[:, 0] + kappa * cands[:, 1]
    best = np.flatnonzero(obj <= obj.min() + 1e-14 * max(1.0, abs(obj.min())))
    # ties: prefer the smaller slope, then the smaller offset
    pick = best[np.lexsort((cands[best, 0], cands[best, 1]))[0]]
    d0, d1 = float(cands[pick, 0]), float(cands[pick, 1])
    # absorb round-off so every constraint holds without tolerance
    gap = float(np.max(nd - (d0 + d1 * nz)))
    if gap > 0:
        d0 += gap
    return d0, d1


def write_residuals_csv(path, residuals: ResidualSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "norm_z", "norm_delta"])
        for k, (z, d) in enumerate(zip(residuals.norm_z, residuals.norm_delta)):
            w.writerow([k, repr(float(z)), repr(float(d))])
