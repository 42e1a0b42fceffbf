"""EDMDc identification of the lifted linear model and its realizations.

The pipeline is ``fit_edmdc`` (discrete least squares in the lifted
space) -> ``to_continuous`` (matrix logarithm) -> a chain realization
(``to_companion`` or ``to_output_chain``) that the backstepping
controller runs on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, NamedTuple

import numpy as np
import scipy.linalg as sla

from .dictionary import Dictionary
from .errors import RankDeficientError, UncontrollableError

__all__ = [
    "SnapshotDataset",
    "KoopmanModel",
    "CompanionRealization",
    "ContinuousModel",
    "fit_edmdc",
    "to_continuous",
    "discretize",
    "controllability_matrix",
    "to_companion",
    "to_output_chain",
    "one_step_rmse",
]

CONTROLLABILITY_THRESHOLD = 1e-10
STRUCTURE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SnapshotDataset:
    """Uniformly sampled single-input record ``{x_k, u_k}``.

    ``states`` has ``M + 1`` rows and ``inputs`` has ``M`` entries; ``u_k``
    is applied (zero-order hold) between ``x_k`` and ``x_{k+1}``.
    """

    states: np.ndarray
    inputs: np.ndarray
    dt: float
    split_tag: str = "train"
    t0: float = 0.0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        inputs = np.asarray(self.inputs, dtype=float).reshape(-1)
        if states.ndim != 2:
            raise ValueError("states must be an (M+1, n) array")
        if len(inputs) < 1 or states.shape[0] != len(inputs) + 1:
            raise ValueError(
                f"need M+1 states for M>=1 inputs, got {states.shape[0]} states "
                f"and {len(inputs)} inputs"
            )
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.split_tag not in ("train", "validation"):
            raise ValueError(f"split_tag must be 'train' or 'validation', not {self.split_tag!r}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def M(self) -> int:
        return len(self.inputs)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.M + 1)


@dataclass(frozen=True, eq=False)
class CompanionRealization:
    """Chain realization ``w = T_c z`` used by the backstepping controller.

    The first ``order`` coordinates form an integrator chain
    ``w_i' = w_{i+1}`` (``i < order``) with the input entering only
    coordinate ``order`` through ``b_last``.  With ``order == N`` this is
    the controllable canonical (companion) form; with ``order < N`` the
    remaining coordinates are internal states whose only role is to feed
    the last chain row.
    """

    T_c: np.ndarray
    A_bar: np.ndarray
    B_bar: np.ndarray
    b_last: float
    order: int
    kind: str = "companion"
    input_leak: float = 0.0
    T_c_inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        T = np.asarray(self.T_c, dtype=float)
        object.__setattr__(self, "T_c", T)
        object.__setattr__(self, "A_bar", np.asarray(self.A_bar, dtype=float))
        object.__setattr__(self, "B_bar", np.asarray(self.B_bar, dtype=float).reshape(-1, 1))
        if self.T_c_inv is None:
            object.__setattr__(self, "T_c_inv", np.linalg.inv(T))
        if self.b_last == 0:
            raise ValueError("input gain b_last must be nonzero")

    @property
    def N(self) -> int:
        return self.T_c.shape[0]

    @property
    def feedforward(self) -> np.ndarray:
        """Last chain row of ``A_bar``: the drift entering with the input."""
        return self.A_bar[self.order - 1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "order": self.order,
            "T_c": self.T_c.tolist(),
            "A_bar": self.A_bar.tolist(),
            "B_bar": self.B_bar.ravel().tolist(),
            "b_last": float(self.b_last),
            "input_leak": float(self.input_leak),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CompanionRealization":
        return cls(
            T_c=np.asarray(doc["T_c"], dtype=float),
            A_bar=np.asarray(doc["A_bar"], dtype=float),
            B_bar=np.asarray(doc["B_bar"], dtype=float),
            b_last=float(doc["b_last"]),
            order=int(doc["order"]),
            kind=doc.get("kind", "companion"),
            input_leak=float(doc.get("input_leak", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class KoopmanModel:
    """Learned lifted dynamics ``z' = A z + B u + Delta`` with its error bound."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    A_d: np.ndarray
    B_d: np.ndarray
    dt: float
    dictionary: Dictionary
    delta0: float = 0.0
    delta1: float = 0.0
    conversion_path: str = "logm"
    realization: CompanionRealization | None = None

    def __post_init__(self):
        for name in ("A", "A_d", "C"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("B", "B_d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1, 1))
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("continuous-time model matrices must be finite")
        if self.delta0 < 0 or self.delta1 < 0:
            raise ValueError("uncertainty bound coefficients must be nonnegative")

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def with_bound(self, delta0: float, delta1: float) -> "KoopmanModel":
        return replace(self, delta0=float(delta0), delta1=float(delta1))

    def with_realization(self, realization: CompanionRealization) -> "KoopmanModel":
        return replace(self, realization=realization)

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "A_d": self.A_d.tolist(),
            "B_d": self.B_d.tolist(),
            "dt": self.dt,
            "delta0": float(self.delta0),
            "delta1": float(self.delta1),
            "dictionary": self.dictionary.to_dict(),
            "conversion_path": self.conversion_path,
        }
        if self.realization is not None:
            doc["realization"] = self.realization.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "KoopmanModel":
        real = doc.get("realization")
        return cls(
            A=np.asarray(doc["A"], dtype=float),
            B=np.asarray(doc["B"], dtype=float),
            C=np.asarray(doc["C"], dtype=float),
            A_d=np.asarray(doc["A_d"], dtype=float),
            B_d=np.asarray(doc["B_d"], dtype=float),
            dt=float(doc["dt"]),
            dictionary=Dictionary.from_dict(doc["dictionary"]),
            delta0=float(doc.get("delta0", 0.0)),
            delta1=float(doc.get("delta1", 0.0)),
            conversion_path=doc.get("conversion_path", "logm"),
            realization=None if real is None else CompanionRealization.from_dict(real),
        )


def fit_edmdc(train: SnapshotDataset, dictionary: Dictionary, ridge: float = 1e-8):
    """Regularized EDMDc least squares.

    Minimizes ``sum_k ||Psi(x_{k+1}) - A_d Psi(x_k) - B_d u_k||^2 +
    ridge * (||A_d||_F^2 + ||B_d||_F^2)`` by solving the ridge-augmented
    stacked regressor with an orthogonal (SVD based) least-squares solve.

    Returns
    -------
    A_d : (N, N) ndarray
    B_d : (N, 1) ndarray
    C : (n, N) ndarray
        ``[I_n | 0]`` with an identity-prefixed dictionary, otherwise the
        least-squares reconstruction ``x_k ~ C Psi(x_k)``.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    N = dictionary.N
    if train.M < N + 1:
        raise ValueError(f"need at least N+1={N + 1} snapshot pairs, got {train.M}")
    Z = dictionary.lift(train.states)
    X, Y = Z[:-1], Z[1:]
    R = np.hstack([X, train.inputs[:, None]])
    p = R.shape[1]
    if ridge == 0:
        rank = np.linalg.matrix_rank(R)
        if rank < p:
            raise RankDeficientError(rank, p)
        G, *_ = np.linalg.lstsq(R, Y, rcond=None)
    else:
        Ra = np.vstack([R, np.sqrt(ridge) * np.eye(p)])
        Ya = np.vstack([Y, np.zeros((p, N))])
        G, *_ = np.linalg.lstsq(Ra, Ya, rcond=None)
    G = G.T
    A_d, B_d = G[:, :N], G[:, N:]
    if dictionary.includes_identity:
        C = dictionary.output_matrix()
    else:
        Ct, *_ = np.linalg.lstsq(Z, train.states, rcond=None)
        C = Ct.T
    return A_d, B_d, C


class ContinuousModel(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    path: str


def _log_undefined(A_d: np.ndarray) -> bool:
    ev = np.linalg.eigvals(A_d)
    scale = max(1.0, float(np.max(np.abs(ev)))) if ev.size else 1.0
    on_neg_axis = (np.abs(ev.imag) <= 1e-12 * scale) & (ev.real <= 0)
    return bool(np.any(on_neg_axis))


def to_continuous(A_d, B_d, dt: float) -> ContinuousModel:
    """Convert a discrete model to continuous time.

    The primary path takes the principal matrix logarithm
    ``A = logm(A_d) / dt`` and inverts the zero-order hold exactly,
    ``B = W^{-1} B_d`` with ``W = int_0^dt expm(A s) ds`` (equal to
    ``A (A_d - I)^{-1} B_d`` whenever that inverse exists).  When the
    logarithm is undefined (eigenvalue on the closed negative real axis)
    or ``A_d - I`` is singular, the first-order rule
    ``A = (A_d - I)/dt, B = B_d/dt`` is used and a warning is issued.
    """
    if not (dt > 0):
        raise ValueError("dt must be positive")
    A_d = np.asarray(A_d, dtype=float)
    B_d = np.asarray(B_d, dtype=float).reshape(A_d.shape[0], -1)
    N = A_d.shape[0]
    I = np.eye(N)
    singular = np.linalg.cond(A_d - I) > 1e12
    fallback = singular or _log_undefined(A_d)
    A = None
    if not fallback:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            L = sla.logm(A_d)
        L = np.asarray(L)
        if np.iscomplexobj(L):
            if np.max(np.abs(L.imag)) > 1e-10 * max(1.0, np.max(np.abs(L.real))):
                fallback = True
            L = L.real
        if not np.all(np.isfinite(L)):
            fallback = True
        A = L / dt
    if fallback:
        warnings.warn(
            "matrix logarithm unavailable for A_d; using first-order conversion",
            RuntimeWarning,
            stacklevel=2,
        )
        return ContinuousModel((A_d - I) / dt, B_d / dt, "first_order")
    blk = np.zeros((2 * N, 2 * N))
    blk[:N, :N] = A * dt
    blk[:N, N:] = I * dt
    W = sla.expm(blk)[:N, N:]
    B = np.linalg.solve(W, B_d)
    return ContinuousModel(A, B, "logm")


def discretize(A, B, dt: float):
    """Zero-order-hold discretization via the block matrix exponential."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    N, m = B.shape
    blk = np.zeros((N + m, N + m))
    blk[:N, :N] = A
    blk[:N, N:] = B
    E = sla.expm(blk * dt)
    return E[:N, :N], E[:N, N:]


def controllability_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float).reshape(-1)
    cols = [b]
    for _ in range(A.shape[0] - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def _clean_chain(A_bar: np.ndarray, order: int) -> np.ndarray:
    A_bar = A_bar.copy()
    N = A_bar.shape[0]
    for i in range(order - 1):
        A_bar[i] = 0.0
        A_bar[i, i + 1] = 1.0
    return A_bar


def to_companion(A, B) -> CompanionRealization:
    """Controllable canonical form with the input entering the last state.

    ``T_c`` has rows ``t, tA, ..., tA^{N-1}`` where ``t`` is the last row of
    the inverse controllability matrix.

    Raises
    ------
    UncontrollableError
        If ``sigma_min / sigma_max`` of ``[B, AB, ..., A^{N-1}B]`` is below
        1e-10, or the transform is too ill-conditioned to reproduce the
        companion structure.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float).reshape(-1)
    N = A.shape[0]
    Wc = controllability_matrix(A, b)
    s = np.linalg.svd(Wc, compute_uv=False)
    ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    rank = int(np.sum(s > CONTROLLABILITY_THRESHOLD * s[0])) if s[0] > 0 else 0
    if ratio < CONTROLLABILITY_THRESHOLD:
        raise UncontrollableError(rank, ratio)
    eN = np.zeros(N)
    eN[-1] = 1.0
    t = np.linalg.solve(Wc.T, eN)
    rows = [t]
    for _ in range(N - 1):
        rows.append(rows[-1] @ A)
    T = np.vstack(rows)
    T_inv = np.linalg.inv(T)
    raw = T @ A @ T_inv
    A_bar = _clean_chain(raw, N)
    b_bar = T @ b
    scale = max(np.linalg.norm(A, "fro"), 1e-300)
    if np.linalg.norm(raw - A_bar, "fro") > STRUCTURE_TOL * scale:
        raise UncontrollableError(
            rank, ratio,
            f"companion transform too ill-conditioned (cond(T_c) = {np.linalg.cond(T):.2e})",
        )
    leak = float(np.max(np.abs(b_bar[:-1]))) if N > 1 else 0.0
    B_bar = np.zeros(N)
    B_bar[-1] = b_bar[-1]
    return CompanionRealization(
        T_c=T, A_bar=A_bar, B_bar=B_bar, b_last=float(b_bar[-1]), order=N,
        kind="companion", input_leak=leak, T_c_inv=T_inv,
    )


def to_output_chain(A, B, c, tol: float = 1e-3) -> CompanionRealization:
    """Relative-degree normal form for the output ``y = c z``.

    Chain coordinates are ``w_i = c A^{i-1} z`` for ``i = 1..r`` where ``r``
    is the first index with ``|c A^{r-1} B| > tol * ||c A^{r-1}|| ||B||``.
    Input gains below that threshold in earlier rows are dropped (recorded
    as ``input_leak``) and left to the lumped uncertainty.  The remaining
    ``N - r`` coordinates are an orthonormal basis of the complement of the
    chain rows.  For ``r == N`` the result is the companion form of the
    output-defined chain.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float).reshape(-1)
    c = np.asarray(c, dtype=float).reshape(-1)
    N = A.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        raise UncontrollableError(0, 0.0, "input matrix B is zero")
    rows = [c]
    leak = 0.0
    while True:
        g = float(rows[-1] @ b)
        if abs(g) > tol * np.linalg.norm(rows[-1]) * bnorm:
            break
        leak = max(leak, abs(g))
        if len(rows) == N:
            raise UncontrollableError(
                N, 0.0, "output has no finite relative degree within the lifted dimension",
            )
        rows.append(rows[-1] @ A)
    r = len(rows)
    chain = np.vstack(rows)
    if r < N:
        comp = sla.null_space(chain).T
        T = np.vstack([chain, comp])
    else:
        T = chain
    if np.linalg.matrix_rank(T) < N:
        raise UncontrollableError(int(np.linalg.matrix_rank(chain)), 0.0,
                                  "output chain rows are linearly dependent")
    T_inv = np.linalg.inv(T)
    A_bar = _clean_chain(T @ A @ T_inv, r)
    b_bar = T @ b
    b_bar[: r - 1] = 0.0
    return CompanionRealization(
        T_c=T, A_bar=A_bar, B_bar=b_bar, b_last=float(b_bar[r - 1]), order=r,
        kind="output_chain", input_leak=leak, T_c_inv=T_inv,
    )


def one_step_rmse(A_d, B_d, dataset: SnapshotDataset, dictionary: Dictionary) -> float:
    """Root-mean-square one-step prediction error in the lifted space."""
    Z = dictionary.lift(dataset.states)
    pred = Z[:-1] @ np.asarray(A_d).T + np.outer(dataset.inputs, np.asarray(B_d).reshape(-1))
    return float(np.sqrt(np.mean(np.sum((Z[1:] - pred) ** 2, axis=1))))
