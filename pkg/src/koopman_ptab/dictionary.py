"""Observable dictionaries that lift plant states into the Koopman space.

A dictionary stacks scalar observables ``psi_i(x)`` into ``z = Psi(x)``.
Supported building blocks are the identity observables (``x`` itself),
Gaussian radial basis functions ``exp(-||x - c||^2 / sigma^2)`` and
monomials.  Identity observables, when present, always come first so the
output map is an exact selector ``C = [I_n | 0]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "Dictionary",
    "build_dictionary",
    "farthest_point_sampling",
    "lift",
    "lift_jacobian",
]

KINDS = ("identity", "gaussian-rbf", "polynomial", "composite")


def _monomial_exponents(n: int, min_degree: int, max_degree: int) -> np.ndarray:
    exps = []
    for deg in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            e = np.zeros(n, dtype=int)
            for j in combo:
                e[j] += 1
            exps.append(e)
    return np.array(exps, dtype=int).reshape(-1, n)


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Immutable observable map ``Psi: R^n -> R^N``.

    Observables are ordered as ``[identity | RBFs | monomials]``; any block
    may be empty.
    """

    kind: str
    n: int
    includes_identity: bool = True
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degree: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dictionary kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise ValueError("state dimension n must be >= 1")
        centers = np.asarray(self.centers, dtype=float).reshape(-1, self.n)
        widths = np.asarray(self.widths, dtype=float).reshape(-1)
        if centers.shape[0] != widths.shape[0]:
            raise ValueError(
                f"{centers.shape[0]} RBF centers but {widths.shape[0]} widths"
            )
        if np.any(~(widths > 0)) or not np.all(np.isfinite(widths)):
            raise ValueError("RBF widths must be finite and strictly positive")
        if not np.all(np.isfinite(centers)):
            raise ValueError("RBF centers must be finite")
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)
        min_deg = 2 if self.includes_identity else 1
        exps = _monomial_exponents(self.n, min_deg, self.degree) if self.degree >= min_deg \
            else np.zeros((0, self.n), dtype=int)
        exps.setflags(write=False)
        object.__setattr__(self, "_exponents", exps)
        if self.N < 1:
            raise ValueError("dictionary has no observables")

    @property
    def n_rbf(self) -> int:
        return self.centers.shape[0]

    @property
    def exponents(self) -> np.ndarray:
        return self._exponents

    @property
    def N(self) -> int:
        return (self.n if self.includes_identity else 0) + self.n_rbf + len(self._exponents)

    def output_matrix(self) -> np.ndarray:
        """Selector ``C = [I_n | 0]``; only defined with the identity prefix."""
        if not self.includes_identity:
            raise ValueError("output matrix is only exact with an identity prefix")
        C = np.zeros((self.n, self.N))
        C[:, : self.n] = np.eye(self.n)
        return C

    def __call__(self, x) -> np.ndarray:
        return lift(self, x)

    def lift(self, x) -> np.ndarray:
        return lift(self, x)

    def lift_jacobian(self, x) -> np.ndarray:
        return lift_jacobian(self, x)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "n": self.n,
            "N": self.N,
            "includes_identity": self.includes_identity,
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "degree": self.degree,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Dictionary":
        n = int(doc["n"])
        d = cls(
            kind=doc["kind"],
            n=n,
            includes_identity=bool(doc.get("includes_identity", True)),
            centers=np.asarray(doc.get("centers", []), dtype=float).reshape(-1, n),
            widths=np.asarray(doc.get("widths", []), dtype=float),
            degree=int(doc.get("degree", 0)),
        )
        if "N" in doc and int(doc["N"]) != d.N:
            raise ValueError(f"dictionary document declares N={doc['N']} but encodes N={d.N}")
        return d


def farthest_point_sampling(points: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Greedy farthest-point selection of ``k`` rows of ``points``.

    The first point is drawn with ``numpy.random.default_rng(seed)``; every
    later pick maximizes the distance to the already chosen set (ties go
    to the lowest index), so the result is deterministic given the seed.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("farthest-point sampling needs a nonempty (M, n) array")
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(points.shape[0]))]
    dist = np.linalg.norm(points - points[idx[0]], axis=1)
    for _ in range(k - 1):
        i = int(np.argmax(dist))
        if dist[i] == 0.0:
            raise ValueError(f"dataset has fewer than {k} distinct states for RBF centers")
        idx.append(i)
        dist = np.minimum(dist, np.linalg.norm(points - points[i], axis=1))
    return points[idx].copy()


def _median_width(centers: np.ndarray, data: np.ndarray | None) -> float:
    if centers.shape[0] >= 2:
        return float(np.median(pdist(centers)))
    # one center: fall back to the RMS distance of the data from it
    if data is None or len(data) == 0:
        return 1.0
    r = float(np.sqrt(np.mean(np.sum((data - centers[0]) ** 2, axis=1))))
    return r if r > 0 else 1.0


def build_dictionary(spec: Mapping[str, Any], data=None) -> Dictionary:
    """Construct a dictionary from a declarative spec.

    Parameters
    ----------
    spec : mapping
        Keys: ``kind`` (identity | gaussian-rbf | polynomial | composite),
        ``n`` (state dimension), ``N`` (total lifted dimension, optional for
        identity/polynomial), ``includes_identity`` (default True),
        ``centers``/``widths`` (optional explicit RBF parameters),
        ``n_rbf`` (composite only), ``degree`` (polynomial/composite) and
        ``seed`` for farthest-point sampling.
    data : SnapshotDataset or array_like, optional
        States used to place RBF centers when none are given.

    Returns
    -------
    Dictionary
    """
    kind = spec.get("kind", "gaussian-rbf")
    includes_identity = bool(spec.get("includes_identity", True))
    if kind == "identity":
        includes_identity = True
    if data is not None and hasattr(data, "states"):
        data = data.states
    states = None if data is None else np.asarray(data, dtype=float)
    if "n" in spec:
        n = int(spec["n"])
    elif states is not None and states.ndim == 2:
        n = states.shape[1]
    else:
        raise ValueError("dictionary spec needs 'n' when no dataset is given")
    if states is not None and states.size and states.shape[1] != n:
        raise ValueError(f"dataset states have dimension {states.shape[1]}, spec says n={n}")

    degree = int(spec.get("degree", 2 if kind == "polynomial" else 0)) \
        if kind in ("polynomial", "composite") else 0
    n_id = n if includes_identity else 0
    min_deg = 2 if includes_identity else 1
    n_mono = len(_monomial_exponents(n, min_deg, degree)) if degree >= min_deg else 0

    N = spec.get("N")
    if N is not None:
        N = int(N)
        if N < 1:
            raise ValueError("requested N must be >= 1")
        if includes_identity and N < n:
            raise ValueError(f"requested N={N} < n={n} with includes_identity")

    if kind in ("identity", "polynomial"):
        n_rbf = 0
    elif kind == "gaussian-rbf":
        if spec.get("centers") is not None:
            n_rbf = len(spec["centers"])
        elif N is not None:
            n_rbf = N - n_id
        else:
            n_rbf = int(spec.get("n_rbf", 10))
    else:
        if spec.get("centers") is not None:
            n_rbf = len(spec["centers"])
        elif "n_rbf" in spec:
            n_rbf = int(spec["n_rbf"])
        elif N is not None:
            n_rbf = N - n_id - n_mono
        else:
            n_rbf = 0
    if n_rbf < 0:
        raise ValueError(f"requested N={N} leaves no room for the {n_id + n_mono} fixed observables")

    centers = np.zeros((0, n))
    widths = np.zeros(0)
    if n_rbf:
        if spec.get("centers") is not None:
            centers = np.asarray(spec["centers"], dtype=float).reshape(-1, n)
        else:
            if states is None or states.size == 0:
                raise ValueError("RBF centers must be learned but the dataset is empty")
            centers = farthest_point_sampling(states, n_rbf, seed=int(spec.get("seed", 0)))
        if spec.get("widths") is not None:
            widths = np.broadcast_to(np.asarray(spec["widths"], dtype=float), (n_rbf,)).copy()
        else:
            widths = np.full(n_rbf, _median_width(centers, states))

    d = Dictionary(kind=kind, n=n, includes_identity=includes_identity,
                   centers=centers, widths=widths, degree=degree)
    if N is not None and d.N != N:
        raise ValueError(f"spec asks for N={N} but the observable blocks give N={d.N}")
    return d


def _as_batch(dictionary: Dictionary, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != dictionary.n:
        raise ValueError(f"expected state(s) of dimension {dictionary.n}, got shape {x.shape}")
    return X, single


def lift(dictionary: Dictionary, x) -> np.ndarray:
    """Evaluate ``Psi`` at one state ``(n,)`` or a batch ``(M, n)``."""
    X, single = _as_batch(dictionary, x)
    blocks = []
    if dictionary.includes_identity:
        blocks.append(X)
    if dictionary.n_rbf:
        sq = np.sum((X[:, None, :] - dictionary.centers[None, :, :]) ** 2, axis=2)
        blocks.append(np.exp(-sq / dictionary.widths**2))
    if len(dictionary.exponents):
        blocks.append(np.prod(X[:, None, :] ** dictionary.exponents[None, :, :], axis=2))
    Z = np.hstack(blocks)
    return Z[0] if single else Z


def lift_jacobian(dictionary: Dictionary, x) -> np.ndarray:
    """Analytic Jacobian ``J[i, j] = d psi_i / d x_j`` at a single state."""
    X, single = _as_batch(dictionary, x)
    if not single:
        return np.stack([lift_jacobian(dictionary, row) for row in X])
    xv = X[0]
    n = dictionary.n
    rows = []
    if dictionary.includes_identity:
        rows.append(np.eye(n))
    if dictionary.n_rbf:
        diff = xv[None, :] - dictionary.centers
        s2 = dictionary.widths[:, None] ** 2
        psi = np.exp(-np.sum(diff**2, axis=1, keepdims=True) / s2)
        rows.append(-2.0 * diff / s2 * psi)
    if len(dictionary.exponents):
        E = dictionary.exponents
        J = np.zeros((len(E), n))
        for j in range(n):
            Ej = E.copy()
            coef = Ej[:, j].astype(float)
            Ej[:, j] = np.maximum(Ej[:, j] - 1, 0)
            J[:, j] = coef * np.prod(xv[None, :] ** Ej, axis=1)
        rows.append(J)
    return np.vstack(rows)
