"""Prescribed-time adaptive backstepping on a chain realization of the lifted model.

Coordinates ``w = T_c z`` split into an integrator chain ``w_1..w_r`` (the
input acts on ``w_r`` only) and, when ``r < N``, internal coordinates that
enter through the feedforward row ``(A_bar w)_r``.  With the reference
``alpha_0 = y_d`` and ``e_0 = 0`` the recursion is

    e_i     = w_i - alpha_{i-1}
    alpha_i = -c_i rho e_i - e_{i-1} + d/dt alpha_{i-1}         (i < r)
    u       = (-c_r rho e_r - e_{r-1} - (A_bar w)_r + d/dt alpha_{r-1}
               - theta_hat . Phi) / b_last

with ``rho = 2 / (T - t)``.  Every ``alpha_i`` is a polynomial in ``rho``
with coefficients linear in the chain state and the reference
derivatives, so its time derivative is exact: ``d rho/dt = rho^2 / 2``
(zero once the gain is clamped) and ``dw_i/dt = w_{i+1}`` along the
nominal chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import NonFiniteError
from .sysid import CompanionRealization

__all__ = [
    "PTABConfig",
    "ControllerState",
    "BacksteppingWorkspace",
    "GainSchedule",
    "pts_gain",
    "backstep",
    "adapt_step",
    "reconstruct_chain",
]


@dataclass(frozen=True, eq=False)
class PTABConfig:
    """Controller synthesis parameters.

    ``c`` holds one positive gain per chain stage; a single value is
    broadcast over the chain.  ``regressor`` is ``"plant_phi"`` (the plant's
    last-row regressor evaluated on the reconstructed state) or ``"zero"``.
    """

    T: float = 5.0
    c: Sequence[float] = (2.0,)
    Gamma: np.ndarray = field(default_factory=lambda: np.eye(1))
    guard_fraction: float = 0.01
    theta_hat0: np.ndarray = field(default_factory=lambda: np.zeros(1))
    regressor: str = "plant_phi"

    def __post_init__(self):
        if not (self.T > 0):
            raise ValueError("prescribed time T must be positive")
        c = tuple(float(v) for v in np.atleast_1d(self.c))
        if not c or any(not (v > 0) for v in c):
            raise ValueError("all backstepping gains c_i must be positive")
        object.__setattr__(self, "c", c)
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        if G.shape[0] != G.shape[1] or not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1, abs(G).max())):
            raise ValueError("Gamma must be a symmetric matrix")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise ValueError("Gamma must be positive definite") from None
        object.__setattr__(self, "Gamma", G)
        th = np.asarray(self.theta_hat0, dtype=float).reshape(-1)
        if th.size != G.shape[0]:
            raise ValueError(f"theta_hat0 has {th.size} entries, Gamma is {G.shape[0]}x{G.shape[0]}")
        object.__setattr__(self, "theta_hat0", th)
        if not (0 < self.guard_fraction < 1):
            raise ValueError("guard_fraction must lie in (0, 1)")
        if self.regressor not in ("plant_phi", "zero"):
            raise ValueError(f"unknown regressor {self.regressor!r}")

    @property
    def p(self) -> int:
        return self.Gamma.shape[0]

    @property
    def t_clamp(self) -> float:
        return self.T * (1.0 - self.guard_fraction)

    def gains(self, order: int) -> np.ndarray:
        if len(self.c) == 1:
            return np.full(order, self.c[0])
        if len(self.c) != order:
            raise ValueError(f"{len(self.c)} gains given for a chain of length {order}")
        return np.array(self.c)

    def to_dict(self) -> dict[str, Any]:
        return {
            "T": self.T,
            "c": list(self.c),
            "Gamma": self.Gamma.tolist(),
            "guard_fraction": self.guard_fraction,
            "theta_hat0": self.theta_hat0.tolist(),
            "regressor": self.regressor,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PTABConfig":
        G = np.atleast_2d(np.asarray(doc.get("Gamma", [[1.0]]), dtype=float))
        return cls(
            T=float(doc.get("T", 5.0)),
            c=tuple(np.atleast_1d(doc.get("c", [2.0])).tolist()),
            Gamma=G,
            guard_fraction=float(doc.get("guard_fraction", 0.01)),
            theta_hat0=np.asarray(doc.get("theta_hat0", np.zeros(G.shape[0])), dtype=float),
            regressor=doc.get("regressor", "plant_phi"),
        )


@dataclass(frozen=True, eq=False)
class ControllerState:
    theta_hat: np.ndarray
    last_u: float = 0.0
    clamped: bool = False

    @classmethod
    def initial(cls, cfg: PTABConfig) -> "ControllerState":
        return cls(theta_hat=cfg.theta_hat0.copy())


@dataclass(frozen=True, eq=False)
class BacksteppingWorkspace:
    """Intermediate quantities of one control evaluation.

    ``alpha_grad[i]`` is the gradient of ``alpha_{i+1}`` with respect to the
    full lifted coordinate ``w`` (zero outside the chain).
    """

    e: np.ndarray
    alpha: np.ndarray
    alpha_dot: np.ndarray
    alpha_grad: np.ndarray
    rho: float
    mu: float
    clamped: bool
    phi: np.ndarray
    u: float


class GainSchedule(NamedTuple):
    mu: float
    rho: float
    clamped: bool


def pts_gain(t: float, cfg: PTABConfig) -> GainSchedule:
    """``mu = T^2/(T-t)^2`` and ``rho = 2/(T-t)``, frozen after ``T(1 - guard)``."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    T = cfg.T
    t_star = cfg.t_clamp
    clamped = t > t_star
    s = T - (t_star if clamped else t)
    return GainSchedule(mu=T * T / (s * s), rho=2.0 / s, clamped=clamped)


class _ChainLaw:
    """Polynomial-in-rho representation of the backstepping recursion.

    Each quantity ``q`` is stored as an array ``Q[k, :]`` with
    ``q = sum_k rho^k Q[k] . v`` over ``v = [w_1..w_r, y_d, y_d', ..., y_d^(r)]``.
    """

    def __init__(self, order: int, c: tuple[float, ...], clamped: bool):
        r = order
        self.r = r
        V = 2 * r + 1
        K = r + 2
        self.V, self.K = V, K
        D = np.zeros((V, V))
        for i in range(r - 1):
            D[i, i + 1] = 1.0
        for j in range(r):
            D[r + j, r + j + 1] = 1.0
        # w_r is never differentiated (alpha_{r-1} only involves w_1..w_{r-1})
        self._dmat = D
        self._clamped = clamped

        def unit(idx):
            P = np.zeros((K, V))
            P[0, idx] = 1.0
            return P

        def deriv(P):
            out = P @ D
            if not clamped:
                k = np.arange(K - 1)[:, None]
                out[1:] += 0.5 * k * P[:-1]
            if np.any(P[:, r - 1] != 0) and r > 0:
                raise AssertionError("chain law differentiated the input-carrying state")
            return out

        def times_rho(P):
            out = np.zeros_like(P)
            out[1:] = P[:-1]
            return out

        E = np.zeros((r, K, V))
        Al = np.zeros((r, K, V))   # alpha_0 .. alpha_{r-1}
        Ad = np.zeros((r, K, V))   # d/dt alpha_0 .. alpha_{r-1}
        Al[0] = unit(r)            # alpha_0 = y_d
        Ad[0] = unit(r + 1)        # d/dt y_d
        e_prev = np.zeros((K, V))
        for i in range(r):
            E[i] = unit(i) - Al[i]
            if i < r - 1:
                Al[i + 1] = -c[i] * times_rho(E[i]) - e_prev + Ad[i]
                Ad[i + 1] = deriv(Al[i + 1])
            e_prev = E[i]
        self.E, self.alpha, self.alpha_dot = E, Al, Ad
        self.c = np.asarray(c)

    def evaluate(self, v: np.ndarray, rho: float):
        powers = rho ** np.arange(self.K)
        e = np.einsum("ikv,k,v->i", self.E, powers, v)
        alpha = np.einsum("ikv,k,v->i", self.alpha, powers, v)
        alpha_dot = np.einsum("ikv,k,v->i", self.alpha_dot, powers, v)
        grad = np.einsum("ikv,k->iv", self.alpha[1:, :, : self.r], powers)
        return e, alpha, alpha_dot, grad


@lru_cache(maxsize=64)
def _chain_law(order: int, c: tuple[float, ...], clamped: bool) -> _ChainLaw:
    return _ChainLaw(order, c, clamped)


def _reference_vector(order: int, w_d, w_d_dot, y_d_derivs) -> np.ndarray:
    ref = np.zeros(order + 1)
    if y_d_derivs is not None:
        yd = np.asarray(y_d_derivs, dtype=float).reshape(-1)[: order + 1]
        ref[: len(yd)] = yd
    else:
        ref[0] = float(np.asarray(w_d).reshape(-1)[0])
        if w_d_dot is not None and order >= 1:
            ref[1] = float(np.asarray(w_d_dot).reshape(-1)[0])
    return ref


def backstep(w, w_d, w_d_dot, realization: CompanionRealization, state: ControllerState,
             t: float, cfg: PTABConfig, phi=None, y_d_derivs=None):
    """Evaluate the PTAB control law.

    Parameters
    ----------
    w : (N,) array
        Lifted state in chain coordinates, ``w = T_c z``.
    w_d, w_d_dot : (N,) arrays
        Reference in chain coordinates and its time derivative; only the
        first (output) coordinate enters the law.  Higher reference
        derivatives are zero unless ``y_d_derivs`` (``[y_d, y_d', ...]``)
        is given.
    phi : (p,) array, optional
        Regressor value ``Phi_N``; zero when omitted.

    Returns
    -------
    u : float
    workspace : BacksteppingWorkspace
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    r = realization.order
    c = tuple(cfg.gains(r).tolist())
    mu, rho, clamped = pts_gain(t, cfg)
    law = _chain_law(r, c, clamped)
    ref = _reference_vector(r, w_d, w_d_dot, y_d_derivs)
    # stage i depends on w_1..w_i only; internal coordinates enter at stage r
    bad_w = ~np.isfinite(w)
    if bad_w.any():
        stage = min(int(np.argmax(bad_w)) + 1, r)
        raise NonFiniteError(f"non-finite chain state entering stage {stage}", stage=stage)
    v = np.concatenate([w[:r], ref])
    e, alpha, alpha_dot, grad = law.evaluate(v, rho)
    bad = ~np.isfinite(e)
    if bad.any():
        raise NonFiniteError(f"non-finite error coordinate at stage {int(np.argmax(bad)) + 1}",
                             stage=int(np.argmax(bad)) + 1)
    phi = np.zeros(cfg.p) if phi is None or cfg.regressor == "zero" else np.asarray(phi, dtype=float).reshape(-1)
    e_prev = e[r - 2] if r >= 2 else 0.0
    num = (-law.c[-1] * rho * e[r - 1] - e_prev - float(realization.feedforward @ w)
           + alpha_dot[r - 1] - float(state.theta_hat @ phi))
    u = num / realization.b_last
    if not np.isfinite(u):
        raise NonFiniteError(f"non-finite control at stage {r}", stage=r)
    gfull = np.zeros((max(r - 1, 0), w.size))
    gfull[:, :r] = grad
    ws = BacksteppingWorkspace(
        e=e, alpha=alpha[1:], alpha_dot=alpha_dot[1:], alpha_grad=gfull,
        rho=rho, mu=mu, clamped=clamped, phi=phi, u=float(u),
    )
    return float(u), ws


def adapt_step(state: ControllerState, workspace: BacksteppingWorkspace, cfg: PTABConfig,
               dt: float) -> ControllerState:
    """Explicit Euler step of ``theta_hat' = Gamma Phi_N e_N``."""
    if not (dt > 0):
        raise ValueError("dt must be positive")
    step = dt * (cfg.Gamma @ workspace.phi) * workspace.e[-1]
    return replace(state, theta_hat=state.theta_hat + step, last_u=workspace.u,
                   clamped=workspace.clamped)


def reconstruct_chain(workspace: BacksteppingWorkspace, y_d: float = 0.0) -> np.ndarray:
    """Invert the error coordinates: ``w_1 = e_1 + y_d``, ``w_i = e_i + alpha_{i-1}``."""
    e = workspace.e
    out = e.copy()
    out[0] += y_d
    out[1:] += workspace.alpha
    return out
