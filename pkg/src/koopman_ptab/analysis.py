"""Numerical certificates and prescribed-time metrics along simulated runs."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog, lsq_linear

__all__ = [
    "StabilityReport",
    "VdotCheck",
    "lyapunov_value",
    "lyapunov_series",
    "check_vdot_bound",
    "settling_metrics",
    "lemma_a1_fit",
    "fit_decay_rate",
    "uub_witness",
    "build_report",
    "DEFAULT_RADIUS",
]

DEFAULT_RADIUS = 0.1


def lyapunov_value(e, theta_err, Gamma) -> float:
    """``V = 0.5 ||e||^2 + 0.5 theta_err^T Gamma^{-1} theta_err``."""
    e = np.asarray(e, dtype=float).reshape(-1)
    th = np.asarray(theta_err, dtype=float).reshape(-1)
    if th.size == 0:
        return 0.5 * float(e @ e)
    G = np.atleast_2d(np.asarray(Gamma, dtype=float))
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise ValueError("Gamma must be positive definite") from None
    y = np.linalg.solve(L, th)
    return 0.5 * float(e @ e) + 0.5 * float(y @ y)


def lyapunov_series(E, theta_err, Gamma) -> np.ndarray:
    """:func:`lyapunov_value` evaluated row by row on ``(K, r)`` and ``(K, p)`` arrays."""
    E = np.asarray(E, dtype=float)
    th = np.asarray(theta_err, dtype=float)
    V = 0.5 * np.sum(E**2, axis=1)
    if th.size == 0:
        return V
    G = np.atleast_2d(np.asarray(Gamma, dtype=float))
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise ValueError("Gamma must be positive definite") from None
    Y = np.linalg.solve(L, th.T)
    return V + 0.5 * np.sum(Y**2, axis=0)


class VdotCheck(NamedTuple):
    rate: float
    vdot: np.ndarray
    bound: np.ndarray
    slack: np.ndarray
    violations: np.ndarray


def _chain_residuals(traj, comp):
    """Central-difference model mismatch in error coordinates, interior samples."""
    dt = traj.dt
    r = comp.order
    W = traj.w
    wdot = (W[2:] - W[:-2]) / (2 * dt)
    mid = slice(1, len(traj) - 1)
    model = W[mid] @ comp.A_bar.T + np.outer(traj.u[mid], comp.B_bar.ravel())
    dW = wdot - model
    dE = dW[:, :r].copy()
    if r > 1:
        dE[:, 1:] -= np.einsum("kiv,kv->ki", traj.alpha_grad[mid], dW)
    return dE


def check_vdot_bound(traj, model, cfg, true_theta=None, comp=None,
                     slack_factor: float = 10.0, window: float = 0.05) -> VdotCheck:
    """Fraction of interior samples violating the Lyapunov derivative bound.

    Checks ``V' <= -rho sum_i c_i e_i^2 + sum_i e_i Delta_i + eta`` where
    ``V'`` is the central difference of the recorded ``V`` and ``Delta`` is
    the measured mismatch of the chain dynamics, expressed in error
    coordinates, with the parametric part ``theta^T Phi`` that the
    adaptive law targets removed from the last row.

    ``eta = 0.5 theta_err_k^T (g_k - g_{k-1})`` with ``g = Phi e_r`` is the
    exact first-order defect of the Euler-sampled adaptation seen by a
    central difference; it vanishes as ``dt -> 0``.  The per-sample slack
    is ``slack_factor * dt^2 * max|V''|`` over a centered window of
    ``window`` seconds.
    """
    comp = comp if comp is not None else model.realization
    if len(traj) < 3:
        return VdotCheck(0.0, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool))
    theta = np.asarray(traj.theta_true if true_theta is None else true_theta, dtype=float).reshape(-1)
    dt = traj.dt
    V = traj.V
    vdot = (V[2:] - V[:-2]) / (2 * dt)
    mid = slice(1, len(traj) - 1)
    E = traj.e[mid]
    c = cfg.gains(comp.order)
    dE = _chain_residuals(traj, comp)
    g = traj.phi * traj.e[:, -1:]
    eta = np.zeros(len(vdot))
    if theta.size == traj.phi.shape[1]:
        dE[:, -1] -= traj.phi[mid] @ theta
        th_err = theta[None, :] - traj.theta_hat[mid]
        eta = 0.5 * np.sum(th_err * (g[1:-1] - g[:-2]), axis=1)
    bound = -traj.rho[mid] * np.sum(c * E**2, axis=1) + np.sum(E * dE, axis=1) + eta
    vdd = np.abs(V[2:] - 2 * V[1:-1] + V[:-2]) / dt**2
    half = max(2, int(round(0.5 * window / dt)))
    pad = np.pad(vdd, half, mode="edge")
    vdd_max = np.max(np.lib.stride_tricks.sliding_window_view(pad, 2 * half + 1), axis=1)
    slack = slack_factor * dt**2 * vdd_max + 1e-12 * np.maximum(1.0, np.abs(vdot))
    viol = vdot > bound + slack
    return VdotCheck(float(np.mean(viol)), vdot, bound, slack, viol)


def settling_metrics(traj, T: float, radius: float = DEFAULT_RADIUS):
    """First time after which ``||x|| <= radius`` holds for the rest of the run.

    Returns ``(settling_time, residual_radius, stayed)``; ``settling_time``
    is ``None`` when the run ends outside the ball, and ``residual_radius``
    is ``max ||x||`` over ``t >= T`` (``nan`` if the run ends before ``T``).
    """
    if not (radius > 0):
        raise ValueError("radius must be positive")
    times = np.asarray(traj.times)
    norms = np.linalg.norm(np.asarray(traj.x), axis=1)
    outside = np.flatnonzero(norms > radius)
    if outside.size == 0:
        ts = float(times[0])
    elif outside[-1] == len(times) - 1:
        ts = None
    else:
        ts = float(times[outside[-1] + 1])
    after = times >= T - 1e-12
    resid = float(np.max(norms[after])) if after.any() else float("nan")
    stayed = ts is not None and ts <= T + 1e-12
    return ts, resid, stayed


def lemma_a1_fit(traj, true_theta=None, rel_tol: float = 1e-9):
    """Fit ``||z||^2 <= g1 ||e||^2 + g2 ||theta_err||^2 + g3`` along a run.

    The three nonnegative coefficients minimize ``g3 + k1 g1 + k2 g2`` (``k``
    the mean feature values) as a linear program; among optimal vertices
    the one with the smallest ``g3`` is kept.  The fit is then re-checked
    on every sample with relative tolerance ``rel_tol``.

    Returns
    -------
    (g1, g2, g3, violation_count)
    """
    theta = np.asarray(traj.theta_true if true_theta is None else true_theta, dtype=float).reshape(-1)
    a = np.sum(np.asarray(traj.e) ** 2, axis=1)
    th_err = theta[None, :] - np.asarray(traj.theta_hat) if theta.size else np.zeros((len(a), 0))
    b = np.sum(th_err**2, axis=1)
    s = np.sum(np.asarray(traj.z) ** 2, axis=1)
    if len(s) == 0:
        raise ValueError("lemma_a1_fit needs a nonempty trajectory")
    if np.all(s == 0):
        return 0.0, 0.0, 0.0, 0
    A_ub = -np.column_stack([a, b, np.ones_like(a)])
    b_ub = -s
    cost = np.array([np.mean(a), np.mean(b), 1.0])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * 3, method="highs")
    if res.status != 0:
        raise RuntimeError(f"lifted-state bound fit failed: {res.message}")
    J = float(res.fun)
    res2 = linprog(np.array([0.0, 0.0, 1.0]), A_ub=np.vstack([A_ub, cost]),
                   b_ub=np.append(b_ub, J + 1e-12 * max(1.0, abs(J))),
                   bounds=[(0, None)] * 3, method="highs")
    g = res2.x if res2.status == 0 else res.x
    g1, g2, g3 = (max(0.0, float(v)) for v in g)
    gap = float(np.max(s - (g1 * a + g2 * b + g3)))
    if gap > 0:
        g3 += gap
    fit = g1 * a + g2 * b + g3
    violations = int(np.sum(s > fit * (1 + rel_tol)))
    return g1, g2, g3, violations


def fit_decay_rate(traj, cfg):
    """Least-squares ``V' ~ -k_v V + D0`` (``D0 >= 0``) over the pre-clamp window."""
    pre = np.flatnonzero(~np.asarray(traj.clamped[1:-1], dtype=bool)) + 1
    if pre.size < 2:
        return float("nan"), float("nan")
    V = traj.V
    vdot = (V[pre + 1] - V[pre - 1]) / (2 * traj.dt)
    A = np.column_stack([-V[pre], np.ones(pre.size)])
    res = lsq_linear(A, vdot, bounds=([-np.inf, 0.0], [np.inf, np.inf]))
    return float(res.x[0]), float(res.x[1])


def uub_witness(traj, T: float) -> bool:
    """``sup V`` after ``T`` does not exceed ``sup V`` before ``T``."""
    before = traj.times < T
    after = ~before
    if not after.any() or not before.any():
        return True
    return bool(np.max(traj.V[after]) <= np.max(traj.V[before]))


@dataclass
class StabilityReport:
    tag: str
    settling_time: float | None
    residual_radius: float
    stayed: bool
    vdot_violation_rate: float
    k_v_hat: float
    D0_hat: float
    gamma_fit: tuple[float, float, float] | None
    lemma_violations: int
    uub: bool
    max_abs_u: float
    max_theta_hat_norm: float
    max_x_norm: float
    failure: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_fit"] = None if self.gamma_fit is None else list(self.gamma_fit)
        return d


def build_report(traj, model, cfg, comp=None, radius: float = DEFAULT_RADIUS) -> StabilityReport:
    ts, resid, stayed = settling_metrics(traj, cfg.T, radius)
    if traj.failure is not None or len(traj) < 3:
        mx = traj.maxima()
        return StabilityReport(traj.tag, ts if traj.failure is None else None, resid, False,
                               float("nan"), float("nan"), float("nan"), None, 0, False,
                               mx["max_abs_u"], mx["max_theta_hat_norm"], mx["max_x_norm"],
                               traj.failure)
    chk = check_vdot_bound(traj, model, cfg, comp=comp)
    kv, d0 = fit_decay_rate(traj, cfg)
    g1, g2, g3, nviol = lemma_a1_fit(traj)
    mx = traj.maxima()
    return StabilityReport(
        tag=traj.tag, settling_time=ts, residual_radius=resid, stayed=stayed,
        vdot_violation_rate=chk.rate, k_v_hat=kv, D0_hat=d0, gamma_fit=(g1, g2, g3),
        lemma_violations=nviol, uub=uub_witness(traj, cfg.T), **mx,
    )
