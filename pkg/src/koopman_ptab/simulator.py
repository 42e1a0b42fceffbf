"""Fixed-step integration, open-loop data collection and closed-loop PTAB runs."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .analysis import lyapunov_series
from .controller import ControllerState, PTABConfig, adapt_step, backstep
from .errors import NonFiniteError, TrajectoryEscapeError
from .plants import ExcitationSignal, Plant
from .records import TrajectoryRecord
from .sysid import CompanionRealization, KoopmanModel, SnapshotDataset

__all__ = [
    "rk4_step",
    "integrate_rk4",
    "collect_data",
    "split_dataset",
    "run_closed_loop",
    "ESCAPE_RADIUS",
]

ESCAPE_RADIUS = 50.0


def rk4_step(f: Callable, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _n_steps(t0: float, t_end: float, dt: float) -> tuple[int, float]:
    span = t_end - t0
    n = int(np.floor(span / dt + 1e-9))
    rem = span - n * dt
    return n, (rem if rem > 1e-12 * max(1.0, span) else 0.0)


def integrate_rk4(f: Callable, x0, t0: float, t_end: float, dt: float):
    """Classical fixed-step RK4 for ``x' = f(t, x)``.

    A final shortened step lands exactly on ``t_end``.

    Returns
    -------
    times : (K,) ndarray
    states : (K, n) ndarray
    """
    if not (dt > 0):
        raise ValueError("dt must be positive")
    if not (t_end > t0):
        raise ValueError("t_end must exceed t0")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n, rem = _n_steps(t0, t_end, dt)
    steps = [dt] * n + ([rem] if rem else [])
    times = [t0]
    states = [x]
    t = t0
    for k, h in enumerate(steps):
        x = rk4_step(f, t, x, h)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state at step {k + 1}", step=k + 1)
        t = t0 + (k + 1) * dt if h == dt else t_end
        times.append(t)
        states.append(x)
    return np.array(times), np.array(states)


def collect_data(plant: Plant, sig: ExcitationSignal, horizon: float, dt: float, x0,
                 escape_radius: float = ESCAPE_RADIUS) -> SnapshotDataset:
    """Sample ``(x_k, u_k)`` under an open-loop excitation held over each step."""
    M = int(round(horizon / dt))
    if M < 2 or abs(M * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be an integer multiple (>= 2) of dt")
    x = np.asarray(x0, dtype=float).copy()
    states = np.empty((M + 1, plant.n))
    inputs = np.empty(M)
    states[0] = x
    for k in range(M):
        t = k * dt
        u = float(sig(t))
        inputs[k] = u
        x = rk4_step(lambda s, y: plant.dynamics(y, u, s), t, x, dt)
        nx = float(np.linalg.norm(x))
        if not np.isfinite(nx):
            raise NonFiniteError(f"non-finite state during data collection at step {k + 1}", step=k + 1)
        if nx > escape_radius:
            raise TrajectoryEscapeError(k + 1, (k + 1) * dt, nx, escape_radius)
        states[k + 1] = x
    return SnapshotDataset(states=states, inputs=inputs, dt=dt, split_tag="train")


def split_dataset(data: SnapshotDataset, fraction: float = 0.8):
    """Contiguous train/validation split.

    The first ``round(fraction * (M+1))`` states form the training record
    and the rest the validation record, so the two share no snapshot pair.
    """
    if not (0 < fraction < 1):
        raise ValueError("split fraction must lie in (0, 1)")
    K = data.M + 1
    cut = int(round(fraction * K))
    if cut < 2 or K - cut < 2:
        raise ValueError("dataset too short to split")
    train = SnapshotDataset(data.states[:cut], data.inputs[: cut - 1], data.dt, "train", data.t0)
    val = SnapshotDataset(data.states[cut:], data.inputs[cut:], data.dt, "validation",
                          data.t0 + cut * data.dt)
    return train, val


def _resolve_realization(model: KoopmanModel, comp: CompanionRealization | None):
    if comp is not None:
        return comp
    if model.realization is None:
        raise ValueError("model carries no chain realization; pass one explicitly")
    return model.realization


def run_closed_loop(plant: Plant, model: KoopmanModel, comp: CompanionRealization | None,
                    cfg: PTABConfig, x0, t_end: float | None = None, dt: float = 1e-3,
                    reference: Callable | None = None, escape_radius: float = ESCAPE_RADIUS,
                    tag: str = "", raise_on_failure: bool = True) -> TrajectoryRecord:
    """Simulate the plant under the PTAB controller.

    Each step lifts the measured state, maps it to chain coordinates,
    evaluates the reference (``reference(t) -> (x_d, x_d_dot)``; the origin
    when omitted, in which case ``w`` is taken relative to ``T_c Psi(0)``
    and recorded that way), computes ``u``, advances the plant by one RK4 step with
    ``u`` held, and advances ``theta_hat`` by one Euler step.

    On a non-finite value or an escape the partial record is attached to
    the raised exception, or returned with ``failure`` set when
    ``raise_on_failure`` is false.
    """
    comp = _resolve_realization(model, comp)
    dictionary = model.dictionary
    if t_end is None:
        t_end = 2.0 * cfg.T
    K = int(round(t_end / dt))
    if K < 1 or abs(K * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a positive integer multiple of dt")
    r = comp.order
    N = comp.N
    p = cfg.p
    theta_true = np.asarray(plant.theta_true, dtype=float).reshape(-1)
    if theta_true.size != p:
        theta_true = np.resize(theta_true, p)
    Tc = comp.T_c

    times = dt * np.arange(K + 1)
    n_out = np.asarray(plant.output(np.asarray(x0, dtype=float))).size
    X = np.zeros((K + 1, n_out))
    Z = np.zeros((K + 1, N))
    W = np.zeros((K + 1, N))
    E = np.zeros((K + 1, r))
    U = np.zeros(K + 1)
    TH = np.zeros((K + 1, p))
    RHO = np.zeros(K + 1)
    CL = np.zeros(K + 1, dtype=bool)
    PHI = np.zeros((K + 1, p))
    AG = np.zeros((K + 1, max(r - 1, 0), N))

    # regulation runs in deviation coordinates about the lifted origin, so a
    # model bias A Psi(0) != 0 does not turn into a constant input offset
    w_offset = Tc @ plant.lifted_origin(dictionary) if reference is None else np.zeros(N)
    w_d_zero = np.zeros(N)

    state = ControllerState.initial(cfg)
    s = np.asarray(x0, dtype=float).copy()
    failure = None
    last = K
    for k in range(K + 1):
        t = times[k]
        z = plant.lifted_state(s, dictionary)
        w = Tc @ z - w_offset
        if reference is None:
            w_d, w_d_dot = w_d_zero, w_d_zero
        else:
            x_d, x_d_dot = reference(t)
            w_d = Tc @ dictionary.lift(x_d)
            w_d_dot = Tc @ (dictionary.lift_jacobian(x_d) @ np.asarray(x_d_dot, dtype=float))
        x_meas = plant.output(s)
        if cfg.regressor == "plant_phi" and plant.regressor is not None:
            phi = np.asarray(plant.regressor(model.C @ z), dtype=float).reshape(-1)
        else:
            phi = np.zeros(p)
        try:
            u, ws = backstep(w, w_d, w_d_dot, comp, state, t, cfg, phi=phi)
        except NonFiniteError as exc:
            failure = f"{exc} at step {k}"
            last = k
            break
        X[k], Z[k], W[k], E[k], U[k] = x_meas, z, w, ws.e, u
        TH[k] = state.theta_hat
        RHO[k], CL[k], PHI[k] = ws.rho, ws.clamped, ws.phi
        AG[k] = ws.alpha_grad
        if k == K:
            break
        s_next = rk4_step(lambda tt, y: np.asarray(plant.dynamics(y, u, tt), dtype=float), t, s, dt)
        state = adapt_step(state, ws, cfg, dt)
        nx = float(np.linalg.norm(plant.output(s_next)))
        if not (np.isfinite(nx) and np.all(np.isfinite(state.theta_hat))):
            failure = f"non-finite state at step {k + 1} (t={times[k + 1]:.4g})"
            last = k + 1
            break
        if nx > escape_radius:
            failure = f"trajectory escaped at step {k + 1} (t={times[k + 1]:.4g}): ||x|| = {nx:.4g}"
            last = k + 1
            break
        s = s_next

    VV = lyapunov_series(E, theta_true[None, :] - TH, cfg.Gamma)
    rec = TrajectoryRecord(times=times, x=X, z=Z, w=W, e=E, u=U, theta_hat=TH, V=VV, rho=RHO,
                           clamped=CL, phi=PHI, alpha_grad=AG, theta_true=theta_true, dt=dt,
                           tag=tag)
    if failure is not None:
        rec = rec.truncated(last)
        rec.failure = failure
        if raise_on_failure:
            if "escaped" in failure:
                raise TrajectoryEscapeError(last, float(times[last]), nx, escape_radius, record=rec)
            raise NonFiniteError(failure, step=last, record=rec)
    return rec
