"""Reference plants, excitation signals and disturbances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "LiftedLinearPlant",
    "Plant",
    "StrictFeedbackSpec",
    "ExcitationSignal",
    "REFERENCE_ICS",
    "LFSR_PERIOD",
    "lfsr_bits",
    "prbs",
    "sinusoidal_disturbance",
    "strict_feedback_dynamics",
    "strict_feedback_plant",
    "van_der_pol",
    "vdp_dynamics",
    "vdp_spec",
]

# Five fixed initial conditions used for the Van der Pol reproduction runs.
REFERENCE_ICS = ((2.0, 0.0), (-2.0, 0.0), (1.0, 1.5), (-1.0, -1.5), (0.5, -2.0))

LFSR_PERIOD = 2**16 - 1


def sinusoidal_disturbance(t: float, amplitude: float = 0.1, omega: float = math.pi) -> float:
    return amplitude * math.sin(omega * t)


def vdp_dynamics(x, u: float, t: float, eps: float = 1.0, disturbance: bool = True) -> np.ndarray:
    """Forced Van der Pol oscillator.

    ``x1' = x2``, ``x2' = eps (1 - x1^2) x2 - x1 + u + d(t)`` with
    ``d(t) = 0.1 sin(pi t)`` when ``disturbance`` is set.
    """
    x1, x2 = float(x[0]), float(x[1])
    d = sinusoidal_disturbance(t) if disturbance else 0.0
    return np.array([x2, eps * (1.0 - x1 * x1) * x2 - x1 + u + d])


@dataclass(frozen=True)
class StrictFeedbackSpec:
    """Ingredients of a parametric strict-feedback plant.

    ``f[i](x)`` is the known drift of row ``i`` and ``phi[i](x)`` its
    regressor (length ``p``); ``theta`` multiplies every regressor and
    ``disturbance(t)`` enters the last row only.
    """

    f: Sequence[Callable]
    phi: Sequence[Callable]
    theta: np.ndarray
    disturbance: Callable[[float], float] | None = None
    d_max: float = 0.0

    @property
    def n(self) -> int:
        return len(self.f)


def strict_feedback_dynamics(spec: StrictFeedbackSpec, x, u: float, t: float) -> np.ndarray:
    """``x_i' = x_{i+1} + f_i + theta^T phi_i`` (``i < n``), last row driven by ``u + d``."""
    x = np.asarray(x, dtype=float)
    n = spec.n
    if len(spec.phi) != n:
        raise ValueError(f"{n} drift terms but {len(spec.phi)} regressors")
    if x.shape != (n,):
        raise ValueError(f"state must have shape ({n},), got {x.shape}")
    theta = np.asarray(spec.theta, dtype=float).reshape(-1)
    dx = np.empty(n)
    for i in range(n):
        phi_i = np.asarray(spec.phi[i](x), dtype=float).reshape(-1)
        if phi_i.shape != theta.shape:
            raise ValueError(f"regressor {i} has length {phi_i.size}, theta has {theta.size}")
        chain = x[i + 1] if i < n - 1 else u
        dx[i] = chain + float(spec.f[i](x)) + float(theta @ phi_i)
    if spec.disturbance is not None:
        dx[-1] += spec.disturbance(t)
    return dx


def vdp_spec(eps: float = 1.0, disturbance: bool = True) -> StrictFeedbackSpec:
    """Van der Pol written in strict-feedback form with ``theta = eps``."""
    return StrictFeedbackSpec(
        f=(lambda x: 0.0, lambda x: -x[0]),
        phi=(lambda x: np.zeros(1), lambda x: np.array([(1.0 - x[0] ** 2) * x[1]])),
        theta=np.array([eps]),
        disturbance=sinusoidal_disturbance if disturbance else None,
        d_max=0.1 if disturbance else 0.0,
    )


@dataclass(frozen=True, eq=False)
class Plant:
    """A simulated plant ``x' = dynamics(x, u, t)``.

    ``regressor(x)`` returns the last-row regressor ``phi_n(x)`` that the
    adaptive law uses, and ``theta_true`` is the parameter it multiplies;
    the latter is only used for diagnostics.
    """

    n: int
    dynamics: Callable[[np.ndarray, float, float], np.ndarray]
    theta_true: np.ndarray
    d_max: float = 0.0
    regressor: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "plant"

    @property
    def p(self) -> int:
        return int(np.asarray(self.theta_true).size)

    def lifted_state(self, x, dictionary) -> np.ndarray:
        return dictionary.lift(x)

    def lifted_origin(self, dictionary) -> np.ndarray:
        return dictionary.lift(np.zeros(dictionary.n))

    def output(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)


def strict_feedback_plant(spec: StrictFeedbackSpec, name: str = "strict-feedback") -> Plant:
    return Plant(
        n=spec.n,
        dynamics=lambda x, u, t: strict_feedback_dynamics(spec, x, u, t),
        theta_true=np.asarray(spec.theta, dtype=float),
        d_max=spec.d_max,
        regressor=lambda x: np.asarray(spec.phi[-1](np.asarray(x, dtype=float)), dtype=float),
        name=name,
    )


def van_der_pol(eps: float = 1.0, disturbance: bool = True) -> Plant:
    return Plant(
        n=2,
        dynamics=lambda x, u, t: vdp_dynamics(x, u, t, eps=eps, disturbance=disturbance),
        theta_true=np.array([eps]),
        d_max=0.1 if disturbance else 0.0,
        regressor=lambda x: np.array([(1.0 - x[0] ** 2) * x[1]]),
        name="van-der-pol",
    )


@lru_cache(maxsize=32)
def _lfsr_period(state: int) -> np.ndarray:
    bits = np.empty(LFSR_PERIOD, dtype=np.int8)
    s = state
    for k in range(LFSR_PERIOD):
        # x^16 + x^14 + x^13 + x^11 + 1, maximal length
        fb = (s ^ (s >> 2) ^ (s >> 3) ^ (s >> 5)) & 1
        s = (s >> 1) | (fb << 15)
        bits[k] = s & 1
    bits.setflags(write=False)
    return bits


def lfsr_bits(seed: int, count: int) -> np.ndarray:
    """First ``count`` output bits of the 16-bit maximal-length LFSR for ``seed``."""
    bits = _lfsr_period(int(seed) % LFSR_PERIOD + 1)
    reps = -(-count // LFSR_PERIOD)
    return np.tile(bits, reps)[:count] if reps > 1 else bits[:count]


@dataclass(frozen=True)
class ExcitationSignal:
    """Open-loop input used for data collection.

    ``period`` is the PRBS bit duration, the sine period, or the chirp
    sweep duration.  The chirp sweeps linearly from ``f0`` to ``f1`` Hz.
    """

    kind: str = "prbs"
    amplitude: float = 2.0
    period: float = 0.1
    seed: int = 0
    f0: float = 0.05
    f1: float = 2.0

    def __post_init__(self):
        if self.kind not in ("prbs", "sine", "chirp"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if not (self.period > 0):
            raise ValueError("period must be positive")

    def __call__(self, t: float) -> float:
        if self.kind == "prbs":
            return prbs(t, self)
        if self.kind == "sine":
            return self.amplitude * math.sin(2 * math.pi * t / self.period)
        tau = t % self.period
        k = (self.f1 - self.f0) / self.period
        return self.amplitude * math.sin(2 * math.pi * (self.f0 * tau + 0.5 * k * tau * tau))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "amplitude": self.amplitude, "period": self.period,
                "seed": self.seed, "f0": self.f0, "f1": self.f1}


def prbs(t: float, sig: ExcitationSignal) -> float:
    """Zero-order-held PRBS value ``+-amplitude`` at time ``t >= 0``."""
    if t < 0:
        raise ValueError("PRBS is defined for t >= 0")
    k = int(math.floor(t / sig.period + 1e-9))
    bits = _lfsr_period(int(sig.seed) % LFSR_PERIOD + 1)
    return sig.amplitude if bits[k % LFSR_PERIOD] else -sig.amplitude


class LiftedLinearPlant(Plant):
    """The nominal lifted model ``z' = A z + B u`` simulated as a plant.

    Its state already lives in the lifted space, so lifting is the
    identity; ``output`` maps back through ``C``.
    """

    def __init__(self, A, B, C=None, theta_true=None, disturbance=None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(B, dtype=float).reshape(-1)
        C = np.eye(A.shape[0]) if C is None else np.asarray(C, dtype=float)
        theta = np.zeros(1) if theta_true is None else np.asarray(theta_true, dtype=float)

        def dyn(z, u, t):
            dz = A @ z + b * u
            if disturbance is not None:
                dz = dz + disturbance(t)
            return dz

        super().__init__(n=A.shape[0], dynamics=dyn, theta_true=theta, d_max=0.0,
                         regressor=None, name="lifted-linear")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", C)

    def lifted_state(self, x, dictionary) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def lifted_origin(self, dictionary) -> np.ndarray:
        return np.zeros(self.n)

    def output(self, x) -> np.ndarray:
        return self.C @ np.asarray(x, dtype=float)
