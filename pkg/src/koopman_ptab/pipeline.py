"""End-to-end offline identification and online control runs.

The functions here glue the modules together the same way the CLI does,
so library users and the acceptance tests exercise one code path.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .analysis import DEFAULT_RADIUS, StabilityReport, build_report
from .controller import PTABConfig
from .dictionary import build_dictionary
from .errors import KoopmanPTABError
from .plants import REFERENCE_ICS, ExcitationSignal, Plant, van_der_pol
from .records import TrajectoryRecord
from .simulator import ESCAPE_RADIUS, collect_data, run_closed_loop, split_dataset
from .sysid import (KoopmanModel, SnapshotDataset, fit_edmdc, one_step_rmse, to_companion,
                    to_continuous, to_output_chain)
from .uncertainty import ResidualSet, compute_residuals, fit_bound

__all__ = [
    "IdentificationResult",
    "default_dictionary_spec",
    "collect_vdp",
    "identify",
    "simulate_many",
    "vdp_reference_model",
]


def default_dictionary_spec(n: int = 2, seed: int = 0) -> dict[str, Any]:
    """Identity prefix plus ten Gaussian RBFs placed by farthest-point sampling."""
    return {"kind": "gaussian-rbf", "n": n, "N": n + 10, "includes_identity": True, "seed": seed}


@dataclass
class IdentificationResult:
    model: KoopmanModel
    residuals: ResidualSet
    train_rmse: float
    validation_rmse: float


def identify(train: SnapshotDataset, val: SnapshotDataset, dictionary_spec: Mapping[str, Any],
             ridge: float = 1e-8, realization: str = "output_chain",
             output_index: int = 0) -> IdentificationResult:
    """Fit EDMDc, convert to continuous time, realize the chain and bound residuals.

    ``realization`` picks the chain transform: ``"output_chain"`` builds the
    relative-degree normal form of ``y = x[output_index]``; ``"companion"``
    the full controllable companion form.
    """
    dictionary = build_dictionary(dictionary_spec, train)
    A_d, B_d, C = fit_edmdc(train, dictionary, ridge=ridge)
    cont = to_continuous(A_d, B_d, train.dt)
    if realization == "companion":
        comp = to_companion(cont.A, cont.B)
    elif realization == "output_chain":
        if not (0 <= output_index < dictionary.n):
            raise ValueError(f"chain output index {output_index} outside state dimension {dictionary.n}")
        comp = to_output_chain(cont.A, cont.B, C[output_index])
    else:
        raise ValueError(f"unknown realization {realization!r}")
    model = KoopmanModel(A=cont.A, B=cont.B, C=C, A_d=A_d, B_d=B_d, dt=train.dt,
                         dictionary=dictionary, conversion_path=cont.path, realization=comp)
    res = compute_residuals(model, val)
    d0, d1 = fit_bound(res)
    model = model.with_bound(d0, d1)
    return IdentificationResult(
        model=model, residuals=res,
        train_rmse=one_step_rmse(A_d, B_d, train, dictionary),
        validation_rmse=one_step_rmse(A_d, B_d, val, dictionary),
    )


def collect_vdp(seed: int = 0, horizon: float = 100.0, dt: float = 0.01, x0=(0.0, 0.0),
                eps: float = 1.0, disturbance: bool = True) -> tuple[SnapshotDataset, SnapshotDataset]:
    plant = van_der_pol(eps, disturbance)
    data = collect_data(plant, ExcitationSignal(kind="prbs", seed=seed), horizon, dt, x0)
    return split_dataset(data, 0.8)


def vdp_reference_model(seed: int = 0) -> KoopmanModel:
    """Identified model of the reference Van der Pol experiment."""
    train, val = collect_vdp(seed)
    return identify(train, val, default_dictionary_spec(2, seed)).model


def _run_one(plant, model, cfg, x0, t_end, dt, escape_radius, tag, radius):
    try:
        rec = run_closed_loop(plant, model, None, cfg, x0, t_end=t_end, dt=dt,
                              escape_radius=escape_radius, tag=tag, raise_on_failure=False)
    except KoopmanPTABError as exc:
        rec = TrajectoryRecord(times=np.zeros(0), x=np.zeros((0, plant.n)), z=np.zeros((0, model.N)),
                               w=np.zeros((0, model.N)), e=np.zeros((0, 1)), u=np.zeros(0),
                               theta_hat=np.zeros((0, cfg.p)), V=np.zeros(0), rho=np.zeros(0),
                               clamped=np.zeros(0, dtype=bool), phi=np.zeros((0, cfg.p)),
                               alpha_grad=np.zeros((0, 0, model.N)), dt=dt, tag=tag,
                               failure=str(exc))
    return rec, build_report(rec, model, cfg, radius=radius)


def simulate_many(plant: Plant, model: KoopmanModel, cfg: PTABConfig,
                  initial_conditions: Sequence = REFERENCE_ICS, t_end: float | None = None,
                  dt: float = 1e-3, escape_radius: float = ESCAPE_RADIUS,
                  radius: float = DEFAULT_RADIUS, threads: int = 1,
                  tags: Sequence[str] | None = None) -> list[tuple[TrajectoryRecord, StabilityReport]]:
    """Closed-loop runs for several initial conditions, results in input order.

    Each run owns its controller state, so runs are independent; a failure
    in one run is reported in its record without affecting the others.
    """
    ics = [np.asarray(x0, dtype=float) for x0 in initial_conditions]
    tags = list(tags) if tags is not None else [f"ic{k:02d}" for k in range(len(ics))]
    args = [(plant, model, cfg, x0, t_end, dt, escape_radius, tag, radius) for x0, tag in zip(ics, tags)]
    if threads <= 1 or len(args) <= 1:
        return [_run_one(*a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: _run_one(*a), args))
