import math

import numpy as np
import pytest

from koopman_ptab import ExcitationSignal, PTABConfig, van_der_pol
from koopman_ptab.dictionary import build_dictionary
from koopman_ptab.errors import NonFiniteError, TrajectoryEscapeError
from koopman_ptab.plants import LiftedLinearPlant, Plant
from koopman_ptab.records import read_trajectory_csv, write_trajectory_csv
from koopman_ptab.simulator import collect_data, integrate_rk4, run_closed_loop, split_dataset
from koopman_ptab.sysid import KoopmanModel, SnapshotDataset, to_output_chain


def lifted_model(A, B):
    N = A.shape[0]
    return KoopmanModel(A=A, B=B, C=np.eye(N), A_d=np.eye(N), B_d=B, dt=1e-3,
                        dictionary=build_dictionary({"kind": "identity", "n": N}))


# -- integrator ------------------------------------------------------------------------


def test_rk4_constant_and_exponential():
    t, x = integrate_rk4(lambda t, x: np.zeros(1), [3.0], 0.0, 1.0, 0.1)
    assert np.all(x == 3.0) and len(t) == 11
    t, x = integrate_rk4(lambda t, x: -x, [1.0], 0.0, 1.0, 1e-3)
    assert x[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-10)


def test_rk4_is_fourth_order():
    f = lambda t, x: np.array([x[1], -x[0]])
    errs = []
    for dt in (0.1, 0.05):
        _, x = integrate_rk4(f, [1.0, 0.0], 0.0, 2.0, dt)
        errs.append(abs(x[-1, 0] - math.cos(2.0)))
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.1)


def test_rk4_final_step_is_shortened():
    t, x = integrate_rk4(lambda t, x: np.ones(1), [0.0], 0.0, 1.05, 0.1)
    assert t[-1] == 1.05 and len(t) == 12
    assert x[-1, 0] == pytest.approx(1.05, abs=1e-12)


def test_rk4_errors():
    with pytest.raises(ValueError):
        integrate_rk4(lambda t, x: x, [1.0], 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate_rk4(lambda t, x: x, [1.0], 1.0, 1.0, 0.1)
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        integrate_rk4(lambda t, x: x**2, [1e200], 0.0, 1.0, 0.1)


# -- data collection -------------------------------------------------------------------


def test_collect_shape_and_zero_excitation():
    p = van_der_pol(disturbance=False)
    d = collect_data(p, ExcitationSignal(amplitude=0.0), 1.0, 0.5, [0.0, 0.0])
    assert d.states.shape == (3, 2) and d.inputs.shape == (2,)
    np.testing.assert_array_equal(d.states, 0.0)


def test_collect_vdp_stays_bounded(vdp_split):
    train, val = vdp_split
    assert train.M + val.M + 2 == 10_001
    r = np.max(np.linalg.norm(np.vstack([train.states, val.states]), axis=1))
    assert 0.5 <= r <= 10.0
    assert set(np.unique(train.inputs)) == {-2.0, 2.0}


def test_collect_escape():
    p = Plant(n=1, dynamics=lambda x, u, t: x, theta_true=np.zeros(1))
    with pytest.raises(TrajectoryEscapeError):
        collect_data(p, ExcitationSignal(amplitude=0.0), 10.0, 0.01, [1.0])


def test_collect_rejects_bad_horizon():
    with pytest.raises(ValueError):
        collect_data(van_der_pol(), ExcitationSignal(), 0.015, 0.01, [0.0, 0.0])


def test_split_counts_and_disjoint():
    d = SnapshotDataset(np.arange(20.0).reshape(10, 2), np.arange(9.0), 0.1)
    train, val = split_dataset(d, 0.8)
    assert train.states.shape[0] == 8 and val.states.shape[0] == 2
    assert train.M == 7 and val.M == 1
    assert val.inputs[0] == 8.0
    assert val.t0 == pytest.approx(0.8)
    with pytest.raises(ValueError):
        split_dataset(d, 1.0)


# -- closed loop -----------------------------------------------------------------------


def test_origin_is_an_equilibrium(vdp_model):
    cfg = PTABConfig(theta_hat0=np.ones(1))
    rec = run_closed_loop(van_der_pol(disturbance=False), vdp_model, None, cfg, [0.0, 0.0], t_end=2.0)
    assert np.max(rec.x_norm) <= 1e-6
    assert rec.failure is None


def test_closed_loop_is_deterministic(vdp_model, ptab_cfg):
    a = run_closed_loop(van_der_pol(), vdp_model, None, ptab_cfg, [1.0, 1.5], t_end=1.0)
    b = run_closed_loop(van_der_pol(), vdp_model, None, ptab_cfg, [1.0, 1.5], t_end=1.0)
    for k in ("x", "u", "e", "theta_hat", "V"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()


def test_closed_loop_record_layout(vdp_model, ptab_cfg):
    rec = run_closed_loop(van_der_pol(), vdp_model, None, ptab_cfg, [1.0, 0.0], t_end=0.5, dt=1e-3)
    assert len(rec) == 501 and rec.times[-1] == pytest.approx(0.5)
    assert rec.e.shape == (501, vdp_model.realization.order)
    assert rec.z.shape == (501, vdp_model.N)
    assert np.all(rec.V >= 0)


def test_closed_loop_failure_record():
    A = np.array([[5.0]])
    B = np.array([[1e-9]])
    model = lifted_model(A, B).with_realization(to_output_chain(np.zeros((1, 1)), np.ones((1, 1)), [1.0]))
    cfg = PTABConfig(regressor="zero")
    plant = LiftedLinearPlant(A, B)
    with pytest.raises(TrajectoryEscapeError) as info:
        run_closed_loop(plant, model, None, cfg, [1.0], t_end=5.0)
    assert info.value.record is not None and info.value.record.failure
    rec = run_closed_loop(plant, model, None, cfg, [1.0], t_end=5.0, raise_on_failure=False)
    assert "escaped" in rec.failure
    assert rec.times[-1] < 5.0
    assert np.all(np.isfinite(rec.x))


def test_tracking_reference():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    model = lifted_model(A, B).with_realization(to_output_chain(A, B, [1.0, 0.0]))
    cfg = PTABConfig(T=3.0, regressor="zero")
    ref = lambda t: (np.array([math.sin(t), math.cos(t)]), np.array([math.cos(t), -math.sin(t)]))
    rec = run_closed_loop(LiftedLinearPlant(A, B), model, None, cfg, [1.0, 0.0], t_end=4.0, reference=ref)
    k = int(round(3.5 / rec.dt))
    assert abs(rec.x[k, 0] - math.sin(rec.times[k])) < 1e-3


def test_trajectory_csv_round_trip(tmp_path, vdp_model, ptab_cfg):
    rec = run_closed_loop(van_der_pol(), vdp_model, None, ptab_cfg, [1.0, 0.0], t_end=0.2)
    p = tmp_path / "traj.csv"
    write_trajectory_csv(p, rec)
    with open(p) as fh:
        assert fh.readline().strip() == "t,x1,x2,u,e_norm,V,theta_hat_1,clamped"
    cols = read_trajectory_csv(p)
    np.testing.assert_array_equal(cols["x2"], rec.x[:, 1])
    np.testing.assert_array_equal(cols["u"], rec.u)
    np.testing.assert_array_equal(cols["theta_hat_1"], rec.theta_hat[:, 0])
