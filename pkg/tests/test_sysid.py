import json
import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import linear_dataset, random_stable_discrete
from koopman_ptab.dictionary import build_dictionary
from koopman_ptab.errors import RankDeficientError, UncontrollableError
from koopman_ptab.sysid import (KoopmanModel, SnapshotDataset, controllability_matrix, discretize,
                                fit_edmdc, one_step_rmse, to_companion, to_continuous,
                                to_output_chain)

IDENT2 = build_dictionary({"kind": "identity", "n": 2})


def objective(A_d, B_d, data, d, ridge):
    Z = d.lift(data.states)
    R = Z[1:] - Z[:-1] @ A_d.T - np.outer(data.inputs, B_d.ravel())
    return float(np.sum(R**2) + ridge * (np.sum(A_d**2) + np.sum(B_d**2)))


def assert_chain_structure(comp, A, B):
    r = comp.order
    N = comp.N
    for i in range(r - 1):
        expect = np.zeros(N)
        expect[i + 1] = 1.0
        np.testing.assert_array_equal(comp.A_bar[i], expect)
    b = comp.B_bar.ravel()
    assert np.all(b[: r - 1] == 0) and b[r - 1] == comp.b_last != 0
    raw = comp.T_c @ A @ comp.T_c_inv
    assert np.linalg.norm(raw - comp.A_bar) <= 1e-8 * np.linalg.norm(A)


# -- dataset -------------------------------------------------------------------


def test_dataset_invariants():
    with pytest.raises(ValueError, match="M\\+1"):
        SnapshotDataset(np.zeros((3, 2)), np.zeros(3), 0.1)
    with pytest.raises(ValueError, match="dt"):
        SnapshotDataset(np.zeros((3, 2)), np.zeros(2), 0.0)
    with pytest.raises(ValueError, match="split_tag"):
        SnapshotDataset(np.zeros((3, 2)), np.zeros(2), 0.1, split_tag="test")
    d = SnapshotDataset(np.zeros((3, 2)), np.zeros(2), 0.5)
    assert d.M == 2 and d.n == 2
    np.testing.assert_allclose(d.times, [0.0, 0.5, 1.0])


# -- fit_edmdc -----------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_linear_system_recovered_exactly(seed):
    rng = np.random.default_rng(seed)
    A_d = random_stable_discrete(rng, 2)
    B_d = rng.standard_normal((2, 1))
    data = linear_dataset(A_d, B_d, 400, seed=seed)
    Ah, Bh, C = fit_edmdc(data, IDENT2, ridge=0.0)
    np.testing.assert_allclose(Ah, A_d, atol=1e-8, rtol=0)
    np.testing.assert_allclose(Bh, B_d, atol=1e-8, rtol=0)
    np.testing.assert_array_equal(C, np.eye(2))


def test_recovery_with_small_ridge_4d():
    rng = np.random.default_rng(11)
    A_d = random_stable_discrete(rng, 4)
    B_d = rng.standard_normal((4, 1))
    data = linear_dataset(A_d, B_d, 2000, seed=4)
    d = build_dictionary({"kind": "identity", "n": 4})
    Ah, Bh, _ = fit_edmdc(data, d, ridge=1e-10)
    assert np.max(np.abs(Ah - A_d)) <= 1e-6 and np.max(np.abs(Bh - B_d)) <= 1e-6


def test_zero_data_gives_zero_model():
    data = SnapshotDataset(np.zeros((20, 2)), np.zeros(19), 0.1)
    Ah, Bh, _ = fit_edmdc(data, IDENT2, ridge=1e-8)
    assert np.all(Ah == 0) and np.all(Bh == 0)


def test_rank_deficient_without_ridge():
    data = SnapshotDataset(np.zeros((20, 2)), np.zeros(19), 0.1)
    with pytest.raises(RankDeficientError) as info:
        fit_edmdc(data, IDENT2, ridge=0.0)
    assert info.value.rank == 0 and info.value.size == 3


def test_too_few_snapshots():
    data = SnapshotDataset(np.zeros((3, 2)), np.ones(2), 0.1)
    with pytest.raises(ValueError, match="N\\+1"):
        fit_edmdc(data, IDENT2)


def test_vdp_prediction_beats_zero_model(vdp_split, vdp_model):
    _, val = vdp_split
    d = vdp_model.dictionary
    N = d.N
    rmse = one_step_rmse(vdp_model.A_d, vdp_model.B_d, val, d)
    zero = one_step_rmse(np.zeros((N, N)), np.zeros((N, 1)), val, d)
    assert rmse < zero


def test_ridge_solution_is_a_minimum(vdp_split):
    train, _ = vdp_split
    d = build_dictionary({"kind": "gaussian-rbf", "n": 2, "N": 6}, train)
    short = SnapshotDataset(train.states[:1500], train.inputs[:1499], train.dt)
    ridge = 1e-6
    A_d, B_d, _ = fit_edmdc(short, d, ridge=ridge)
    base = objective(A_d, B_d, short, d, ridge)
    rng = np.random.default_rng(0)
    for _ in range(20):
        dA = rng.standard_normal(A_d.shape)
        dB = rng.standard_normal(B_d.shape)
        s = 1e-3 / np.sqrt(np.sum(dA**2) + np.sum(dB**2))
        assert objective(A_d + s * dA, B_d + s * dB, short, d, ridge) >= base


# -- continuous-time conversion --------------------------------------------------


def test_integrator_limit_uses_fallback():
    dt = 0.01
    b = np.array([[0.5], [-2.0]])
    with pytest.warns(RuntimeWarning):
        res = to_continuous(np.eye(2), b * dt, dt)
    assert res.path == "first_order"
    np.testing.assert_allclose(res.A, 0.0, atol=0)
    np.testing.assert_allclose(res.B, b, rtol=1e-14)


def test_negative_real_eigenvalue_falls_back():
    with pytest.warns(RuntimeWarning):
        res = to_continuous(np.diag([-0.5, 0.9]), np.ones((2, 1)), 0.1)
    assert res.path == "first_order"


def test_scalar_logarithm():
    dt = 0.05
    res = to_continuous(np.array([[np.exp(-dt)]]), np.array([[1.0 - np.exp(-dt)]]), dt)
    assert res.path == "logm"
    assert res.A[0, 0] == pytest.approx(-1.0, abs=1e-12)
    assert res.B[0, 0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matrix_exponential_round_trip(seed):
    rng = np.random.default_rng(100 + seed)
    n = 4
    M = rng.standard_normal((n, n))
    A_true = M - (np.max(np.linalg.eigvals(M).real) + 0.5) * np.eye(n)
    B_true = rng.standard_normal((n, 1))
    dt = 0.1
    A_d, B_d = discretize(A_true, B_true, dt)
    res = to_continuous(A_d, B_d, dt)
    assert res.path == "logm"
    np.testing.assert_allclose(res.A, A_true, atol=1e-9, rtol=0)
    np.testing.assert_allclose(res.B, B_true, atol=1e-9, rtol=0)
    A2, B2 = discretize(res.A, res.B, dt)
    assert np.max(np.abs(A2 - A_d)) <= 1e-8 and np.max(np.abs(B2 - B_d)) <= 1e-8
    assert np.linalg.norm(sla.expm(res.A * dt) - A_d) <= 1e-8 * np.linalg.norm(A_d)


def test_zoh_inverse_matches_closed_form_when_invertible():
    rng = np.random.default_rng(3)
    A_d = random_stable_discrete(rng, 3)
    B_d = rng.standard_normal((3, 1))
    res = to_continuous(A_d, B_d, 0.02)
    closed = res.A @ np.linalg.solve(A_d - np.eye(3), B_d)
    np.testing.assert_allclose(res.B, closed, rtol=1e-8, atol=1e-10)


# -- chain realizations ----------------------------------------------------------


def test_double_integrator_is_already_companion():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    comp = to_companion(A, B)
    np.testing.assert_allclose(comp.T_c, np.eye(2), atol=1e-15)
    assert comp.b_last == 1.0
    assert_chain_structure(comp, A, B)


def test_permutation_companion():
    A = np.array([[0.0, 0.0], [1.0, 0.0]])
    B = np.array([[1.0], [0.0]])
    comp = to_companion(A, B)
    np.testing.assert_allclose(comp.T_c, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    assert_chain_structure(comp, A, B)


def test_zero_input_is_uncontrollable():
    with pytest.raises(UncontrollableError) as info:
        to_companion(np.eye(2), np.zeros((2, 1)))
    assert info.value.rank == 0
    assert "dictionary" in str(info.value)
    with pytest.raises(UncontrollableError):
        to_output_chain(np.eye(2), np.zeros((2, 1)), [1.0, 0.0])


def test_rank_deficient_pair_reports_rank():
    A = np.diag([1.0, 2.0, 3.0])
    B = np.array([[1.0], [1.0], [0.0]])
    with pytest.raises(UncontrollableError) as info:
        to_companion(A, B)
    assert info.value.rank == 2


@pytest.mark.parametrize("seed", range(4))
def test_random_companion_structure(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 1))
    comp = to_companion(A, B)
    assert comp.order == 4 and comp.kind == "companion"
    assert_chain_structure(comp, A, B)
    np.testing.assert_allclose(comp.T_c @ B, comp.B_bar, atol=1e-10 * np.linalg.norm(comp.T_c @ B))


def test_output_chain_full_relative_degree_is_companion():
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -3.0, -3.0]])
    B = np.array([[0.0], [0.0], [2.0]])
    comp = to_output_chain(A, B, [1.0, 0.0, 0.0])
    assert comp.order == 3
    np.testing.assert_allclose(comp.T_c, np.eye(3), atol=1e-15)
    assert_chain_structure(comp, A, B)


def test_vdp_output_chain(vdp_model):
    comp = vdp_model.realization
    assert comp.kind == "output_chain" and comp.order == 2
    assert_chain_structure(comp, vdp_model.A, vdp_model.B)
    # the chain starts at the measured position x1
    np.testing.assert_array_equal(comp.T_c[0], vdp_model.C[0])
    assert comp.input_leak < 1e-3 * np.linalg.norm(vdp_model.B)


def test_vdp_full_companion_is_rejected(vdp_model):
    # the 12-dimensional lifted pair is numerically uncontrollable at the 1e-10 threshold
    s = np.linalg.svd(controllability_matrix(vdp_model.A, vdp_model.B), compute_uv=False)
    assert s[-1] / s[0] < 1e-10
    with pytest.raises(UncontrollableError) as info:
        to_companion(vdp_model.A, vdp_model.B)
    assert info.value.rank < vdp_model.N


def test_model_invariants_and_json(vdp_model):
    m = vdp_model
    d = m.dictionary
    np.testing.assert_array_equal(m.C, np.hstack([np.eye(2), np.zeros((2, d.N - 2))]))
    assert m.conversion_path == "logm"
    assert np.linalg.norm(sla.expm(m.A * m.dt) - m.A_d) <= 1e-8 * np.linalg.norm(m.A_d)
    doc = json.loads(json.dumps(m.to_dict()))
    assert set(doc) >= {"A", "B", "C", "A_d", "B_d", "dt", "delta0", "delta1", "dictionary",
                        "conversion_path"}
    back = KoopmanModel.from_dict(doc)
    np.testing.assert_array_equal(back.A, m.A)
    np.testing.assert_array_equal(back.realization.T_c, m.realization.T_c)
    assert back.delta0 == m.delta0 and back.delta1 == m.delta1
    with pytest.raises(ValueError):
        m.with_bound(-1.0, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_discretize_to_continuous_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    A_d = random_stable_discrete(rng, 3)
    B_d = rng.standard_normal((3, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = to_continuous(A_d, B_d, 0.01)
    A2, B2 = discretize(res.A, res.B, 0.01)
    assert np.max(np.abs(A2 - A_d)) <= 1e-8 and np.max(np.abs(B2 - B_d)) <= 1e-8
