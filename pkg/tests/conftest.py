"""Shared fixtures: the reference Van der Pol identification and runs are built once."""

import numpy as np
import pytest

from koopman_ptab import PTABConfig, van_der_pol
from koopman_ptab.pipeline import collect_vdp, default_dictionary_spec, identify, simulate_many
from koopman_ptab.plants import REFERENCE_ICS


@pytest.fixture(scope="session")
def vdp_split():
    return collect_vdp(seed=0)


@pytest.fixture(scope="session")
def vdp_ident(vdp_split):
    train, val = vdp_split
    return identify(train, val, default_dictionary_spec(2, 0))


@pytest.fixture(scope="session")
def vdp_model(vdp_ident):
    return vdp_ident.model


@pytest.fixture(scope="session")
def ptab_cfg():
    return PTABConfig()


@pytest.fixture(scope="session")
def vdp_reference_runs(vdp_model, ptab_cfg):
    """(record, report) for the five reference initial conditions."""
    return simulate_many(van_der_pol(), vdp_model, ptab_cfg, REFERENCE_ICS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

