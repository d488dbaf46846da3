"""Shared fixtures: baths, mode sets, and one short propagated store."""

import numpy as np
import pytest

import deomkit as dk


@pytest.fixture(scope="session")
def bo_bath():
    """The standard strongly coupled oscillator bath used throughout."""
    return dk.SpectralDensity.brownian_oscillator(reorg=1.0, omega0=1.0,
                                                  zeta_damp=1.0)


@pytest.fixture(scope="session")
def bo_modes(bo_bath):
    """Small decomposition of the standard bath (K = 6)."""
    return dk.decompose_correlation(bo_bath, 1.0, 4)


@pytest.fixture(scope="session")
def drude_modes():
    """One-mode high-temperature Drude set: real zeta, self-paired."""
    j = dk.SpectralDensity.drude_lorentz(reorg=0.3, gamma_d=1.0)
    return dk.decompose_correlation(j, 0.4, 0)


@pytest.fixture(scope="session")
def et_trajectory(bo_modes):
    """Short electron-transfer run shared by moment and store tests."""
    model = dk.electron_transfer_model(0.6, 0.4, 1.0)
    store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 6)
    traj = dk.propagate(store, model, bo_modes, 5.0, dt=0.005,
                        integrator="lawson_rk4", sample_stride=100,
                        moment_order=4)
    return model, traj


def random_paired_store(modes, max_tier, dim_s, seed):
    """A store with exact Hermiticity pairing and unit tier-0 trace."""
    rng = np.random.default_rng(seed)
    store = dk.DDOStore.create(modes.n_modes, max_tier, dim_s)
    perm = store.conjugate_permutation(modes.bar)
    a = rng.normal(size=store.data.shape) + 1j * rng.normal(size=store.data.shape)
    store.data = 0.5 * (a + np.conj(np.transpose(a[perm], (0, 2, 1))))
    store.data[0] /= np.trace(store.data[0]).real
    return store
