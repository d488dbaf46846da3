"""Moment extraction: Wick route, x route, and the cumulant recursion."""

import numpy as np
import pytest

import deomkit as dk

from conftest import random_paired_store


@pytest.fixture(scope="module")
def gaussian_start(bo_modes):
    # factorized initial state: every tier above 0 is empty
    return dk.initial_state(dk.donor_state(), bo_modes.n_modes, 6)


# ------------------------------------------------------- t = 0 Wick values

def test_initial_moments_are_free_bath_gaussian(bo_modes, gaussian_start):
    var = dk.bath_variance(bo_modes)
    odd_even = [0.0, var, 0.0, 3 * var**2, 0.0, 15 * var**3]
    for order, expect in enumerate(odd_even, start=1):
        got = dk.hybrid_moment(gaussian_start, bo_modes, order)
        assert got == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_initial_x_route_matches_wick(bo_modes, gaussian_start):
    var = dk.bath_variance(bo_modes)
    assert dk.hybrid_moment_via_x(gaussian_start, bo_modes, 2) == \
        pytest.approx(var, rel=1e-12)
    assert dk.hybrid_moment_via_x(gaussian_start, bo_modes, 4) == \
        pytest.approx(3 * var**2, rel=1e-12)
    assert abs(dk.hybrid_moment_via_x(gaussian_start, bo_modes, 3)) < 1e-12


def test_initial_x_expectations(bo_modes, gaussian_start):
    # at t = 0 each coordinate is a standard Gaussian: <x_k> = 0, <x_k^2> = 1
    k = bo_modes.n_modes - 1
    occ1 = tuple(1 if i == k else 0 for i in range(bo_modes.n_modes))
    occ2 = tuple(2 if i == k else 0 for i in range(bo_modes.n_modes))
    assert dk.x_moment(gaussian_start, bo_modes, occ1) == 0.0
    assert dk.x_moment(gaussian_start, bo_modes, occ2) == pytest.approx(1.0)


# ------------------------------------------------------------- dual routes

def test_dual_route_on_random_state(bo_modes):
    store = random_paired_store(bo_modes, 5, 2, seed=7)
    for order in range(1, 5):
        a = dk.hybrid_moment(store, bo_modes, order, im_tol=1e-6)
        b = dk.hybrid_moment_via_x(store, bo_modes, order, im_tol=1e-6)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_dual_route_on_propagated_state(bo_modes, et_trajectory):
    _, traj = et_trajectory
    store = traj.final
    for order in range(1, 5):
        a = dk.hybrid_moment(store, bo_modes, order)
        b = dk.hybrid_moment_via_x(store, bo_modes, order)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_first_moment_is_tier1_trace_sum(bo_modes):
    store = random_paired_store(bo_modes, 3, 2, seed=11)
    total = 0.0 + 0.0j
    for k in range(bo_modes.n_modes):
        occ = tuple(1 if i == k else 0 for i in range(bo_modes.n_modes))
        total += np.trace(store.data[store.position[occ]])
    got = dk.hybrid_moment(store, bo_modes, 1, im_tol=1e-6)
    assert got == pytest.approx(total.real, abs=1e-12)


def test_x_moment_conjugation_pairing(bo_modes):
    # Hermiticity pairing of the store implies <x_n>* = s <x_nbar> with
    # s = prod_k (zeta_k* / zeta_kbar)^{n_k}; s = 1 for conjugate pairs,
    # (-1)^{n_k} for self-paired modes whose zeta is purely imaginary.
    store = random_paired_store(bo_modes, 3, 2, seed=13)
    bar = bo_modes.bar
    zeta = bo_modes.zeta
    for occ in store.indices[store.tier_slices[2]]:
        swapped = tuple(occ[bar[k]] for k in range(len(occ)))
        sign = np.prod([(np.conj(zeta[k]) / zeta[bar[k]]) ** nk
                        for k, nk in enumerate(occ)])
        a = dk.x_moment(store, bo_modes, occ)
        b = dk.x_moment(store, bo_modes, swapped)
        assert np.conj(a) == pytest.approx(sign * b, abs=1e-12)


# ------------------------------------------------ coefficient inversion

@pytest.mark.parametrize("seed,tier", [(3, 3), (4, 4)])
def test_x_operator_transform_inverts(bo_modes, seed, tier):
    store = random_paired_store(bo_modes, tier, 2, seed=seed)
    xops = dk.x_operator_table(store, bo_modes, tier)
    for occ in store.indices:
        back = dk.ddo_from_x_operators(xops, bo_modes, occ)
        ref = store.data[store.position[tuple(occ)]]
        assert np.max(np.abs(back - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_x_operator_transform_single_mode_deep():
    modes = dk.mode_set_from_arrays([1.0 + 0.7j], [0.8], beta=1.0)
    store = dk.DDOStore.create(1, 6, 2)
    rng = np.random.default_rng(5)
    store.data[:] = rng.normal(size=store.data.shape) \
        + 1j * rng.normal(size=store.data.shape)
    xops = dk.x_operator_table(store, modes, 6)
    for occ in store.indices:
        back = dk.ddo_from_x_operators(xops, modes, occ)
        ref = store.data[store.position[tuple(occ)]]
        assert np.max(np.abs(back - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_x_transform_rejects_zero_zeta():
    j = dk.SpectralDensity.brownian_oscillator(0.0, 1.0, 1.0)
    modes = dk.decompose_correlation(j, 1.0, 0)
    store = dk.initial_state(dk.donor_state(), modes.n_modes, 2)
    occ = (1,) + (0,) * (modes.n_modes - 1)
    with pytest.raises(dk.ConfigError, match="singular"):
        dk.x_operator(store, modes, occ)


# ---------------------------------------------------------------- cumulants

def test_cumulant_recursion_known_sequence():
    raw = np.array([1.0, 2.0, 5.0, 16.0])
    np.testing.assert_allclose(dk.cumulants_from_moments(raw),
                               [1.0, 1.0, 1.0, 2.0], atol=1e-14)


def test_cumulant_recursion_closed_forms():
    rng = np.random.default_rng(17)
    mu = rng.normal(size=4)
    k = dk.cumulants_from_moments(mu)
    m1, m2, m3, m4 = mu
    assert k[0] == pytest.approx(m1)
    assert k[1] == pytest.approx(m2 - m1**2)
    assert k[2] == pytest.approx(m3 - 3 * m2 * m1 + 2 * m1**3)
    assert k[3] == pytest.approx(
        m4 - 4 * m3 * m1 - 3 * m2**2 + 12 * m2 * m1**2 - 6 * m1**4)


def test_cumulants_vanish_for_gaussian_moments():
    m, v = 0.7, 1.9
    raw = np.array([m, v + m**2, m**3 + 3 * m * v,
                    3 * v**2 + 6 * m**2 * v + m**4])
    k = dk.cumulants_from_moments(raw)
    np.testing.assert_allclose(k, [m, v, 0.0, 0.0], atol=1e-12)


def test_cumulants_vectorized_along_leading_axes():
    raw = np.array([[1.0, 2.0, 5.0, 16.0], [0.0, 1.0, 0.0, 3.0]])
    out = dk.cumulants_from_moments(raw)
    np.testing.assert_allclose(out[0], [1.0, 1.0, 1.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(out[1], [0.0, 1.0, 0.0, 0.0], atol=1e-14)


# ----------------------------------------------------------------- policies

def test_imaginary_residue_rejected(bo_modes):
    store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 3)
    # break the Hermiticity pairing: a lone complex tier-1 trace
    store.data[1, 0, 0] = 0.5j
    with pytest.raises(dk.NumericalError, match="imaginary"):
        dk.hybrid_moment(store, bo_modes, 1)


def test_moment_order_beyond_cutoff(bo_modes):
    store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 2)
    with pytest.raises(dk.ConfigError, match="exceeds"):
        dk.hybrid_moment(store, bo_modes, 3)
    with pytest.raises(dk.ConfigError, match="exceeds"):
        dk.hybrid_moment_via_x(store, bo_modes, 3)


def test_extractor_matches_single_shot(bo_modes):
    store = random_paired_store(bo_modes, 4, 2, seed=23)
    ex = dk.MomentExtractor(store, bo_modes, 4, im_tol=1e-6)
    got = ex.raw_moments(store.data)
    want = [dk.hybrid_moment(store, bo_modes, n, im_tol=1e-6)
            for n in range(1, 5)]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_series_requires_recorded_moments(bo_modes):
    model = dk.spin_boson_model(0.5)
    store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 2)
    traj = dk.propagate(store, model, bo_modes, 0.1, dt=0.01,
                        integrator="rk4")
    with pytest.raises(dk.ConfigError, match="moment_order"):
        dk.MomentSeries.from_trajectory(traj)


def test_series_statistics_consistency(et_trajectory):
    _, traj = et_trajectory
    ser = dk.MomentSeries.from_trajectory(traj)
    k = dk.cumulants_from_moments(ser.raw.real)
    np.testing.assert_allclose(ser.sigma_f, np.sqrt(k[:, 1]), rtol=1e-12)
    np.testing.assert_allclose(ser.skewness, k[:, 2] / k[:, 1] ** 1.5,
                               rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(ser.kurtosis, k[:, 3] / k[:, 1] ** 2,
                               rtol=1e-10, atol=1e-12)
    assert abs(ser.skewness[0]) <= 1e-8 and abs(ser.kurtosis[0]) <= 1e-8
