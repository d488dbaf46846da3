"""Hierarchy right-hand side, integrators, conservation, steady states."""

import numpy as np
import pytest
from scipy.linalg import expm

import deomkit as dk
from deomkit.propagator import HierarchyGenerator

from conftest import random_paired_store

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def zero_coupling_modes(n_matsubara=2):
    j = dk.SpectralDensity.brownian_oscillator(0.0, 1.0, 1.0)
    return dk.decompose_correlation(j, 1.0, n_matsubara)


# ------------------------------------------------------------------- model

def test_system_model_validation():
    with pytest.raises(dk.ConfigError, match="Hermitian"):
        dk.SystemModel(h_s=np.array([[0.0, 1.0], [0.0, 0.0]]), q=SZ)
    with pytest.raises(dk.ConfigError, match="square"):
        dk.SystemModel(h_s=np.zeros((2, 3)), q=SZ)
    with pytest.raises(dk.ConfigError, match="same space"):
        dk.SystemModel(h_s=np.zeros((3, 3)), q=SZ)


def test_initial_state_validation(bo_modes):
    good = np.diag([0.7, 0.3]).astype(complex)
    store = dk.initial_state(good, bo_modes.n_modes, 2)
    assert np.all(store.data[1:] == 0.0)
    np.testing.assert_array_equal(store.data[0], good)
    with pytest.raises(dk.ConfigError, match="trace"):
        dk.initial_state(0.9 * good, bo_modes.n_modes, 2)
    with pytest.raises(dk.ConfigError, match="eigenvalue"):
        dk.initial_state(np.diag([1.001, -0.001]), bo_modes.n_modes, 2)
    with pytest.raises(dk.ConfigError, match="Hermitian"):
        dk.initial_state(np.array([[1.0, 0.2], [0.0, 0.0]]),
                         bo_modes.n_modes, 2)


# ------------------------------------------------------------------- rhs

def test_rhs_scalar_system_closed_form():
    # one real mode, one-dimensional system: two coupled scalars with an
    # exact solution  rho_1(t) = e^{-g t} rho_1(0) + (1 - e^{-g t}) * s,
    # where s = -i q (eta - conj(eta)) / g * rho_0 = 2 q Im(eta)/g.
    eta, g, q = 1.0 + 0.7j, 0.8, 1.3
    modes = dk.mode_set_from_arrays([eta], [g], beta=1.0)
    model = dk.SystemModel(h_s=np.zeros((1, 1)), q=np.array([[q]]))
    store = dk.initial_state(np.ones((1, 1)), 1, 1)
    store.data[1] = 0.35
    t_end = 1.5
    traj = dk.propagate(store, model, modes, t_end, dt=1e-3, integrator="rk4")
    s = 2.0 * q * eta.imag / g
    expect = np.exp(-g * t_end) * 0.35 + (1.0 - np.exp(-g * t_end)) * s
    assert traj.final.data[1].item() == pytest.approx(expect, abs=1e-11)
    assert traj.final.data[0].item() == pytest.approx(1.0, abs=1e-13)


def test_rhs_mismatched_mode_count(bo_modes):
    store = dk.DDOStore.create(3, 1, 2)
    model = dk.SystemModel(h_s=SZ, q=SZ)
    with pytest.raises(dk.ConfigError, match="mode count"):
        HierarchyGenerator(store, model, bo_modes)


def test_rhs_trace_of_tier0_derivative(bo_modes):
    store = random_paired_store(bo_modes, 2, 2, seed=3)
    model = dk.SystemModel(h_s=SX + 0.3 * SZ, q=SZ)
    gen = HierarchyGenerator(store, model, bo_modes)
    out = gen(store.data)
    assert abs(np.trace(out[0])) < 1e-13


def test_zero_coupling_phase_evolution():
    modes = zero_coupling_modes()
    eps = 0.9
    model = dk.pure_dephasing_model(eps)
    rho = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
    store = dk.initial_state(rho, modes.n_modes, 2)
    traj = dk.propagate(store, model, modes, 2.0, dt=1e-3, integrator="rk4")
    expect = 0.5 * np.exp(-1j * eps * 2.0)
    assert traj.final.data[0][0, 1] == pytest.approx(expect, abs=1e-12)
    assert np.max(np.abs(traj.final.data[1:])) == 0.0


# ------------------------------------------------------------- integrators

def test_rk4_fourth_order_convergence(bo_modes):
    model = dk.electron_transfer_model(0.6, 0.4, 1.0)
    rho = dk.donor_state()

    def final_rho0(dt):
        store = dk.initial_state(rho, bo_modes.n_modes, 3)
        return dk.propagate(store, model, bo_modes, 1.0, dt=dt,
                            integrator="rk4").final.data[0]

    ref = final_rho0(0.0025)
    e1 = np.max(np.abs(final_rho0(0.02) - ref))
    e2 = np.max(np.abs(final_rho0(0.01) - ref))
    assert 11.0 < e1 / e2 < 21.0   # dt^4 scaling, allowing reference bias


def test_lawson_matches_rk4(bo_modes):
    model = dk.electron_transfer_model(0.6, 0.4, 1.0)
    outs = {}
    for integ in ("rk4", "lawson_rk4"):
        store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 4)
        outs[integ] = dk.propagate(store, model, bo_modes, 2.0, dt=0.002,
                                   integrator=integ).final.data
    assert np.max(np.abs(outs["rk4"] - outs["lawson_rk4"])) < 1e-9


def test_rk45_matches_fixed_step(bo_modes):
    model = dk.electron_transfer_model(0.6, 0.4, 1.0)
    finals = {}
    for integ in ("rk4", "rk45"):
        store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 3)
        finals[integ] = dk.propagate(store, model, bo_modes, 1.5, dt=0.002,
                                     integrator=integ, rtol=1e-10,
                                     atol=1e-12).final.data[0]
    assert np.max(np.abs(finals["rk4"] - finals["rk45"])) < 1e-7


def test_unknown_integrator_rejected(bo_modes):
    store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 1)
    model = dk.spin_boson_model(0.5)
    with pytest.raises(dk.ConfigError, match="integrator"):
        dk.propagate(store, model, bo_modes, 1.0, integrator="euler")


def test_default_timestep_rk4(bo_modes):
    model = dk.pure_dephasing_model(1.0)
    dt = dk.default_timestep(model, bo_modes, "rk4")
    fastest = np.max(bo_modes.gamma.real)
    assert dt == pytest.approx(0.02 / fastest)


# ------------------------------------------------------------ conservation

def test_trace_and_pairing_conserved(et_trajectory):
    _, traj = et_trajectory
    assert traj.max_trace_err < 1e-10
    assert traj.max_herm_defect < 1e-9


def test_linearity(bo_modes):
    model = dk.spin_boson_model(0.5)
    s1 = random_paired_store(bo_modes, 2, 2, seed=21)
    s2 = random_paired_store(bo_modes, 2, 2, seed=22)
    mix = s1.copy()
    mix.data = 0.3 * s1.data + 0.7 * s2.data

    def run(store):
        return dk.propagate(store, model, bo_modes, 0.8, dt=0.004,
                            integrator="lawson_rk4").final.data

    combined = 0.3 * run(s1) + 0.7 * run(s2)
    assert np.max(np.abs(run(mix) - combined)) < 1e-9


def test_blowup_detected():
    j = dk.SpectralDensity.brownian_oscillator(1.0, 1.0, 1.0)
    modes = dk.decompose_correlation(j, 1.0, 2)
    model = dk.spin_boson_model(0.5)
    store = dk.initial_state(dk.donor_state(), modes.n_modes, 3)
    # dt far beyond the stability limit of the fastest Matsubara rate
    with pytest.raises(dk.NumericalError, match="blow-up"):
        dk.propagate(store, model, modes, 80.0, dt=2.0, integrator="rk4")


def test_snapshots_and_sampling(bo_modes):
    model = dk.spin_boson_model(0.5)
    store = dk.initial_state(dk.donor_state(), bo_modes.n_modes, 2)
    traj = dk.propagate(store, model, bo_modes, 1.0, dt=0.01,
                        integrator="rk4", sample_stride=20,
                        snapshot_times=(0.5,))
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(1.0)
    assert np.all(np.diff(traj.times) > 0)
    (t_snap, snap), = traj.snapshots
    assert t_snap == pytest.approx(0.5)
    assert snap.data.shape == store.data.shape


# ------------------------------------------------------------ steady state

def test_steady_state_residual_and_gibbs():
    # weak coupling, high temperature: the reduced steady state is close
    # to the Gibbs state of the bare system
    beta, v = 0.1, 0.5
    j = dk.SpectralDensity.brownian_oscillator(0.01, 1.0, 1.0)
    modes = dk.decompose_correlation(j, beta, 2)
    model = dk.spin_boson_model(v)
    result = dk.steady_state(model, modes, 4, tol=1e-9, t_max=300.0)
    assert result.converged
    assert result.residual <= 1e-9
    gibbs = expm(-beta * model.h_s)
    gibbs /= np.trace(gibbs).real
    assert np.max(np.abs(result.store.data[0] - gibbs)) < 5e-2


def test_steady_state_unique(drude_modes):
    model = dk.spin_boson_model(0.5)
    kw = dict(tol=1e-8, t_max=300.0)
    a = dk.steady_state(model, drude_modes, 6, **kw)
    b = dk.steady_state(model, drude_modes, 6, rho_init=dk.donor_state(), **kw)
    assert a.converged and b.converged
    assert np.max(np.abs(a.store.data[0] - b.store.data[0])) < 1e-6
