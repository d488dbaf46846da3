"""Ready-made two-level setups and their analytic reference results."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from .bath import _real_part_integrand
from .errors import ConfigError, QuadratureError
from .propagator import SystemModel

__all__ = [
    "electron_transfer_model",
    "pure_dephasing_model",
    "spin_boson_model",
    "donor_state",
    "system_gap",
    "dephasing_coherence_oracle",
    "DEPHASING_PREFACTOR",
]

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def electron_transfer_model(bias, coupling, reorg):
    """Donor/acceptor pair with reorganization-shifted acceptor energy.

    Basis order is (donor, acceptor): H = (bias + reorg)|1><1|
    + coupling (|0><1| + |1><0|), and the bath couples through
    Q = -|1><1| (the acceptor picks up the polarization shift).
    """
    h = np.array([[0.0, coupling], [coupling, bias + reorg]], dtype=complex)
    q = np.array([[0.0, 0.0], [0.0, -1.0]], dtype=complex)
    return SystemModel(h_s=h, q=q)


def pure_dephasing_model(bias):
    """H = (bias/2) sigma_z with Q = sigma_z: populations frozen."""
    return SystemModel(h_s=0.5 * bias * _SZ, q=_SZ.copy())


def spin_boson_model(tunneling, bias=0.0):
    """H = tunneling sigma_x + (bias/2) sigma_z, Q = sigma_z."""
    return SystemModel(h_s=tunneling * _SX + 0.5 * bias * _SZ, q=_SZ.copy())


def donor_state():
    """Population on the first basis state, no coherence."""
    return np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)


def system_gap(model):
    """Bohr frequency of a two-level model (difference of eigenvalues)."""
    if model.dim != 2:
        raise ConfigError("system_gap is defined for two-level models")
    ev = np.linalg.eigvalsh(model.h_s)
    return float(ev[1] - ev[0])


# The coherence decay exponent under pure dephasing carries a fixed
# prefactor set by the coupling convention (Q = sigma_z enters doubled in
# the commutator, squared in the second cumulant).  Calibrated against
# hierarchy runs in the test suite and frozen here.
DEPHASING_PREFACTOR = 4.0


def dephasing_coherence_oracle(j, beta, times, *, prefactor=DEPHASING_PREFACTOR,
                               epsabs=1e-12):
    """|rho_01(t)| / |rho_01(0)| for the pure-dephasing model, exactly.

    With populations frozen the off-diagonal element obeys a Gaussian
    (second-cumulant-exact) decay

        |rho_01(t)| = |rho_01(0)| exp(-pf * Int_0^t (t-s) Re C(s) ds).

    The double time integral is done analytically against the spectral
    representation of Re C, leaving one frequency quadrature per time:

        Phi(t) = (pf/pi) Int_0^inf J(w) coth(beta w/2) (1-cos(w t))/w^2 dw,

    evaluated with the 1-cos factor written as 2 sin^2(w t/2) to avoid
    cancellation and the w -> 0 limit handled by series.
    """
    t_arr = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t_arr < 0.0):
        raise ConfigError("oracle times must be >= 0")
    f_re = _real_part_integrand(j, beta)
    out = np.empty(t_arr.shape, dtype=float)
    for i, t in enumerate(t_arr.ravel()):
        if t == 0.0:
            out.ravel()[i] = 1.0
            continue

        def h(w, t=t):
            if w == 0.0:
                return f_re(0.0) * 0.5 * t * t
            s = math.sin(0.5 * w * t)
            return f_re(w) * 2.0 * s * s / (w * w)

        val, abserr = quad(h, 0.0, np.inf, limit=800, epsabs=epsabs,
                           epsrel=1e-11, full_output=1)[:2]
        if abserr > 1e-7 * (1.0 + abs(val)):
            raise QuadratureError(
                f"dephasing exponent quadrature did not converge at t={t} "
                f"(error estimate {abserr:.3e})", estimate=abserr)
        out.ravel()[i] = math.exp(-prefactor * val / np.pi)
    return out if np.ndim(times) else float(out[0])
