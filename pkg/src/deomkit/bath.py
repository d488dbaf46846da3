"""Bath correlation functions and their exponential decomposition.

This module owns everything on the bath side of the system/bath split:
spectral densities, the finite-temperature correlation function obtained
by quadrature of the fluctuation-dissipation integrand, and the expansion

    C(t) = sum_k eta_k * exp(-gamma_k * t),   t >= 0,

whose modes ("dissipatons") drive the coupled hierarchy in
:mod:`deomkit.propagator`.  Each mode carries a conjugate-partner index
``bar`` with ``gamma[bar[k]] == conj(gamma[k])`` and the derived
coefficients ``zeta`` and ``xi`` used by the moment and field layers.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError, QuadratureError

__all__ = [
    "SpectralKind",
    "SpectralDensity",
    "DissipatonMode",
    "DissipatonModeSet",
    "correlation_function",
    "decompose_correlation",
    "pair_conjugate_indices",
    "dissipaton_coefficients",
    "bath_variance",
    "reconstruction_error",
    "save_mode_set",
    "load_mode_set",
]

#: |beta * omega| below which the coth factor in the quadrature integrand
#: switches to its Laurent series (removes the 1/omega pole analytically).
_COTH_SERIES_CUTOFF = 1e-4

#: Relative tolerance used when matching gamma_k with conj(gamma_j).
PAIRING_RTOL = 1e-10


class SpectralKind(enum.Enum):
    BROWNIAN_OSCILLATOR = "brownian_oscillator"
    DRUDE_LORENTZ = "drude_lorentz"


@dataclass(frozen=True)
class SpectralDensity:
    """Antisymmetric spectral density J(omega) of a harmonic bath.

    Use the :meth:`brownian_oscillator` / :meth:`drude_lorentz`
    constructors rather than filling fields by hand.

    Parameters
    ----------
    kind : SpectralKind
        Functional family.
    reorg : float
        Reorganization energy (the overall coupling strength), >= 0.
    omega0 : float
        Oscillator frequency (Brownian oscillator only).
    zeta_damp : float
        Oscillator friction (Brownian oscillator only).
    gamma_d : float
        Inverse correlation time (Drude-Lorentz only).
    """

    kind: SpectralKind
    reorg: float
    omega0: float = 0.0
    zeta_damp: float = 0.0
    gamma_d: float = 0.0

    @classmethod
    def brownian_oscillator(cls, reorg, omega0, zeta_damp):
        """Underdamped Brownian oscillator,
        J = 2*reorg*omega0^2*zeta*w / ((w^2-omega0^2)^2 + (zeta*w)^2).
        """
        if reorg < 0.0:
            raise ConfigError(f"reorganization energy must be >= 0, got {reorg}")
        if omega0 <= 0.0 or zeta_damp <= 0.0:
            raise ConfigError(
                f"omega0 and zeta_damp must be positive, got {omega0}, {zeta_damp}"
            )
        if not omega0 > 0.5 * zeta_damp:
            raise ConfigError(
                "Brownian oscillator must be underdamped: require "
                f"omega0 > zeta_damp/2, got omega0={omega0}, zeta_damp={zeta_damp}"
            )
        return cls(SpectralKind.BROWNIAN_OSCILLATOR, reorg, omega0=omega0,
                   zeta_damp=zeta_damp)

    @classmethod
    def drude_lorentz(cls, reorg, gamma_d):
        """Drude-Lorentz form, J = 2*reorg*gamma_d*w / (w^2 + gamma_d^2)."""
        if reorg < 0.0:
            raise ConfigError(f"reorganization energy must be >= 0, got {reorg}")
        if gamma_d <= 0.0:
            raise ConfigError(f"gamma_d must be positive, got {gamma_d}")
        return cls(SpectralKind.DRUDE_LORENTZ, reorg, gamma_d=gamma_d)

    def __call__(self, omega):
        """Evaluate J(omega); odd in omega, positive for omega > 0."""
        w = np.asarray(omega, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ConfigError("spectral density evaluated at non-finite omega")
        if self.kind is SpectralKind.BROWNIAN_OSCILLATOR:
            num = 2.0 * self.reorg * self.omega0**2 * self.zeta_damp * w
            den = (w * w - self.omega0**2) ** 2 + (self.zeta_damp * w) ** 2
        else:
            num = 2.0 * self.reorg * self.gamma_d * w
            den = w * w + self.gamma_d**2
        out = num / den
        return out if out.ndim else float(out)

    def slope_at_zero(self):
        """d J / d omega at omega = 0 (J is odd, so J/omega -> slope)."""
        if self.kind is SpectralKind.BROWNIAN_OSCILLATOR:
            return 2.0 * self.reorg * self.zeta_damp / self.omega0**2
        return 2.0 * self.reorg / self.gamma_d

    def high_freq_tail(self):
        """Parameters (a, s) of the 1/omega tail: J ~ a*w/(w^2+s^2).

        Drude-Lorentz is exactly of that form; the Brownian oscillator
        falls off as 1/omega^3, so a = 0.  Quadratures subtract the tail
        (whose sine transform is known in closed form) because oscillatory
        extrapolation over a conditionally convergent 1/omega integrand is
        unreliable.
        """
        if self.kind is SpectralKind.DRUDE_LORENTZ:
            return 2.0 * self.reorg * self.gamma_d, self.gamma_d
        return 0.0, self.omega0


@dataclass(frozen=True)
class DissipatonMode:
    """One exponential mode of the correlation expansion.

    ``bar_index`` points at the conjugate partner (0-based, possibly the
    mode itself when gamma is real).  ``zeta`` and ``xi`` satisfy
    ``eta == zeta**2 + 1j*zeta*xi`` and are shared with the bath-field
    picture; see :func:`dissipaton_coefficients`.
    """

    eta: complex
    gamma: complex
    bar_index: int
    zeta: complex
    xi: complex


@dataclass(frozen=True)
class DissipatonModeSet:
    """An ordered collection of modes together with the temperature."""

    modes: tuple
    beta: float

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        bar = [m.bar_index for m in self.modes]
        for k, m in enumerate(self.modes):
            if m.gamma.real <= 0.0:
                raise ConfigError(
                    f"mode {k}: Re(gamma) must be positive, got {m.gamma}"
                )
            j = m.bar_index
            if not 0 <= j < len(self.modes) or bar[j] != k:
                raise ConfigError(f"bar_index table is not an involution at mode {k}")
            gj = self.modes[j].gamma
            if abs(gj - np.conj(m.gamma)) > PAIRING_RTOL * abs(m.gamma):
                raise ConfigError(
                    f"mode {k}: gamma[{j}] = {gj} is not conj(gamma[{k}]) = "
                    f"{np.conj(m.gamma)} within pairing tolerance"
                )

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def eta(self):
        return np.array([m.eta for m in self.modes], dtype=complex)

    @property
    def gamma(self):
        return np.array([m.gamma for m in self.modes], dtype=complex)

    @property
    def bar(self):
        return np.array([m.bar_index for m in self.modes], dtype=np.intp)

    @property
    def zeta(self):
        return np.array([m.zeta for m in self.modes], dtype=complex)

    @property
    def xi(self):
        return np.array([m.xi for m in self.modes], dtype=complex)

    @property
    def eta_bar_conj(self):
        """conj(eta[bar[k]]) for each k; the right-action Wick coefficient."""
        eta = self.eta
        return np.conj(eta[self.bar])

    def reconstruction(self, t):
        """sum_k eta_k exp(-gamma_k t) on a scalar or array t >= 0."""
        t = np.asarray(t, dtype=float)
        out = np.einsum("k,k...->...", self.eta,
                        np.exp(-np.multiply.outer(self.gamma, t)))
        return out if out.ndim else complex(out)


def _real_part_integrand(j, beta):
    slope = j.slope_at_zero()

    def f(w):
        x = beta * w
        if abs(x) < _COTH_SERIES_CUTOFF:
            jw = slope if w == 0.0 else j(w) / w
            return jw * (2.0 / beta + beta * w * w / 6.0)
        return j(w) / math.tanh(0.5 * x)

    return f


def _checked_quad(f, t, weight, epsabs):
    """quad on [0, inf) with optional Fourier weight; raises on bad error."""
    if weight is None:
        res = quad(f, 0.0, np.inf, limit=400, epsabs=epsabs, epsrel=epsabs,
                   full_output=1)
    else:
        res = quad(f, 0.0, np.inf, weight=weight, wvar=t, limlst=300,
                   limit=400, epsabs=epsabs, full_output=1)
    value, abserr = res[0], res[1]
    if abserr > 1e-7 * (1.0 + abs(value)):
        raise QuadratureError(
            f"bath correlation quadrature did not converge at t={t} "
            f"(achieved error estimate {abserr:.3e})",
            estimate=abserr,
        )
    return value, abserr


def correlation_function(j, beta, t, *, epsabs=1e-12, return_error=False):
    """Finite-temperature bath correlation function C(t) by quadrature.

    Evaluates (1/pi) * Int dw exp(-i w t) J(w) / (1 - exp(-beta w)) folded
    onto [0, inf), where the w -> 0 point of the integrand is handled by
    the analytic series of the coth factor.  This routine is deliberately
    independent of :func:`decompose_correlation` so it can serve as the
    oracle for it.

    Parameters
    ----------
    j : SpectralDensity
    beta : float
        Inverse temperature, > 0.
    t : float or array_like
        Times; negative values use C(-t) = conj(C(t)).
    epsabs : float
        Absolute quadrature target per part.
    return_error : bool
        Also return the worst quadrature error estimate.

    Returns
    -------
    complex or ndarray[complex], optionally with a float error estimate.
    """
    if beta <= 0.0:
        raise ConfigError(f"beta must be positive, got {beta}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    f_re = _real_part_integrand(j, beta)
    a_tail, s_tail = j.high_freq_tail()
    f_im = (lambda w: j(w) - a_tail * w / (w * w + s_tail * s_tail)) \
        if a_tail else j
    out = np.empty(t_arr.shape, dtype=complex)
    worst = 0.0
    for i, ti in enumerate(t_arr):
        ta = abs(ti)
        if ta == 0.0:
            re, e1 = _checked_quad(f_re, 0.0, None, epsabs)
            val, err = complex(re / np.pi), e1 / np.pi
        else:
            re, e1 = _checked_quad(f_re, ta, "cos", epsabs)
            im, e2 = _checked_quad(f_im, ta, "sin", epsabs)
            im += a_tail * 0.5 * np.pi * math.exp(-s_tail * ta)
            val, err = (re - 1j * im) / np.pi, max(e1, e2) / np.pi
        out[i] = np.conj(val) if ti < 0.0 else val
        worst = max(worst, err)
    result = out if np.ndim(t) else complex(out[0])
    return (result, worst) if return_error else result


def decompose_correlation(j, beta, n_matsubara):
    """Expand C(t) in exponentials via contour integration.

    The spectral-density poles in the lower half plane contribute one mode
    per pole (two for the Brownian oscillator, one for Drude-Lorentz); the
    Bose function contributes ``n_matsubara`` modes with real decay rates
    2*pi*n/beta and real amplitudes.  Mode order is fixed: density poles
    first (negative-imaginary gamma first for the oscillator pair), then
    Matsubara modes by increasing rate.

    Returns
    -------
    DissipatonModeSet
    """
    if beta <= 0.0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if n_matsubara < 0:
        raise ConfigError(f"n_matsubara must be >= 0, got {n_matsubara}")
    lam = j.reorg
    etas = []
    gammas = []
    if j.kind is SpectralKind.BROWNIAN_OSCILLATOR:
        w0, zd = j.omega0, j.zeta_damp
        omega_r = math.sqrt(w0 * w0 - 0.25 * zd * zd)
        pref = lam * w0 * w0 / omega_r
        g1 = 0.5 * zd - 1j * omega_r
        # Residues of J(w)/(1 - e^{-beta w}) at w = -Omega - i zeta/2 and
        # w = +Omega - i zeta/2 respectively.
        e1 = pref / (np.exp(beta * (omega_r + 0.5j * zd)) - 1.0)
        e2 = pref * (1.0 + 1.0 / (np.exp(beta * (omega_r - 0.5j * zd)) - 1.0))
        etas += [complex(e1), complex(e2)]
        gammas += [g1, np.conj(g1)]
    else:
        gd = j.gamma_d
        x = 0.5 * beta * gd
        if abs(math.sin(x)) < 1e-12:
            raise ConfigError(
                "beta*gamma_d/2 is a multiple of pi: Drude pole collides "
                "with a Matsubara pole; perturb the parameters"
            )
        etas.append(lam * gd * (1.0 / math.tan(x) - 1j))
        gammas.append(complex(gd))

    for n in range(1, n_matsubara + 1):
        nu = 2.0 * math.pi * n / beta
        if j.kind is SpectralKind.BROWNIAN_OSCILLATOR:
            w0, zd = j.omega0, j.zeta_damp
            den = (nu * nu + w0 * w0) ** 2 - (nu * zd) ** 2
            amp = -4.0 * lam * w0 * w0 * zd * nu / (beta * den)
        else:
            gd = j.gamma_d
            amp = 4.0 * lam * gd * nu / (beta * (nu * nu - gd * gd))
        etas.append(complex(amp))
        gammas.append(complex(nu))

    etas = np.array(etas, dtype=complex)
    gammas = np.array(gammas, dtype=complex)
    bar = pair_conjugate_indices(gammas)
    zetas, xis = dissipaton_coefficients(etas, bar)
    modes = tuple(
        DissipatonMode(eta=complex(etas[k]), gamma=complex(gammas[k]),
                       bar_index=int(bar[k]), zeta=complex(zetas[k]),
                       xi=complex(xis[k]))
        for k in range(len(etas))
    )
    return DissipatonModeSet(modes=modes, beta=float(beta))


def pair_conjugate_indices(gammas, rtol=PAIRING_RTOL):
    """Match each decay rate with its complex conjugate.

    Returns the involution ``bar`` with gamma[bar[k]] ~= conj(gamma[k]).
    Real rates pair with themselves.  A missing or ambiguous partner is a
    hard error: downstream symmetries (Hermiticity pairing of the
    hierarchy) silently break if the pairing is wrong.
    """
    gammas = np.asarray(gammas, dtype=complex)
    n = len(gammas)
    bar = np.full(n, -1, dtype=np.intp)
    for k in range(n):
        if bar[k] >= 0:
            continue
        target = np.conj(gammas[k])
        tol = rtol * abs(gammas[k])
        cands = [jx for jx in range(n)
                 if bar[jx] < 0 and abs(gammas[jx] - target) <= tol]
        if not cands:
            raise ConfigError(
                f"no conjugate partner for mode {k} (gamma={gammas[k]}); "
                "the mode set does not close under complex conjugation"
            )
        if len(cands) > 1:
            raise ConfigError(
                f"ambiguous conjugate partner for mode {k} (gamma="
                f"{gammas[k]}): candidates {cands}; degenerate rates must "
                "be merged before pairing"
            )
        jx = cands[0]
        bar[k] = jx
        bar[jx] = k
    return bar


def dissipaton_coefficients(etas, bar):
    """Split each amplitude as eta_k = zeta_k^2 + i zeta_k xi_k.

    ``zeta_k = sqrt((eta_k + conj(eta_bar(k)))/2)`` on the principal
    branch, with the partner forced to ``zeta_bar = conj(zeta_k)`` so the
    pair symmetry is exact by construction.  ``xi_k`` follows from the
    amplitude difference.  Self-paired modes with negative real amplitude
    get a purely imaginary zeta (and xi = 0); no branch can make those
    real, and all identities used downstream only require the product
    forms zeta^2 and zeta*xi.

    Raises
    ------
    ConfigError
        If zeta_k vanishes while the amplitudes are inconsistent
        (eta_k != conj(eta_bar(k))), which leaves xi_k undefined.
    """
    etas = np.asarray(etas, dtype=complex)
    bar = np.asarray(bar, dtype=np.intp)
    n = len(etas)
    zetas = np.zeros(n, dtype=complex)
    xis = np.zeros(n, dtype=complex)
    done = np.zeros(n, dtype=bool)
    for k in range(n):
        if done[k]:
            continue
        kb = int(bar[k])
        s = 0.5 * (etas[k] + np.conj(etas[kb]))
        d = etas[k] - np.conj(etas[kb])
        if abs(s) < 1e-300:
            if abs(d) > 1e-12 * max(1.0, abs(etas[k])):
                raise ConfigError(
                    f"mode {k}: zeta vanishes but eta_k != conj(eta_bar) "
                    f"(difference {d}); xi is undefined"
                )
            zetas[k] = xis[k] = 0.0
            if kb != k:
                zetas[kb] = xis[kb] = 0.0
                done[kb] = True
            done[k] = True
            continue
        zk = np.sqrt(s)
        xk = d / (2j * zk)
        zetas[k], xis[k] = zk, xk
        done[k] = True
        if kb != k:
            zetas[kb], xis[kb] = np.conj(zk), np.conj(xk)
            done[kb] = True
    return zetas, xis


def bath_variance(modeset, im_tol=1e-8):
    """<F^2> of the (decomposed) free bath: sum_k zeta_k^2 = Re sum_k eta_k.

    For any spectral density falling faster than 1/omega the amplitude sum
    is real outright: imaginary parts cancel exactly within each conjugate
    pair.  An Ohmic (1/omega) tail leaves a finite imaginary remainder on
    the self-paired principal mode -- that is the friction component, split
    off into xi_k, not part of the variance.  Imaginary weight sitting on a
    conjugate *pair* has no such reading and marks a set that cannot come
    from a stationary C(t); those are rejected.
    """
    paired_im = 0.0
    for k, m in enumerate(modeset.modes):
        if m.bar_index != k:
            paired_im += m.eta.imag
    s = complex(np.sum(modeset.eta))
    if abs(paired_im) > im_tol * max(1.0, abs(s)):
        raise ConfigError(
            f"mode amplitudes sum to {s} with imaginary part {paired_im:.3e} "
            "on conjugate pairs: the set is not a valid decomposition of a "
            "stationary C(t)"
        )
    return float(np.sum(modeset.zeta**2).real)


def reconstruction_error(j, modeset, t_grid=None, *, epsabs=1e-12):
    """Max relative deviation of the mode expansion from quadrature.

    Sampled on ``t_grid`` (default: 64 uniform points on [0, 5*beta]);
    normalized by the largest |C(t)| on the grid.
    """
    if t_grid is None:
        t_grid = np.linspace(0.0, 5.0 * modeset.beta, 64)
    t_grid = np.asarray(t_grid, dtype=float)
    c_quad = correlation_function(j, modeset.beta, t_grid, epsabs=epsabs)
    c_rec = modeset.reconstruction(t_grid)
    scale = np.max(np.abs(c_quad))
    if scale == 0.0:
        return float(np.max(np.abs(c_rec)))
    return float(np.max(np.abs(c_rec - c_quad)) / scale)


def save_mode_set(modeset, path):
    """Write a mode set as JSON (schema 1; bar_index is 0-based)."""
    payload = {
        "schema": 1,
        "beta": modeset.beta,
        "modes": [
            {
                "eta_re": m.eta.real,
                "eta_im": m.eta.imag,
                "gamma_re": m.gamma.real,
                "gamma_im": m.gamma.imag,
                "bar_index": m.bar_index,
            }
            for m in modeset.modes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_mode_set(path):
    """Read a mode set written by :func:`save_mode_set`.

    zeta/xi are recomputed from the amplitudes, so files produced by other
    implementations only need the eta/gamma/bar fields.
    """
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != 1:
        raise ConfigError(f"unsupported mode-set schema: {payload.get('schema')!r}")
    try:
        beta = float(payload["beta"])
        raw = payload["modes"]
        etas = np.array([m["eta_re"] + 1j * m["eta_im"] for m in raw], complex)
        gammas = np.array([m["gamma_re"] + 1j * m["gamma_im"] for m in raw], complex)
        bar = np.array([int(m["bar_index"]) for m in raw], dtype=np.intp)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed mode-set file {path}: {exc}") from exc
    zetas, xis = dissipaton_coefficients(etas, bar)
    modes = tuple(
        DissipatonMode(eta=complex(etas[k]), gamma=complex(gammas[k]),
                       bar_index=int(bar[k]), zeta=complex(zetas[k]),
                       xi=complex(xis[k]))
        for k in range(len(raw))
    )
    return DissipatonModeSet(modes=modes, beta=beta)


def mode_set_from_arrays(etas, gammas, beta, bar=None):
    """Assemble a mode set from raw eta/gamma arrays (pairing computed)."""
    etas = np.asarray(etas, dtype=complex)
    gammas = np.asarray(gammas, dtype=complex)
    if bar is None:
        bar = pair_conjugate_indices(gammas)
    zetas, xis = dissipaton_coefficients(etas, bar)
    modes = tuple(
        DissipatonMode(eta=complex(etas[k]), gamma=complex(gammas[k]),
                       bar_index=int(bar[k]), zeta=complex(zetas[k]),
                       xi=complex(xis[k]))
        for k in range(len(etas))
    )
    return DissipatonModeSet(modes=modes, beta=float(beta))
