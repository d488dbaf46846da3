"""Moments and cumulants of the collective bath coupling operator.

Two independent routes to the same numbers:

* the operator route, combining free-bath Wick contractions with the
  traces of same-tier DDOs (:func:`hybrid_moment`);
* the field route, passing through the expectation values of the
  quasi-distribution coordinates x_k (:func:`hybrid_moment_via_x`).

Their agreement to near round-off is one of the strongest internal
consistency checks the package has, so both are kept first-class.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import comb, factorial

import numpy as np

from .bath import bath_variance
from .errors import ConfigError, NumericalError

__all__ = [
    "irreducible_moment",
    "hybrid_moment",
    "x_operator",
    "x_moment",
    "x_operator_table",
    "ddo_from_x_operators",
    "hybrid_moment_via_x",
    "cumulants_from_moments",
    "MomentExtractor",
    "MomentSeries",
]


def _realify(z, im_tol, what):
    z = complex(z)
    if abs(z.imag) > im_tol * max(1.0, abs(z)):
        raise NumericalError(
            f"{what} has imaginary residue {z.imag:.3e} (value {z}); "
            "exceeds tolerance, refusing to realify"
        )
    return z.real


def _double_factorial_odd(m):
    # (2m-1)!! with the empty product for m = 0
    out = 1
    for j in range(1, 2 * m, 2):
        out *= j
    return out


def _multinomial(occ):
    total = factorial(sum(occ))
    for nk in occ:
        total //= factorial(nk)
    return total


def irreducible_moment(store, order):
    """Same-tier DDO trace sum: sum over |n| = order of |n|!/prod(n_k!) tr rho_n.

    Order 0 gives the tier-0 trace (1 for a normalized state).
    """
    if order < 0:
        raise ConfigError(f"order must be >= 0, got {order}")
    if order > store.max_tier:
        raise ConfigError(
            f"moment order {order} exceeds the tier cutoff {store.max_tier}; "
            "insufficient truncation for the requested moment"
        )
    sl = store.tier_slices[order]
    traces = np.einsum("nii->n", store.data[sl])
    weights = np.array([_multinomial(occ) for occ in store.indices[sl]],
                       dtype=float)
    return complex(weights @ traces)


def hybrid_moment(store, modes, order, *, im_tol=1e-8):
    """<F^n> from Wick pairings of the free bath plus DDO trace sums."""
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    var = bath_variance(modes)
    total = 0.0 + 0.0j
    for m in range(order // 2 + 1):
        total += (comb(order, 2 * m) * _double_factorial_odd(m) * var**m
                  * irreducible_moment(store, order - 2 * m))
    return _realify(total, im_tol, f"<F^{order}>")


def _check_zetas(modes, occ):
    zeta = modes.zeta
    for k, nk in enumerate(occ):
        if nk > 0 and zeta[k] == 0:
            raise ConfigError(
                f"mode {k} has zeta = 0 but occupation {nk}: the x-coordinate "
                "transform is singular for this mode"
            )


def x_operator(store, modes, occ):
    """System operator whose trace is <x_n> for the occupation vector occ."""
    occ = tuple(int(v) for v in occ)
    if len(occ) != store.n_modes or sum(occ) > store.max_tier:
        raise ConfigError(f"occupation {occ} does not fit the store")
    _check_zetas(modes, occ)
    zeta = modes.zeta
    acc = np.zeros((store.dim_s, store.dim_s), dtype=complex)
    for m in product(*(range(nk // 2 + 1) for nk in occ)):
        coeff = 1.0 + 0.0j
        target = []
        for k, (nk, mk) in enumerate(zip(occ, m)):
            coeff *= (zeta[k] ** (-(nk - 2 * mk)) * 0.5**mk
                      * factorial(nk) / (factorial(mk) * factorial(nk - 2 * mk)))
            target.append(nk - 2 * mk)
        acc += coeff * store.data[store.position[tuple(target)]]
    return acc


def x_moment(store, modes, occ):
    return complex(np.trace(x_operator(store, modes, occ)))


def x_operator_table(store, modes, max_order):
    """All x-operators with tier <= max_order, keyed by occupation."""
    if max_order > store.max_tier:
        raise ConfigError(
            f"max_order {max_order} exceeds tier cutoff {store.max_tier}")
    table = {}
    for tier in range(max_order + 1):
        for occ in store.indices[store.tier_slices[tier]]:
            table[occ] = x_operator(store, modes, occ)
    return table


def ddo_from_x_operators(xops, modes, occ):
    """Invert the x-operator transform: rebuild rho_n from a table of X's."""
    occ = tuple(int(v) for v in occ)
    _check_zetas(modes, occ)
    zeta = modes.zeta
    d = next(iter(xops.values())).shape[0]
    acc = np.zeros((d, d), dtype=complex)
    for m in product(*(range(nk // 2 + 1) for nk in occ)):
        coeff = 1.0 + 0.0j
        target = []
        for k, (nk, mk) in enumerate(zip(occ, m)):
            coeff *= (zeta[k] ** nk * 0.5**mk * (-1.0) ** mk
                      * factorial(nk) / (factorial(mk) * factorial(nk - 2 * mk)))
            target.append(nk - 2 * mk)
        acc += coeff * xops[tuple(target)]
    return acc


def hybrid_moment_via_x(store, modes, order, *, im_tol=1e-8):
    """<F^n> assembled from x-coordinate expectation values.

    Algebraically identical to :func:`hybrid_moment`; numerically it
    exercises the zeta/xi split and the x-operator transform instead of
    the Wick contractions, which is what makes the comparison a test.
    """
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    if order > store.max_tier:
        raise ConfigError(
            f"moment order {order} exceeds the tier cutoff {store.max_tier}")
    zeta = modes.zeta
    total = 0.0 + 0.0j
    for occ in store.indices[store.tier_slices[order]]:
        w = float(factorial(order))
        for k, nk in enumerate(occ):
            if nk:
                w = w * zeta[k] ** nk / factorial(nk)
        total += w * x_moment(store, modes, occ)
    return _realify(total, im_tol, f"<F^{order}> (x route)")


def cumulants_from_moments(raw):
    """Cumulants K_1..K_n from raw moments <F>, <F^2>, ..., <F^n>.

    ``raw[..., i]`` holds the (i+1)-th raw moment; the recursion
    K_n = mu_n - sum_{m=1}^{n-1} C(n-1, m) K_{n-m} mu_m is applied along
    the last axis.
    """
    raw = np.asarray(raw, dtype=float)
    cum = np.zeros_like(raw)
    for n in range(1, raw.shape[-1] + 1):
        acc = raw[..., n - 1].copy()
        for m in range(1, n):
            acc -= comb(n - 1, m) * cum[..., n - m - 1] * raw[..., m - 1]
        cum[..., n - 1] = acc
    return cum


class MomentExtractor:
    """Precomputed weights for fast on-the-fly raw moments of one store."""

    def __init__(self, store, modes, n_max, im_tol=1e-8):
        if n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if n_max > store.max_tier:
            raise ConfigError(
                f"moment order {n_max} needs tier cutoff >= {n_max}, "
                f"store has {store.max_tier}"
            )
        self.n_max = n_max
        self.im_tol = im_tol
        self.variance = bath_variance(modes)
        self.slices = [store.tier_slices[n] for n in range(n_max + 1)]
        self.weights = [
            np.array([_multinomial(occ) for occ in store.indices[sl]], float)
            for sl in self.slices
        ]

    def raw_moments(self, data):
        traces = np.einsum("nii->n", data)
        irr = [self.weights[n] @ traces[self.slices[n]]
               for n in range(self.n_max + 1)]
        out = np.empty(self.n_max, dtype=float)
        for order in range(1, self.n_max + 1):
            total = 0.0 + 0.0j
            for m in range(order // 2 + 1):
                total += (comb(order, 2 * m) * _double_factorial_odd(m)
                          * self.variance**m * irr[order - 2 * m])
            out[order - 1] = _realify(total, self.im_tol, f"<F^{order}>")
        return out


@dataclass
class MomentSeries:
    """Raw moments, cumulants and shape statistics along a trajectory."""

    times: np.ndarray
    raw: np.ndarray          # (n_samples, n_max)
    cumulants: np.ndarray
    sigma_f: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    trace_err: np.ndarray
    herm_defect: np.ndarray

    @classmethod
    def from_trajectory(cls, traj):
        if traj.raw_moments is None or traj.raw_moments.shape[1] < 4:
            raise ConfigError(
                "trajectory must carry raw moments up to order 4 "
                "(propagate with moment_order >= 4)"
            )
        raw = traj.raw_moments
        cum = cumulants_from_moments(raw)
        k2 = cum[:, 1]
        if np.any(k2 <= 0.0):
            bad = int(np.argmax(k2 <= 0.0))
            raise NumericalError(
                f"variance K_2 = {k2[bad]} non-positive at t = "
                f"{traj.times[bad]}; shape statistics undefined"
            )
        sigma = np.sqrt(k2)
        return cls(times=traj.times, raw=raw, cumulants=cum, sigma_f=sigma,
                   skewness=cum[:, 2] / sigma**3, kurtosis=cum[:, 3] / sigma**4,
                   trace_err=traj.trace_err, herm_defect=traj.herm_defect)
