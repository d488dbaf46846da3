"""Bath-field picture: quasi-distributions over the mode coordinates.

The hierarchy admits an exact change of representation to a field
rho_hat(x, t) over per-mode coordinates x_k, built on scaled Gaussian-
Hermite basis functions.  Its system trace P(x, t) obeys a continuity
equation with per-mode diffusion generators Gamma_k = gamma_k d_x(d_x + x)
and drift currents J_k = 2 xi_k tr[Q rho_hat].  This module reconstructs
slices of that field from a store, evaluates the stationarity residuals,
and projects fields back onto DDOs (the inverse transform).

Only dimensions carried by self-paired modes with real zeta are
reconstructible as real densities.  A conjugate 2-pair produces a field
whose imaginary part is genuinely nonzero (it is odd under swapping the
pair), so such requests are refused rather than silently realified.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ConfigError, NumericalError
from .moments import x_operator_table

__all__ = [
    "scaled_basis_values",
    "basis_function",
    "FieldSlice",
    "reconstruct",
    "probability_current",
    "SmoluchowskiResult",
    "smoluchowski_residual",
    "equilibrium_recurrence_residuals",
    "closure_residuals",
    "project_field_to_ddos",
    "default_grid",
]


def default_grid(half_width=8.0, n_points=401):
    return np.linspace(-half_width, half_width, n_points)


def scaled_basis_values(n_max, x):
    """Stack of the zeta-free basis functions phi~_0..phi~_n on a grid.

    phi~_0 = (2 pi)^{-1/2} exp(-x^2/2) and the premultiplied recurrence
    phi~_{n+1} = (x phi~_n - phi~_{n-1}) / (n+1), which is stable because
    the 1/n! scaling is built into the functions themselves.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape, dtype=float)
    out[0] = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    if n_max >= 1:
        out[1] = x * out[0]
    for n in range(1, n_max):
        out[n + 1] = (x * out[n] - out[n - 1]) / (n + 1)
    return out


def basis_function(n, x, zeta):
    """phi_n(x) = phi~_n(x) / zeta^n for one mode."""
    if n < 0:
        raise ConfigError(f"basis order must be >= 0, got {n}")
    vals = scaled_basis_values(n, x)[n]
    if n == 0:
        return vals.astype(complex)
    zeta = complex(zeta)
    if zeta == 0:
        raise ConfigError("zeta = 0 mode has no field representation")
    return vals / zeta**n


@dataclass
class FieldSlice:
    """A reconstructed field on a 1D or 2D grid of mode coordinates."""

    dims: tuple                 # mode positions carried by the grid axes
    grids: tuple                # one 1D array per dim
    rho: np.ndarray             # (*grid_shape, d, d) complex
    prob: np.ndarray            # (*grid_shape,) real
    currents: dict              # mode position -> (*grid_shape,) real


def _real_dims_or_raise(modes, dims):
    bar = modes.bar
    zeta = modes.zeta
    for k in dims:
        if bar[k] != k:
            raise ConfigError(
                f"mode {k} is half of a conjugate pair (partner {bar[k]}); "
                "the field over a complex pair is not a real density and is "
                "not reconstructed -- display real-rate modes instead"
            )
        if abs(zeta[k].imag) > 1e-12 * max(1.0, abs(zeta[k])) or zeta[k] == 0:
            raise ConfigError(
                f"mode {k} has zeta = {zeta[k]}: only real, nonzero zeta "
                "modes have a real field representation"
            )


def reconstruct(store, modes, dims, grids=None, *, q=None, real_tol=1e-9):
    """Evaluate the field on a grid over the chosen mode coordinates.

    All other modes are marginalized analytically (only their zero-
    occupation DDOs contribute).  With ``q`` given, the per-dimension
    probability currents are evaluated as well.

    Parameters
    ----------
    store : DDOStore
    modes : DissipatonModeSet
    dims : sequence of int
        One or two mode positions; must be self-paired real-zeta modes.
    grids : array or sequence of arrays, optional
        Coordinate grid per dimension (default: 401 points on [-8, 8]).
    q : ndarray, optional
        System coupling operator, enables current output.
    real_tol : float
        Largest tolerated relative imaginary residue of P.
    """
    dims = tuple(int(k) for k in dims)
    if not 1 <= len(dims) <= 2 or len(set(dims)) != len(dims):
        raise ConfigError(f"dims must be 1 or 2 distinct modes, got {dims}")
    _real_dims_or_raise(modes, dims)
    if grids is None:
        grids = [default_grid() for _ in dims]
    elif isinstance(grids, np.ndarray) and grids.ndim == 1:
        grids = [grids] * len(dims)
    grids = [np.asarray(g, dtype=float) for g in grids]
    if len(grids) != len(dims):
        raise ConfigError("need one grid per displayed dimension")

    occ = store.occupations
    others = [k for k in range(store.n_modes) if k not in dims]
    mask = np.ones(len(store), dtype=bool)
    if others:
        mask = (occ[:, others] == 0).all(axis=1)
    sel = np.nonzero(mask)[0]

    zeta = modes.zeta
    basis = [scaled_basis_values(store.max_tier, g) for g in grids]
    shape = tuple(len(g) for g in grids)
    rho = np.zeros(shape + (store.dim_s, store.dim_s), dtype=complex)
    for i in sel:
        w = 1.0 + 0.0j
        prof = None
        for ax, k in enumerate(dims):
            nk = occ[i, k]
            if nk:
                w /= zeta[k] ** nk
            vec = basis[ax][nk]
            prof = vec if prof is None else np.multiply.outer(prof, vec)
        rho += (w * prof)[..., None, None] * store.data[i]

    prob_c = np.einsum("...ii->...", rho)
    scale = float(np.max(np.abs(prob_c))) or 1.0
    if np.max(np.abs(prob_c.imag)) > real_tol * scale:
        raise NumericalError(
            "reconstructed P has imaginary residue "
            f"{np.max(np.abs(prob_c.imag)):.3e} (relative to max |P| = "
            f"{scale:.3e}); the store lacks Hermiticity pairing"
        )
    slc = FieldSlice(dims=dims, grids=tuple(grids), rho=rho,
                     prob=prob_c.real, currents={})
    if q is not None:
        for k in dims:
            slc.currents[k] = probability_current(slc, modes, q, k,
                                                  real_tol=real_tol)
    return slc


def probability_current(field, modes, q, k, *, real_tol=1e-9):
    """J_k = 2 xi_k tr[Q rho_hat(x)] on the slice's grid."""
    if k not in field.dims:
        raise ConfigError(f"mode {k} is not a displayed dimension of the slice")
    tq = np.einsum("ij,...ji->...", np.asarray(q, dtype=complex), field.rho)
    cur = 2.0 * modes.xi[k] * tq
    scale = max(float(np.max(np.abs(cur))), 1e-300)
    if np.max(np.abs(cur.imag)) > real_tol * max(1.0, scale):
        raise NumericalError(
            f"current J_{k} has imaginary residue "
            f"{np.max(np.abs(cur.imag)):.3e}"
        )
    return cur.real


def _d1(f, h, axis):
    # fourth-order central first derivative; edges (2 points) left as nan
    f = np.moveaxis(f, axis, 0)
    out = np.full_like(f, np.nan)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    return np.moveaxis(out, 0, axis)


def _d2(f, h, axis):
    f = np.moveaxis(f, axis, 0)
    out = np.full_like(f, np.nan)
    out[2:-2] = (-f[:-4] + 16.0 * f[1:-3] - 30.0 * f[2:-2]
                 + 16.0 * f[3:-1] - f[4:]) / (12.0 * h * h)
    return np.moveaxis(out, 0, axis)


def _interior(a, n_axes):
    sl = tuple(slice(2, -2) for _ in range(n_axes))
    return a[sl]


def _balance_terms(prob, currents, grids, dims, modes):
    gamma_term = np.zeros_like(prob)
    div = np.zeros_like(prob)
    for ax, k in enumerate(dims):
        h = grids[ax][1] - grids[ax][0]
        # x_k * P with x_k varying along axis `ax`
        shape = [1] * prob.ndim
        shape[ax] = len(grids[ax])
        xk = grids[ax].reshape(shape)
        g = modes.gamma[k].real
        gamma_term = gamma_term + g * (_d2(prob, h, ax) + _d1(xk * prob, h, ax))
        div = div + _d1(currents[k], h, ax)
    return gamma_term, div


@dataclass
class SmoluchowskiResult:
    residual: float
    estimate: float
    inconclusive: bool
    gamma_term: np.ndarray
    divergence: np.ndarray


def smoluchowski_residual(field, modes, q):
    """Stationarity defect of the continuity equation on the slice.

    Evaluates max |sum_k Gamma_k P - sum_k dJ_k/dx_k| over interior grid
    points, normalized by max |sum_k Gamma_k P|.  A second evaluation on
    the coarsened (every other point) grid gives a discretization
    estimate; when the residual is below it the verdict is flagged as
    discretization-limited rather than physical.
    """
    dims = field.dims
    currents = {k: field.currents.get(k) for k in dims}
    if any(c is None for c in currents.values()):
        for k in dims:
            currents[k] = probability_current(field, modes, q, k)
    nd = len(dims)

    def evaluate(prob, curr, grids):
        g_term, div = _balance_terms(prob, curr, grids, dims, modes)
        g_in, d_in = _interior(g_term, nd), _interior(div, nd)
        norm = float(np.nanmax(np.abs(g_in))) or 1.0
        return float(np.nanmax(np.abs(g_in - d_in))) / norm, g_term, div

    residual, g_term, div = evaluate(field.prob, currents, field.grids)

    coarse = tuple(slice(None, None, 2) for _ in range(nd))
    grids2 = [g[::2] for g in field.grids]
    res2, _, _ = evaluate(field.prob[coarse],
                          {k: currents[k][coarse] for k in dims}, grids2)
    estimate = abs(res2 - residual) / 15.0   # leading 4th-order error model
    return SmoluchowskiResult(residual=residual, estimate=estimate,
                              inconclusive=residual < estimate,
                              gamma_term=g_term, divergence=div)


def equilibrium_recurrence_residuals(store, modes, q, max_order):
    """Stationary x-moment recurrence defect, per occupation vector.

    At a steady state every occupation n with 1 <= |n| <= max_order obeys

        <x_n> = (2/gamma_n) sum_k [ xi_k n_k <Q x_{n_k-}>
                                    + gamma_k C(n_k,2) <x_{n_kk--}> ]

    with gamma_n = sum_k n_k gamma_k.  Returns {occ: residual} with each
    residual normalized by max(1, |<x_n>|).
    """
    xops = x_operator_table(store, modes, max_order)
    q = np.asarray(q, dtype=complex)
    gamma = modes.gamma
    xi = modes.xi
    out = {}
    for occ, xop in xops.items():
        tier = sum(occ)
        if tier < 1:
            continue
        lhs = complex(np.trace(xop))
        gamma_n = complex(np.dot(occ, gamma))
        rhs = 0.0 + 0.0j
        for k, nk in enumerate(occ):
            if nk == 0:
                continue
            low = occ[:k] + (nk - 1,) + occ[k + 1:]
            rhs += xi[k] * nk * np.trace(q @ xops[low])
            if nk >= 2:
                low2 = occ[:k] + (nk - 2,) + occ[k + 1:]
                rhs += gamma[k] * comb(nk, 2) * np.trace(xops[low2])
        rhs *= 2.0 / gamma_n
        out[occ] = abs(lhs - rhs) / max(1.0, abs(lhs))
    return out


_PAULI = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


def closure_residuals(store, modes, model, max_order):
    """Stationary closure defect of the Pauli-projected x-moment chain.

    For a two-level system the steady hierarchy ties each operator-valued
    moment X_n to its raised and lowered neighbors.  Projecting on A in
    {sigma_x, sigma_y, sigma_z} gives, per occupation n,

        i <[H,A] x_n> + i sum_k zeta_k <[Q,A] x_{n_k+}>
          + sum_k xi_k n_k <{Q,A} x_{n_k-}>
        = sum_k gamma_k (n_k <A x_n> - n_k (n_k-1) <A x_{kk--}>).

    Returns {(pauli, occ): residual} for |n| <= max_order, normalized by
    max(1, |rhs|).
    """
    if model.dim != 2:
        raise ConfigError("closure residuals are defined for two-level systems")
    if max_order + 1 > store.max_tier:
        raise ConfigError(
            f"closure at order {max_order} needs tier cutoff >= {max_order + 1}")
    xops = x_operator_table(store, modes, max_order + 1)
    h, q = model.h_s, model.q
    gamma, zeta, xi = modes.gamma, modes.zeta, modes.xi
    out = {}
    for occ in list(xops):
        if sum(occ) > max_order:
            continue
        for name, a in _PAULI.items():
            comm_ha = h @ a - a @ h
            lhs = 1j * np.trace(comm_ha @ xops[occ])
            rhs = 0.0 + 0.0j
            for k, nk in enumerate(occ):
                rhs += gamma[k] * nk * np.trace(a @ xops[occ])
                if nk >= 2:
                    low2 = occ[:k] + (nk - 2,) + occ[k + 1:]
                    rhs -= gamma[k] * nk * (nk - 1) * np.trace(a @ xops[low2])
            comm_qa = q @ a - a @ q
            anti_qa = q @ a + a @ q
            for k in range(store.n_modes):
                up = occ[:k] + (occ[k] + 1,) + occ[k + 1:]
                lhs += 1j * zeta[k] * np.trace(comm_qa @ xops[up])
                if occ[k]:
                    low = occ[:k] + (occ[k] - 1,) + occ[k + 1:]
                    lhs += xi[k] * occ[k] * np.trace(anti_qa @ xops[low])
            out[(name, occ)] = abs(lhs - rhs) / max(1.0, abs(rhs))
    return out


def project_field_to_ddos(field, modes, n_max):
    """Invert a one-dimensional field back into DDO matrices.

    rho_n = Int rho_hat(x) (zeta/sqrt(2))^n H_n(x/sqrt(2)) dx evaluated by
    trapezoid on the slice's grid (spectrally accurate for these smooth,
    Gaussian-decaying integrands).  Returns {n: matrix} for n <= n_max.
    """
    if len(field.dims) != 1:
        raise ConfigError("projection is defined for one-dimensional slices")
    k = field.dims[0]
    x = field.grids[0]
    zeta = modes.zeta[k]
    y = x / np.sqrt(2.0)
    hermite = np.empty((n_max + 1, x.size), dtype=float)
    hermite[0] = 1.0
    if n_max >= 1:
        hermite[1] = 2.0 * y
    for n in range(1, n_max):
        hermite[n + 1] = 2.0 * y * hermite[n] - 2.0 * n * hermite[n - 1]
    out = {}
    for n in range(n_max + 1):
        w = (zeta / np.sqrt(2.0)) ** n * hermite[n]
        out[n] = np.trapezoid(w[:, None, None] * field.rho, x, axis=0)
    return out
