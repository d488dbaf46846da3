"""Time evolution of the coupled hierarchy.

The equation of motion for each member, with n_k the occupation of mode k
and n_k+- its raised/lowered neighbors (zero outside the truncation), is

    d rho_n / dt = -i [H, rho_n] - (sum_k n_k gamma_k) rho_n
                   - i sum_k [Q, rho_{n_k+}]
                   - i sum_k n_k (eta_k Q rho_{n_k-}
                                  - conj(eta_{bar k}) rho_{n_k-} Q).

The right-hand side is evaluated in vectorized form: the neighbor sums
are pre-assembled into sparse matrices acting on the index axis, so one
evaluation costs a handful of batched dim_s x dim_s products plus three
sparse-times-dense products.

Integrators: classic fixed-step RK4 (default), an integrating-factor
variant ("lawson_rk4") that removes the stiff diagonal damping and allows
step sizes set by the physical couplings rather than by the fastest
Matsubara rate, and adaptive RK45 delegated to scipy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import ConfigError, NumericalError
from .hierarchy import DDOStore

__all__ = [
    "SystemModel",
    "initial_state",
    "HierarchyGenerator",
    "default_timestep",
    "Trajectory",
    "propagate",
    "SteadyStateResult",
    "steady_state",
]

BLOWUP_NORM = 1e12

INTEGRATORS = ("rk4", "lawson_rk4", "rk45")


@dataclass(frozen=True)
class SystemModel:
    """System Hamiltonian and the (Hermitian) coupling operator."""

    h_s: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h_s, dtype=complex)
        q = np.asarray(self.q, dtype=complex)
        object.__setattr__(self, "h_s", h)
        object.__setattr__(self, "q", q)
        for name, m in (("h_s", h), ("q", q)):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ConfigError(f"{name} must be a square matrix, got {m.shape}")
            if np.max(np.abs(m - m.conj().T)) > 1e-12:
                raise ConfigError(f"{name} is not Hermitian within 1e-12")
        if h.shape != q.shape:
            raise ConfigError(
                f"h_s and q must act on the same space, got {h.shape} vs {q.shape}"
            )

    @property
    def dim(self):
        return self.h_s.shape[0]


def initial_state(rho_s, n_modes, max_tier, *, trace_tol=1e-8,
                  psd_tol=1e-10, max_count=None):
    """Store with tier 0 set to rho_s and every higher tier zero.

    This is the factorized (bare-bath) initial condition; rho_s must be a
    valid density matrix.
    """
    rho = np.asarray(rho_s, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ConfigError(f"rho_s must be square, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ConfigError("rho_s is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise ConfigError(f"rho_s has trace {tr}, expected 1")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -psd_tol:
        raise ConfigError(
            f"rho_s has negative eigenvalue {evals.min()}; not a state"
        )
    kwargs = {} if max_count is None else {"max_count": max_count}
    store = DDOStore.create(n_modes, max_tier, rho.shape[0], **kwargs)
    store.data[0] = rho
    return store


class HierarchyGenerator:
    """Pre-assembled right-hand side for one (store shape, model, modes)."""

    def __init__(self, store, model, modes):
        if model.dim != store.dim_s:
            raise ConfigError(
                f"model dimension {model.dim} != store dimension {store.dim_s}"
            )
        if modes.n_modes != store.n_modes:
            raise ConfigError(
                f"mode count {modes.n_modes} != store mode slots {store.n_modes}"
            )
        self.model = model
        self.modes = modes
        self.shape = store.data.shape
        n = len(store)
        occ = store.occupations
        gamma = modes.gamma
        eta = modes.eta
        eta_bar = modes.eta_bar_conj
        self.damping = occ @ gamma                       # (N,) complex
        rows_u, cols_u = [], []
        rows_d, cols_d, vals_e, vals_b = [], [], [], []
        for k in range(store.n_modes):
            up = store.raise_table[:, k]
            sel = np.nonzero(up >= 0)[0]
            rows_u.append(sel)
            cols_u.append(up[sel])
            dn = store.lower_table[:, k]
            sel = np.nonzero(dn >= 0)[0]
            nk = occ[sel, k]
            rows_d.append(sel)
            cols_d.append(dn[sel])
            vals_e.append(nk * eta[k])
            vals_b.append(nk * eta_bar[k])
        rows_u = np.concatenate(rows_u)
        cols_u = np.concatenate(cols_u)
        ones = np.ones(rows_u.size, dtype=complex)
        self.up_sum = sp.csr_matrix((ones, (rows_u, cols_u)), shape=(n, n))
        rows_d = np.concatenate(rows_d)
        cols_d = np.concatenate(cols_d)
        self.down_eta = sp.csr_matrix(
            (np.concatenate(vals_e), (rows_d, cols_d)), shape=(n, n))
        self.down_eta_bar = sp.csr_matrix(
            (np.concatenate(vals_b), (rows_d, cols_d)), shape=(n, n))

    def apply(self, data, *, include_damping=True):
        """d(data)/dt for a (N, d, d) stack."""
        n, d, _ = self.shape
        h, q = self.model.h_s, self.model.q
        qs = np.matmul(q, data)
        sq = np.matmul(data, q)
        out = -1j * (np.matmul(h, data) - np.matmul(data, h))
        if include_damping:
            out -= self.damping[:, None, None] * data
        flat = (qs - sq).reshape(n, d * d)
        out -= 1j * (self.up_sum @ flat).reshape(n, d, d)
        low = (self.down_eta @ qs.reshape(n, d * d)
               - self.down_eta_bar @ sq.reshape(n, d * d))
        out -= 1j * low.reshape(n, d, d)
        return out

    def __call__(self, data):
        return self.apply(data)


def default_timestep(model, modes, integrator="rk4", max_tier=1):
    """Conservative step size for the fixed-step integrators.

    For plain RK4 the step must resolve the fastest mode decay; the
    integrating-factor scheme only needs to resolve the Hamiltonian and
    the coupling strength (amplified by the occupied tier).
    """
    h_scale = float(np.linalg.norm(model.h_s, 2))
    if integrator == "rk4":
        rate = max(float(np.max(modes.gamma.real)), h_scale)
    else:
        q_scale = float(np.linalg.norm(model.q, 2))
        coupling = np.sqrt(max(1, max_tier) * float(np.sum(np.abs(modes.eta))))
        rate = max(h_scale, q_scale * coupling)
    if rate <= 0.0:
        return 0.01
    return 0.02 / rate


@dataclass
class Trajectory:
    """Sampled output of :func:`propagate`."""

    times: np.ndarray
    rho0: np.ndarray            # (n_samples, d, d)
    trace_err: np.ndarray
    herm_defect: np.ndarray
    raw_moments: np.ndarray | None
    snapshots: list
    final: DDOStore
    dt: float
    n_steps: int

    @property
    def max_trace_err(self):
        return float(np.max(self.trace_err))

    @property
    def max_herm_defect(self):
        return float(np.max(self.herm_defect))


def _check_blowup(store, threshold):
    norms = store.frobenius_norms()
    worst = int(np.argmax(norms))
    if norms[worst] > threshold:
        raise NumericalError(
            f"hierarchy blow-up: DDO {store.indices[worst]} has norm "
            f"{norms[worst]:.3e} > {threshold:.1e}; reduce the step size "
            "or check the mode set"
        )


def propagate(store, model, modes, t_end, *, dt=None, integrator="rk4",
              sample_stride=1, moment_order=0, snapshot_times=(),
              filter_threshold=0.0, rtol=1e-8, atol=1e-10,
              blowup_threshold=BLOWUP_NORM):
    """Evolve a store in place and sample observables along the way.

    Parameters
    ----------
    store : DDOStore
        Initial condition; consumed (evolved in place).
    model : SystemModel
    modes : DissipatonModeSet
    t_end : float
        Final time, > 0.
    dt : float, optional
        Fixed step (rounded so it divides t_end); default from
        :func:`default_timestep`.  Ignored by the adaptive integrator
        except as its initial step.
    integrator : {"rk4", "lawson_rk4", "rk45"}
    sample_stride : int
        Record observables every this many steps.
    moment_order : int
        If > 0, record raw bath-operator moments <F^n> up to this order.
    snapshot_times : sequence of float
        Times at which to keep a full copy of the store.
    filter_threshold : float
        If > 0, zero out DDOs whose Frobenius norm falls below this at
        every sampling point.  Approximation/performance knob; leave at 0
        for converged results.
    rtol, atol : float
        Adaptive-integrator tolerances (rk45 only).

    Returns
    -------
    Trajectory
    """
    if integrator not in INTEGRATORS:
        raise ConfigError(
            f"unknown integrator {integrator!r}; choose from {INTEGRATORS}")
    if t_end <= 0.0:
        raise ConfigError(f"t_end must be positive, got {t_end}")
    if sample_stride < 1:
        raise ConfigError("sample_stride must be >= 1")
    if moment_order:
        from .moments import MomentExtractor
        extractor = MomentExtractor(store, modes, moment_order)
    else:
        extractor = None

    gen = HierarchyGenerator(store, model, modes)
    if dt is None:
        dt = default_timestep(model, modes, integrator, store.max_tier)
    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps

    bar = modes.bar
    snapshot_steps = sorted({min(n_steps, max(0, int(round(ts / dt))))
                             for ts in snapshot_times})

    times, rho0s, tr_errs, defects, momss = [], [], [], [], []
    snapshots = []

    def record(step):
        t = step * dt
        times.append(t)
        rho0s.append(store.data[0].copy())
        tr_errs.append(abs(np.trace(store.data[0]).real - 1.0)
                       + abs(np.trace(store.data[0]).imag))
        defects.append(store.hermiticity_defect(bar))
        if extractor is not None:
            momss.append(extractor.raw_moments(store.data))
        if filter_threshold > 0.0:
            norms = store.frobenius_norms()
            store.data[norms < filter_threshold] = 0.0
        _check_blowup(store, blowup_threshold)
        if snapshot_steps and step == snapshot_steps[0]:
            snapshot_steps.pop(0)
            snapshots.append((t, store.copy()))

    if integrator == "rk45":
        _run_rk45(gen, store, dt, n_steps, sample_stride, record, rtol, atol,
                  extra_steps=snapshot_steps)
    else:
        lawson = integrator == "lawson_rk4"
        e_half = np.exp(-0.5 * dt * gen.damping)[:, None, None] if lawson else None
        e_full = np.exp(-dt * gen.damping)[:, None, None] if lawson else None
        record(0)
        y = store.data
        for step in range(1, n_steps + 1):
            if lawson:
                k1 = gen.apply(y, include_damping=False)
                k2 = gen.apply(e_half * (y + 0.5 * dt * k1),
                               include_damping=False)
                k3 = gen.apply(e_half * y + 0.5 * dt * k2,
                               include_damping=False)
                k4 = gen.apply(e_full * y + dt * (e_half * k3),
                               include_damping=False)
                y = (e_full * y
                     + (dt / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4))
            else:
                k1 = gen.apply(y)
                k2 = gen.apply(y + 0.5 * dt * k1)
                k3 = gen.apply(y + 0.5 * dt * k2)
                k4 = gen.apply(y + dt * k3)
                y = y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            store.data = y
            if step % sample_stride == 0 or step == n_steps or (
                    snapshot_steps and step == snapshot_steps[0]):
                record(step)

    return Trajectory(
        times=np.array(times), rho0=np.array(rho0s),
        trace_err=np.array(tr_errs), herm_defect=np.array(defects),
        raw_moments=np.array(momss) if extractor is not None else None,
        snapshots=snapshots, final=store, dt=dt, n_steps=n_steps)


def _run_rk45(gen, store, dt, n_steps, sample_stride, record, rtol, atol,
              extra_steps=()):
    shape = store.data.shape
    t_end = dt * n_steps
    sample_steps = sorted({0, n_steps}
                          | set(range(0, n_steps + 1, sample_stride))
                          | set(extra_steps))
    t_eval = [s * dt for s in sample_steps]

    def fun(_t, y):
        return gen.apply(y.reshape(shape)).ravel()

    sol = solve_ivp(fun, (0.0, t_end), store.data.ravel(), method="RK45",
                    t_eval=t_eval, rtol=rtol, atol=atol, first_step=dt)
    if not sol.success:
        raise NumericalError(f"adaptive integration failed: {sol.message}")
    for i, s in enumerate(sample_steps):
        store.data = sol.y[:, i].reshape(shape).copy()
        record(s)


@dataclass
class SteadyStateResult:
    store: DDOStore
    residual: float
    t_reached: float
    converged: bool


def steady_state(model, modes, max_tier, *, rho_init=None, tol=1e-8,
                 t_max=400.0, dt=None, integrator="lawson_rk4",
                 check_interval=2.0):
    """Propagate towards the stationary hierarchy.

    Stops when the max-norm of the full right-hand side drops below
    ``tol``.  A non-converged result is returned (flagged), not raised:
    the caller may well want the partial state for diagnostics.
    """
    if rho_init is None:
        d = model.dim
        rho_init = np.eye(d) / d
    store = initial_state(rho_init, modes.n_modes, max_tier)
    gen = HierarchyGenerator(store, model, modes)
    if dt is None:
        dt = default_timestep(model, modes, integrator, max_tier)
    t = 0.0
    residual = float(np.max(np.abs(gen.apply(store.data))))
    while residual > tol and t < t_max:
        chunk = min(check_interval, t_max - t)
        propagate(store, model, modes, chunk, dt=dt, integrator=integrator,
                  sample_stride=10**9)
        t += chunk
        residual = float(np.max(np.abs(gen.apply(store.data))))
    return SteadyStateResult(store=store, residual=residual, t_reached=t,
                             converged=residual <= tol)
