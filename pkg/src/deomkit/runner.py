"""Config-driven runs: decompose, propagate, extract, write files.

A run configuration is JSON-compatible text with a versioned ``schema``
field.  The pipeline is decompose -> (verify reconstruction) -> propagate
-> moments -> optional field/recurrence diagnostics, emitting a moment
CSV, an optional field CSV, the mode set, and a machine-readable summary.
Identical configs produce bit-identical CSV output: enumeration order is
fixed and the default integrators are fixed-step.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.optimize import least_squares

from . import field as field_mod
from .bath import (SpectralDensity, decompose_correlation, reconstruction_error,
                   save_mode_set)
from .errors import ConfigError, NumericalError
from .models import (donor_state, electron_transfer_model, pure_dephasing_model,
                     spin_boson_model)
from .moments import MomentSeries
from .propagator import (INTEGRATORS, SystemModel, default_timestep,
                         initial_state, propagate)

__all__ = [
    "CONFIG_SCHEMA",
    "load_config",
    "validate_config",
    "build_bath",
    "build_model",
    "build_initial_state",
    "run",
    "run_sweep",
    "truncation_deltas",
    "dominant_frequency",
    "moments_csv_text",
    "field_csv_text",
]

CONFIG_SCHEMA = 1

_DEFAULTS = {
    "label": "",
    "dt": None,
    "integrator": "lawson_rk4",
    "sample_stride": 1,
    "moment_order": 4,
    "initial_state": "donor",
    "filter_threshold": 0.0,
    "reconstruction_tol": 1e-3,
    "reconstruction_window": None,
    "outputs": {},
}

_REQUIRED = ("schema", "model", "bath", "beta", "n_matsubara", "max_tier",
             "t_end")

_MODEL_KEYS = {
    "electron_transfer": {"bias", "coupling"},
    "spin_boson": {"tunneling", "bias"},
    "pure_dephasing": {"bias"},
    "custom": {"h_s", "q"},
}

_BATH_KEYS = {
    "brownian_oscillator": {"reorg", "omega0", "zeta_damp"},
    "drude_lorentz": {"reorg", "gamma_d"},
}


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def validate_config(raw):
    """Fill defaults and reject unknown or ill-typed fields."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(
            f"unsupported config schema {raw.get('schema')!r}; "
            f"this build reads schema {CONFIG_SCHEMA}")
    known = set(_REQUIRED) | set(_DEFAULTS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing config fields: {missing}")
    cfg = dict(_DEFAULTS)
    cfg.update(raw)

    for section, table in (("model", _MODEL_KEYS), ("bath", _BATH_KEYS)):
        block = cfg[section]
        if not isinstance(block, dict) or "type" not in block:
            raise ConfigError(f"{section} must be an object with a 'type'")
        kind = block["type"]
        if kind not in table:
            raise ConfigError(
                f"unknown {section} type {kind!r}; choose from {sorted(table)}")
        extra = set(block) - table[kind] - {"type"}
        if extra:
            raise ConfigError(f"unknown {section} fields: {sorted(extra)}")

    if not (isinstance(cfg["beta"], (int, float)) and cfg["beta"] > 0):
        raise ConfigError(f"beta must be > 0, got {cfg['beta']!r}")
    if not (isinstance(cfg["n_matsubara"], int) and cfg["n_matsubara"] >= 0):
        raise ConfigError("n_matsubara must be a non-negative integer")
    if not (isinstance(cfg["max_tier"], int) and cfg["max_tier"] >= 1):
        raise ConfigError("max_tier must be a positive integer")
    if cfg["integrator"] not in INTEGRATORS:
        raise ConfigError(
            f"unknown integrator {cfg['integrator']!r}; "
            f"choose from {INTEGRATORS}")
    if not (isinstance(cfg["t_end"], (int, float)) and cfg["t_end"] > 0):
        raise ConfigError("t_end must be > 0")
    if cfg["moment_order"] < 4:
        raise ConfigError("moment_order must be >= 4 (shape statistics)")
    if cfg["moment_order"] > cfg["max_tier"]:
        raise ConfigError(
            f"moment_order {cfg['moment_order']} needs max_tier >= itself")
    out = cfg["outputs"]
    if not isinstance(out, dict) or set(out) - {"field", "recurrences"}:
        raise ConfigError("outputs may contain only 'field' and 'recurrences'")
    return cfg


def build_bath(cfg):
    b = cfg["bath"]
    if b["type"] == "brownian_oscillator":
        return SpectralDensity.brownian_oscillator(
            reorg=b["reorg"], omega0=b["omega0"], zeta_damp=b["zeta_damp"])
    return SpectralDensity.drude_lorentz(reorg=b["reorg"], gamma_d=b["gamma_d"])


def build_model(cfg):
    m = cfg["model"]
    kind = m["type"]
    if kind == "electron_transfer":
        return electron_transfer_model(m["bias"], m["coupling"],
                                       cfg["bath"]["reorg"])
    if kind == "spin_boson":
        return spin_boson_model(m["tunneling"], m.get("bias", 0.0))
    if kind == "pure_dephasing":
        return pure_dephasing_model(m["bias"])
    h = _matrix_from_json(m["h_s"], "h_s")
    q = _matrix_from_json(m["q"], "q")
    return SystemModel(h_s=h, q=q)


def _matrix_from_json(entries, name):
    try:
        arr = np.array([[complex(c[0], c[1]) for c in row] for row in entries])
    except (TypeError, IndexError) as exc:
        raise ConfigError(
            f"{name} must be a nested list of [re, im] pairs") from exc
    return arr


def build_initial_state(cfg, model):
    init = cfg["initial_state"]
    if isinstance(init, str):
        d = model.dim
        if init == "donor":
            if d == 2:
                return donor_state()
            rho = np.zeros((d, d), dtype=complex)
            rho[0, 0] = 1.0
            return rho
        if init == "plus":
            if d != 2:
                raise ConfigError("'plus' initial state needs a 2-level model")
            return np.full((2, 2), 0.5, dtype=complex)
        if init == "maximally_mixed":
            return np.eye(d, dtype=complex) / d
        raise ConfigError(
            f"unknown initial_state {init!r}; use 'donor', 'plus', "
            "'maximally_mixed', or a matrix")
    return _matrix_from_json(init, "initial_state")


def _fmt(x):
    return format(float(x), ".17g")


def moments_csv_text(series):
    lines = ["t,F_mean,F2,F3,F4,sigma_F,skewness,kurtosis,trace_err,herm_err"]
    for i, t in enumerate(series.times):
        row = [t, series.raw[i, 0], series.raw[i, 1], series.raw[i, 2],
               series.raw[i, 3], series.sigma_f[i], series.skewness[i],
               series.kurtosis[i], series.trace_err[i], series.herm_defect[i]]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def field_csv_text(slc, include_rho=False):
    heads = [f"x{k}" for k in slc.dims] + ["P"]
    heads += [f"J{k}" for k in slc.dims if k in slc.currents]
    d = slc.rho.shape[-1]
    if include_rho:
        for i in range(d):
            for j in range(d):
                heads += [f"rho_{i}{j}_re", f"rho_{i}{j}_im"]
    lines = [",".join(heads)]
    mesh = np.meshgrid(*slc.grids, indexing="ij")
    flat_p = slc.prob.ravel()
    flat_x = [m.ravel() for m in mesh]
    flat_j = [slc.currents[k].ravel() for k in slc.dims if k in slc.currents]
    flat_rho = slc.rho.reshape(-1, d * d)
    for r in range(flat_p.size):
        row = [x[r] for x in flat_x] + [flat_p[r]] + [j[r] for j in flat_j]
        if include_rho:
            for z in flat_rho[r]:
                row += [z.real, z.imag]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _spectral_peak(t, y, pad_factor=8):
    """Fourier peak of the detrended signal, refined parabolically."""
    dt = t[1] - t[0]
    y = (y - y[-1]) * np.hanning(y.size)
    n = 1 << max(int(np.ceil(np.log2(y.size * pad_factor))), 3)
    spec = np.abs(np.fft.rfft(y, n))
    k = int(np.argmax(spec[1:])) + 1
    if 1 <= k < spec.size - 1 and spec[k] > 0:
        with np.errstate(divide="ignore"):
            la, lb, lc = np.log(spec[k - 1:k + 2])
        denom = la - 2.0 * lb + lc
        shift = 0.5 * (la - lc) / denom if np.isfinite(denom) and denom != 0 else 0.0
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    return 2.0 * np.pi * (k + shift) / (n * dt)


def dominant_frequency(times, values):
    """Angular frequency of the strongest oscillation in a sampled signal.

    Relaxation transients bury their oscillatory component under a broad
    low-frequency lobe, so a bare Fourier peak is unreliable (it can even
    vanish when the drift is strictly monotone).  Instead the signal is
    modelled as a smooth relaxation plus one exponentially damped
    oscillation,

        y(t) = c0 + c1 e^{-a1 t} + c2 e^{-a2 t}
                  + e^{-b t} (c3 cos wt + c4 sin wt),

    and w is found by variable-projection least squares: for each trial of
    the nonlinear rates the amplitudes c are solved linearly, so only
    (a1, a2, b, w) are iterated.  Multi-start over a frequency grid keeps
    the fit out of local minima; the Fourier peak is one of the starts.
    Requires uniform sampling.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 16:
        raise ConfigError("need at least 16 samples for a frequency estimate")
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ConfigError("frequency estimate needs uniform sampling")
    span = t[-1] - t[0]
    scale = float(np.max(np.abs(y - y[-1])))
    if scale < 1e-12 * max(1.0, abs(y[-1])):
        raise NumericalError(
            "no resolvable oscillation: the signal is constant at "
            f"{y[-1]:.6g}")

    def residual(p, weights=False):
        a1, a2, b, w = np.abs(p)
        cols = np.stack([np.ones_like(t), np.exp(-a1 * t), np.exp(-a2 * t),
                         np.exp(-b * t) * np.cos(w * t),
                         np.exp(-b * t) * np.sin(w * t)], axis=1)
        c, *_ = np.linalg.lstsq(cols, y, rcond=None)
        if weights:
            return c
        return cols @ c - y

    w_lo = 2.0 * np.pi / span          # at least one full period visible
    w_hi = 0.5 * np.pi / dt            # well below Nyquist
    starts = list(np.geomspace(max(w_lo, 1e-12), w_hi, 7))
    starts.append(_spectral_peak(t, y))
    best = None
    for w0 in starts:
        sol = least_squares(residual, [1.0 / span, 10.0 / span,
                                       2.0 / span, w0],
                            method="lm", max_nfev=4000)
        if best is None or sol.cost < best.cost:
            best = sol
    w = float(np.abs(best.x[3]))
    # On the sample grid the cos/sin columns at w and at its aliases about
    # the sampling rate coincide (up to the sign of the sine term), so the
    # optimiser may return a reflected copy with identical cost.  Fold it
    # back below the Nyquist rate.
    w_s = 2.0 * np.pi / dt
    w = w % w_s
    if w > 0.5 * w_s:
        w = w_s - w
    c = residual(best.x, weights=True)
    amp = float(np.hypot(c[3], c[4]))
    if amp < 1e-6 * scale or not (w_lo * 0.5 <= w <= w_hi * 2.0):
        raise NumericalError(
            "no resolvable oscillation: fitted amplitude "
            f"{amp:.3e} at frequency {w:.3e} (signal scale {scale:.3e})")
    return w


def _decompose_for(cfg):
    j = build_bath(cfg)
    modes = decompose_correlation(j, cfg["beta"], cfg["n_matsubara"])
    t_win = cfg["reconstruction_window"]
    if t_win is None:
        t_win = 5.0 * cfg["beta"]
    # start just off the origin: cutoff-free spectral densities have a
    # log-divergent C(0), which would poison the quadrature reference
    grid = np.linspace(0.0, t_win, 65)[1:]
    err = reconstruction_error(j, modes, grid)
    if err > cfg["reconstruction_tol"]:
        raise NumericalError(
            f"mode-set reconstruction error {err:.3e} exceeds tolerance "
            f"{cfg['reconstruction_tol']:.1e}; increase n_matsubara")
    return j, modes, err


def _propagate_for(cfg, modes, model, *, max_tier=None, dt=None):
    max_tier = cfg["max_tier"] if max_tier is None else max_tier
    store = initial_state(build_initial_state(cfg, model), modes.n_modes,
                          max_tier)
    if dt is None:
        dt = cfg["dt"]
    return propagate(
        store, model, modes, cfg["t_end"], dt=dt,
        integrator=cfg["integrator"], sample_stride=cfg["sample_stride"],
        moment_order=cfg["moment_order"],
        filter_threshold=cfg["filter_threshold"])


def run(cfg, out_dir, *, l_sweep=None):
    """Execute one configuration and write its output bundle.

    Writes ``modes.json``, ``moments.csv``, optional ``field.csv``, and
    ``summary.json`` under ``out_dir``.  On failure all partial outputs
    are removed before the error propagates.
    """
    if isinstance(cfg, str):
        cfg = load_config(cfg)
    else:
        cfg = validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        written.append(path)
        return path

    try:
        j, modes, recon_err = _decompose_for(cfg)
        save_mode_set(modes, os.path.join(out_dir, "modes.json"))
        written.append(os.path.join(out_dir, "modes.json"))

        model = build_model(cfg)
        traj = _propagate_for(cfg, modes, model)
        series = MomentSeries.from_trajectory(traj)
        emit("moments.csv", moments_csv_text(series))

        summary = {
            "schema": CONFIG_SCHEMA,
            "label": cfg["label"],
            "n_modes": modes.n_modes,
            "tier_cutoff": cfg["max_tier"],
            "hierarchy_size": len(traj.final),
            "time_step": traj.dt,
            "n_steps": traj.n_steps,
            "reconstruction_error": recon_err,
            "max_trace_err": traj.max_trace_err,
            "max_herm_defect": traj.max_herm_defect,
            "steady": {
                "f_mean": float(series.raw[-1, 0]),
                "sigma_f": float(series.sigma_f[-1]),
                "sigma_ratio": float(series.sigma_f[-1] / series.sigma_f[0]),
                "skewness": float(series.skewness[-1]),
                "kurtosis": float(series.kurtosis[-1]),
            },
            "assumptions": _assumptions(cfg),
        }
        try:
            summary["dominant_frequency"] = dominant_frequency(
                series.times, series.raw[:, 0])
        except (ConfigError, NumericalError):
            summary["dominant_frequency"] = None

        out_spec = cfg["outputs"]
        if "field" in out_spec:
            summary["field"] = _field_output(out_spec["field"], traj.final,
                                             modes, model, emit)
        if "recurrences" in out_spec:
            max_order = int(out_spec["recurrences"].get("max_order", 2))
            res = field_mod.equilibrium_recurrence_residuals(
                traj.final, modes, model.q, max_order)
            summary["recurrences"] = {
                "max_order": max_order,
                "max_residual": max(res.values()) if res else 0.0,
            }
        if l_sweep is not None:
            lo, hi = sorted(int(v) for v in l_sweep)
            summary["l_sweep"] = truncation_deltas(cfg, lo, hi)

        emit("summary.json",
             json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return summary
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise


def _assumptions(cfg):
    notes = []
    if cfg["initial_state"] == "donor":
        notes.append("initial state: population on the first basis state "
                     "(factorized from the bath)")
    if cfg["dt"] is None:
        notes.append("time step chosen automatically from operator norms")
    if cfg["model"]["type"] == "electron_transfer":
        notes.append("acceptor energy includes the reorganization shift; "
                     "all energies in units of the chosen system gap")
    return notes


def _field_output(spec, store, modes, model, emit):
    dims = tuple(spec.get("dims", (0,)))
    n_pts = int(spec.get("points", 401))
    half = float(spec.get("half_width", 8.0))
    grid = field_mod.default_grid(half, n_pts)
    slc = field_mod.reconstruct(store, modes, dims, grid, q=model.q)
    emit("field.csv", field_csv_text(slc, spec.get("include_rho", False)))
    result = field_mod.smoluchowski_residual(slc, modes, model.q)
    return {
        "dims": list(dims),
        "smoluchowski_residual": result.residual,
        "discretization_estimate": result.estimate,
        "discretization_limited": result.inconclusive,
    }


def truncation_deltas(cfg, l_lo, l_hi):
    """Max change of sampled observables between two tier cutoffs.

    Both runs share the same fixed step (resolved at the higher cutoff)
    so samples align in time; reported are max-abs differences of the
    tier-0 matrix entries and of the raw moments.
    """
    if l_lo >= l_hi:
        raise ConfigError(f"need l_lo < l_hi, got {l_lo} >= {l_hi}")
    j, modes, _ = _decompose_for(cfg)
    model = build_model(cfg)
    dt = cfg["dt"]
    if dt is None:
        dt = default_timestep(model, modes, cfg["integrator"], l_hi)
    runs = [_propagate_for(cfg, modes, model, max_tier=lv, dt=dt)
            for lv in (l_lo, l_hi)]
    d_rho = float(np.max(np.abs(runs[0].rho0 - runs[1].rho0)))
    d_mom = float(np.max(np.abs(runs[0].raw_moments - runs[1].raw_moments)))
    return {"l_lo": l_lo, "l_hi": l_hi, "delta_rho0": d_rho,
            "delta_moments": d_mom}


def _sweep_job(args):
    cfg, out_dir, l_sweep = args
    return run(cfg, out_dir, l_sweep=l_sweep)


def run_sweep(configs, out_root, *, labels=None, l_sweep=None,
              max_workers=None):
    """Run several configurations as independent parallel jobs.

    ``configs`` are config dicts or paths; each writes into
    ``out_root/<label>``.  Returns the summaries in input order.
    """
    cfgs = [load_config(c) if isinstance(c, str) else validate_config(c)
            for c in configs]
    if labels is None:
        labels = [c["label"] or f"job{i:03d}" for i, c in enumerate(cfgs)]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"sweep labels collide: {labels}")
    jobs = [(c, os.path.join(out_root, lab), l_sweep)
            for c, lab in zip(cfgs, labels)]
    if max_workers == 1 or len(jobs) == 1:
        return [_sweep_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_sweep_job, jobs))
