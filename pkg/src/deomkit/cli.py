"""Command-line front end.

Subcommands: decompose, run, oracle, field, sweep.  Exit codes: 0 on
success, 2 for configuration errors, 3 for numerical failures, 4 when a
convergence check is inconclusive.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bath import reconstruction_error, save_mode_set
from .errors import ConfigError, ConvergenceInconclusive, NumericalError
from .models import dephasing_coherence_oracle
from .runner import (_decompose_for, build_bath, load_config, run, run_sweep)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4


def _parser():
    p = argparse.ArgumentParser(
        prog="deomkit",
        description="dissipaton-hierarchy dynamics for open quantum systems")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="reserved; dynamics are deterministic")

    sp = sub.add_parser("decompose",
                        help="fit the bath correlation to exponential modes")
    common(sp)

    sp = sub.add_parser("run", help="propagate one configuration")
    common(sp)
    sp.add_argument("--l-sweep", default=None, metavar="L1,L2",
                    help="also compare two tier cutoffs")

    sp = sub.add_parser("oracle",
                        help="analytic pure-dephasing coherence decay")
    common(sp)

    sp = sub.add_parser("field",
                        help="run and reconstruct the bath quasi-distribution")
    common(sp)
    sp.add_argument("--residual-tol", type=float, default=5e-3,
                    help="acceptable stationarity residual")

    sp = sub.add_parser("sweep", help="run several configs in parallel")
    sp.add_argument("--config", required=True, nargs="+",
                    help="JSON config paths")
    sp.add_argument("--out", default=".", help="output root directory")
    sp.add_argument("--seed", type=int, default=None,
                    help="reserved; dynamics are deterministic")
    sp.add_argument("--l-sweep", default=None, metavar="L1,L2")
    sp.add_argument("--workers", type=int, default=None)
    return p


def _parse_l_sweep(text):
    if text is None:
        return None
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(
            f"--l-sweep expects two integers 'L1,L2', got {text!r}") from exc
    return (lo, hi)


def _cmd_decompose(args):
    cfg = load_config(args.config)
    j, modes, err = _decompose_for(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "modes.json")
    save_mode_set(modes, path)
    print(f"wrote {path}: {modes.n_modes} modes, "
          f"reconstruction error {err:.3e}")
    return EXIT_OK


def _cmd_run(args):
    summary = run(load_config(args.config), args.out,
                  l_sweep=_parse_l_sweep(args.l_sweep))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_oracle(args):
    cfg = load_config(args.config)
    if cfg["model"]["type"] != "pure_dephasing":
        raise ConfigError("the oracle applies to the pure_dephasing model")
    j = build_bath(cfg)
    n = max(int(round(cfg["t_end"] / 0.05)), 64)
    times = np.linspace(0.0, cfg["t_end"], n + 1)
    coh = dephasing_coherence_oracle(j, cfg["beta"], times)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "oracle.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,coherence_ratio\n")
        for t, c in zip(times, coh):
            fh.write(f"{t:.17g},{c:.17g}\n")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_field(args):
    cfg = load_config(args.config)
    if "field" not in cfg["outputs"]:
        raise ConfigError("config must request outputs.field")
    summary = run(cfg, args.out)
    res = summary["field"]
    print(json.dumps(res, indent=2, sort_keys=True))
    if res["smoluchowski_residual"] > args.residual_tol:
        if res["discretization_limited"]:
            raise ConvergenceInconclusive(
                f"stationarity residual {res['smoluchowski_residual']:.3e} "
                "is discretization-limited; refine the grid")
        raise NumericalError(
            f"stationarity residual {res['smoluchowski_residual']:.3e} "
            f"exceeds {args.residual_tol:.1e}")
    return EXIT_OK


def _cmd_sweep(args):
    summaries = run_sweep(list(args.config), args.out,
                          l_sweep=_parse_l_sweep(args.l_sweep),
                          max_workers=args.workers)
    for s in summaries:
        steady = s["steady"]
        print(f"{s['label'] or '(unlabeled)'}: f_mean={steady['f_mean']:.6g} "
              f"sigma_ratio={steady['sigma_ratio']:.6g} "
              f"skewness={steady['skewness']:.6g} "
              f"kurtosis={steady['kurtosis']:.6g}")
    return EXIT_OK


_COMMANDS = {
    "decompose": _cmd_decompose,
    "run": _cmd_run,
    "oracle": _cmd_oracle,
    "field": _cmd_field,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceInconclusive as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
