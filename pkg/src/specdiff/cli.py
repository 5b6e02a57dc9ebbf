"""Models, photon-stream simulation and g2 analysis for a spectrally diffusing two-level emitter.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config
from .correlator import (
    DEFAULT_ASYMPTOTE_WINDOW,
    LogBinSpec,
    NoBunchingError,
    correlate,
    make_linear_bins,
    make_log_bins,
    normalize,
    read_g2_csv,
    write_g2_csv,
)
from .fitting import FitError, fit_exp_decay, fit_g2_short, fit_gaussian_line, write_fit_json
from .inhomogeneous import QuadratureError, RegimeWarning
from .reproduce import FIGURES, OBSERVABLES, model_observable, reproduce, simulate_to_files
from .streams import StreamFormatError, read_stream
from .tls import ConvergenceError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
_NUMERICAL = (FitError, ConvergenceError, QuadratureError, NoBunchingError, FloatingPointError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _cmd_model(args) -> int:
    cfg = _config(args)
    for p in model_observable(cfg, args.observable, cfg.output_dir):
        print(p)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _config(args)
    manifest = simulate_to_files(cfg, cfg.output_dir, threads=args.threads)
    dump_config(cfg, os.path.join(cfg.output_dir, "config.yaml"))
    print(json.dumps(manifest["counts"], sort_keys=True))
    return EXIT_OK


def _duration_ticks(args, path_a):
    if args.duration_s is not None:
        return int(round(args.duration_s * 1e12))
    manifest = os.path.join(os.path.dirname(os.path.abspath(path_a)), "manifest.json")
    if os.path.exists(manifest):
        with open(manifest) as fh:
            return int(json.load(fh)["duration_ticks"])
    return None


def _cmd_correlate(args) -> int:
    cfg = _config(args)
    dur = _duration_ticks(args, args.inputs[0])
    a = read_stream(args.inputs[0], "A", dur)
    b = read_stream(args.inputs[1], "B", dur)
    if dur is None:
        # without a stated length, both records end at the later last tick
        end = max(a.duration_ticks, b.duration_ticks)
        a = read_stream(args.inputs[0], "A", end)
        b = read_stream(args.inputs[1], "B", end)
    if args.linear:
        half, width = args.linear
        edges = make_linear_bins(half * 1e-9, width * 1e-9)
    else:
        edges = make_log_bins(cfg.bin_spec())
    raw = correlate(a, b, edges, threads=args.threads)
    window = tuple(args.window) if args.window else DEFAULT_ASYMPTOTE_WINDOW
    curve = normalize(raw, edges, a, b, args.normalization, window=window)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "g2.csv")
    write_g2_csv(curve, path)
    print(path)
    return EXIT_OK


def _read_xy(path):
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: expected at least two columns")
    return data[:, 0], data[:, 1], (data[:, 2] if data.shape[1] > 2 else None)


def _cmd_fit(args) -> int:
    cfg = _config(args)
    if args.model in ("zero_detuning", "diffusive"):
        curve = read_g2_csv(args.curve)
        t1 = args.t1_ns * 1e-9 if args.t1_ns is not None else cfg.emitter.t1_ns * 1e-9
        result = fit_g2_short(curve, args.model, t1=t1, free_t1=args.free_t1)
    elif args.model == "exp_decay":
        result = fit_exp_decay(*_read_xy(args.curve))
    else:
        result = fit_gaussian_line(*_read_xy(args.curve))
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "fit.json")
    write_fit_json(result, path)
    print(path)
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    cfg = _config(args)
    out = os.path.join(cfg.output_dir, args.figure)
    for p in reproduce(cfg, args.figure, out, threads=args.threads):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")

    p = _Parser(prog="specdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("model", parents=[common], help="closed-form model curves as CSV")
    m.add_argument("observable", choices=OBSERVABLES)
    m.set_defaults(func=_cmd_model)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo photon streams")
    s.set_defaults(func=_cmd_simulate)

    c = sub.add_parser("correlate", parents=[common], help="g2 from two timestamp files")
    c.add_argument("inputs", nargs=2, help="channel A and B files (.phts binary or .csv ticks)")
    c.add_argument("--normalization", choices=("poisson_rate", "asymptote"), default="asymptote")
    c.add_argument("--window", nargs=2, type=float, metavar=("LO_S", "HI_S"), help="asymptote window [s]")
    c.add_argument("--linear", nargs=2, type=float, metavar=("HALF_NS", "WIDTH_NS"),
                   help="equal bins over +-HALF_NS instead of the configured log bins")
    c.add_argument("--duration-s", type=float, help="acquisition length; default from manifest.json")
    c.set_defaults(func=_cmd_correlate)

    f = sub.add_parser("fit", parents=[common], help="fit a curve and write FitResult JSON")
    f.add_argument("curve", help="g2 CSV, or x,y[,err] CSV for exp_decay / gaussian_line")
    f.add_argument("--model", choices=("zero_detuning", "diffusive", "exp_decay", "gaussian_line"),
                   default="zero_detuning")
    f.add_argument("--t1-ns", type=float, help="fixed lifetime for g2 fits (default from config)")
    f.add_argument("--free-t1", action="store_true", help="fit the lifetime too")
    f.set_defaults(func=_cmd_fit)

    r = sub.add_parser("reproduce", parents=[common], help="figure data bundles")
    r.add_argument("figure", choices=FIGURES)
    r.set_defaults(func=_cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegimeWarning)
            return args.func(args)
    except _NUMERICAL as exc:
        print(f"specdiff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, StreamFormatError, ValueError, OSError) as exc:
        print(f"specdiff: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
