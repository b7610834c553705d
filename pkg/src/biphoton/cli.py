"""Command-line entry point.

Exit codes: 0 success, 2 validation, 3 numeric failure (non-convergence or
degenerate fit), 4 I/O.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from . import files
from .config import PRESETS, build, load_config_file, merge, parse_angle
from .errors import BiphotonError, DegenerateFitError
from .fit import MAX_ITER, FitSpec, fit, linear_scale_guess, sweep_visibility
from .model import fringe_count, model_curve, phase_sweep, visibility
from .sim import emit_timetags, histogram, sample_pair_delays, simulate_sweep

log = logging.getLogger("biphoton")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--preset", choices=sorted(PRESETS), default=S,
                   help="parameter preset (default paper-unbalanced)")
    p.add_argument("--config", default=S, help="YAML config file layered over the preset")
    p.add_argument("--seed", type=int, default=S, help="RNG seed")
    p.add_argument("--out", default=S, help="output path ('-' for stdout)")
    p.add_argument("-v", "--verbose", action="store_true", default=S)


def _physics(p: argparse.ArgumentParser):
    g = p.add_argument_group("model overrides")
    g.add_argument("--regime", help="unbalanced | perfect-balanced | rough-balanced")
    g.add_argument("--theta", help="phase, e.g. 1.2, 1.2rad or 70deg")
    g.add_argument("--delta-l-mm", type=float)
    g.add_argument("--delta", type=float, help="relative gain")
    g.add_argument("--c1", type=float)
    g.add_argument("--c2", type=float)
    g.add_argument("--linewidth-mhz", type=float, help="OPO linewidth / 2pi in MHz")
    g.add_argument("--tau-r-ns", type=float)
    g.add_argument("--t-d-ns", type=float)
    g.add_argument("--tau-0-ns", type=float)
    g.add_argument("--bin-width-ns", type=float)
    g.add_argument("--window-ns", type=float, nargs=2, metavar=("LO", "HI"))


def _mc(p: argparse.ArgumentParser):
    g = p.add_argument_group("Monte Carlo")
    g.add_argument("--n-pairs", type=int)
    g.add_argument("--accidental-fraction", type=float)
    g.add_argument("--phase-jitter", help="rms phase noise per event (rad or deg suffix)")
    g.add_argument("--pair-rate", type=float, help="pairs per second for time tags")
    g.add_argument("--chunks", type=int, default=1)
    g.add_argument("--workers", type=int, default=1)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biphoton",
        description="Two-photon interference of comb-spectrum photon pairs in a "
                    "Michelson interferometer: model, simulate, fit.",
    )
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="write the analytic correlation curve")
    _common(p)
    _physics(p)
    p.add_argument("--resolution-ns", type=float, default=0.001)

    p = sub.add_parser("simulate", help="Monte Carlo coincidence histogram")
    _common(p)
    _physics(p)
    _mc(p)
    p.add_argument("--timetags", help="also write the two-channel time-tag stream here")

    p = sub.add_parser("fit", help="fit a histogram CSV")
    _common(p)
    _physics(p)
    p.add_argument("histogram")
    p.add_argument("--free", help="comma-separated free parameters (default c1,c2,theta)")
    p.add_argument("--theta0", help="initial phase (defaults to the configured theta)")
    p.add_argument("--report", help="also write the text report here")
    p.add_argument("--max-iter", type=int, default=MAX_ITER)

    p = sub.add_parser("sweep", help="phase sweep of window-integrated coincidences")
    _common(p)
    _physics(p)
    _mc(p)
    p.add_argument("--n-theta", type=int, default=64)
    p.add_argument("--tau-window-ns", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--mc", action="store_true", help="simulate instead of integrating the model")

    p = sub.add_parser("visibility", help="visibility of a sweep CSV")
    _common(p)
    p.add_argument("sweep")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    o: Dict[str, Any] = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    g = lambda name: getattr(args, name, None)  # noqa: E731
    put("source", "linewidth_mhz", g("linewidth_mhz"))
    put("source", "tau_r_ns", g("tau_r_ns"))
    put("source", "delta", g("delta"))
    put("detection", "t_d_ns", g("t_d_ns"))
    put("detection", "tau_0_ns", g("tau_0_ns"))
    put("detection", "bin_width_ns", g("bin_width_ns"))
    put("detection", "window_ns", list(g("window_ns")) if g("window_ns") else None)
    put("interferometer", "regime", g("regime"))
    put("interferometer", "theta", g("theta"))
    put("interferometer", "delta_l_mm", g("delta_l_mm"))
    put("interferometer", "c1", g("c1"))
    put("interferometer", "c2", g("c2"))
    put("sim", "n_pairs", g("n_pairs"))
    put("sim", "accidental_fraction", g("accidental_fraction"))
    put("sim", "phase_jitter_sigma", g("phase_jitter"))
    put("sim", "pair_rate", g("pair_rate"))
    put("sim", "seed", g("seed"))
    if g("free"):
        put("fit", "free", g("free"))
    return o


def _layers(args: argparse.Namespace) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    if getattr(args, "config", None):
        data = load_config_file(args.config)
    if getattr(args, "preset", None):
        data["preset"] = args.preset
    return merge(data, _overrides(args))


def cmd_model(args) -> int:
    run = build(_layers(args))
    curve = model_curve(run.cfg, run.src, run.det, args.resolution_ns * 1e-9)
    files.write_curve(args.out, curve)
    return EXIT_OK


def cmd_simulate(args) -> int:
    layers = _layers(args)
    run = build(layers)
    delays = sample_pair_delays(run.sim, run.src, run.det, run.cfg,
                                chunks=args.chunks, workers=args.workers)
    snapshot = merge(run.raw, {"preset": run.preset})
    snapshot.pop("outputs", None)
    snapshot.pop("fit", None)
    files.write_histogram(args.out, histogram(delays, run.det, snapshot))
    if args.timetags:
        files.write_timetags(args.timetags, emit_timetags(delays, run.sim, run.det))
    return EXIT_OK


def cmd_fit(args) -> int:
    run = build(_layers(args))
    hist = files.read_histogram(args.histogram)
    initial = dict(run.fit_initial)
    if args.theta0 is not None:
        initial["theta"] = parse_angle(args.theta0)
    spec = FitSpec.from_models(run.src, run.det, run.cfg, free=run.fit_free, **initial)
    c1, c2 = linear_scale_guess(hist, spec)
    if "c1" not in initial:
        spec.values["c1"] = c1
    if "c2" not in initial:
        spec.values["c2"] = c2
    try:
        result = fit(hist, spec, max_iter=args.max_iter)
    except DegenerateFitError as exc:
        log.error("degenerate fit: %s", exc)
        return EXIT_NUMERIC
    report = result.report()
    print(report)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
    if args.out != "-":
        files.write_kv(args.out, result.as_dict())
    if not result.converged:
        log.error("fit did not converge after %d iterations", result.iterations)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = build(_layers(args))
    thetas = 2.0 * math.pi * np.arange(args.n_theta) / args.n_theta
    window = tuple(w * 1e-9 for w in args.tau_window_ns) if args.tau_window_ns else run.det.window
    if args.mc:
        hists = simulate_sweep(thetas, run.sim, run.src, run.det, run.cfg)
        vis, rows = sweep_visibility(hists, window)
    else:
        rows = phase_sweep(run.cfg.regime, window, thetas, run.src, run.det, run.cfg)
        vis = visibility(rows)
    files.write_sweep(args.out, rows, vis)
    log.warning("visibility %.6f, fringes per sweep %d", vis, fringe_count(rows))
    return EXIT_OK


def cmd_visibility(args) -> int:
    rows = files.read_sweep(args.sweep)
    print(f"visibility {visibility(rows):.9f}")
    print(f"fringes {fringe_count(rows)}")
    return EXIT_OK


COMMANDS = {
    "model": cmd_model,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "visibility": cmd_visibility,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    for name, default in (("out", "-"), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        sys.stderr.close()
        return EXIT_OK
    except files.FormatError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except DegenerateFitError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except BiphotonError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (OSError, yaml.YAMLError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
