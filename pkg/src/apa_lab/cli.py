"""``apa-lab`` command line: predict, simulate, figure, verify.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration error,
3 numerical or runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance
from . import theory as th
from .apa import DegenerateRegressorError
from .config import ConfigError, load_experiments
from .montecarlo import EnsembleRunError, noise_variance, run_ensemble
from .signals import ImpulseResponseFileError

log = logging.getLogger("apa_lab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
FIGURES = ("diag_eav", "e_energy_sweep", "mse_sweep", "component_energy")
DEFAULT_OUT = "apa_lab_out"
SCALE_NOTE = ("desk scale: filter length and ensemble size come from the experiment file "
              "(defaults M=64, J=2000) instead of the full-scale M=512, J=100000; "
              "tolerances in comparisons are statistical")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class OutputSet:
    """Files written by one command; each lands atomically and all are removed
    if the command fails part way."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.written = []

    def _commit(self, name, write):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        tmp = self.dir / f".{name}.tmp"
        try:
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                write(fh)
            os.replace(tmp, path)
        finally:
            tmp.unlink(missing_ok=True)
        self.written.append(path)
        log.info("wrote %s", path)
        return path

    def csv(self, name, header, rows):
        def write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return self._commit(name, write)

    def json(self, name, obj):
        return self._commit(name, lambda fh: fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n"))

    def discard(self):
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written.clear()


def _metadata(spec, command, extra=None):
    meta = {
        "experiment": spec.name,
        "command": command,
        "version": __version__,
        "scale": SCALE_NOTE,
        "models": list(spec.model_tokens),
        "M": list(spec.M),
        "K": list(spec.K),
        "mu": list(spec.mu) if spec.schedule == "constant" else None,
        "schedule": spec.schedule if spec.schedule == "constant" else f"rational(C={spec.C!r})",
        "snr_db": spec.snr_db,
        "J": spec.J,
        "seed": spec.seed,
        "ss_window": spec.ss_window,
        "impulse_response": spec.impulse_response,
        "ir_seed": spec.ir_seed,
    }
    meta.update(extra or {})
    return meta


def _sigma_v2(spec, mi, M):
    if spec.sigma_v2 is not None:
        return spec.sigma_v2
    return noise_variance(spec.taps(M), spec.models[mi], spec.snr_db)


class _StatsCache:
    def __init__(self, spec):
        self.spec = spec
        self.cache = {}

    def __call__(self, mi, M):
        key = (mi, M)
        if key not in self.cache:
            self.cache[key] = th.input_stats(self.spec.models[mi], M, self.spec.mc_draws, self.spec.seed)
        return self.cache[key]


def predict_rows(spec):
    """Header and rows of the prediction table for one experiment."""
    Kmax = max(spec.K)
    header = (["mu", "K", "sigma_v2"] + [f"diag_eav_q{q}" for q in range(1, Kmax + 1)]
              + ["trace_eav", "e_energy", "ea_energy", "emse"]
              + [f"comp_q{q}" for q in range(1, Kmax + 1)]
              + ["mse_prior_small_mu", "mse_prior_correlated", "M", "model"])
    on = set(spec.theory)
    stats = _StatsCache(spec)
    rows = []
    for mi, token in enumerate(spec.model_tokens):
        for M in spec.M:
            s2 = _sigma_v2(spec, mi, M)
            for K in spec.K:
                for mu in spec.mu:
                    unit = 0 <= mu <= 1
                    pad = [None] * (Kmax - K)
                    diag = list(th.diag_eav_fixed(mu, K, s2)) if unit and "diag_eav" in on else [None] * K
                    comp = list(th.component_energy_ss(mu, K, s2)) if "components" in on else [None] * K
                    rows.append(
                        [mu, K, s2] + diag + pad
                        + [th.trace_eav(mu, K, s2) if unit and "trace_eav" in on else None,
                           th.error_energy_ss(mu, K, s2) if "e_energy" in on else None,
                           th.ea_energy_ss(mu, K, s2) if "ea_energy" in on else None,
                           th.emse_ss(mu, K, s2) if "emse" in on else None]
                        + comp + pad
                        + [th.mse_prior_small_mu(mu, s2) if "mse_prior_small_mu" in on else None,
                           th.mse_prior_correlated(mu, s2, stats(mi, M), K)
                           if "mse_prior_correlated" in on else None,
                           M, token])
    return header, rows


def cmd_predict(spec, args, out):
    header, rows = predict_rows(spec)
    out.csv(f"{spec.name}_predict.csv", header, rows)
    out.json(f"{spec.name}_predict.json", _metadata(spec, "predict"))


def _run_points(spec, workers):
    """Yield ``(mi, M, K, mu, config, result)`` over the sweep."""
    for mi, M, K, mu in spec.points():
        cfg = spec.ensemble(mi, M, K, mu)
        log.info("[%s] %s M=%d K=%d mu=%s J=%d n_iters=%d", spec.name, spec.model_tokens[mi],
                 M, K, mu, cfg.J, cfg.n_iters)
        yield mi, M, K, mu, cfg, run_ensemble(cfg, workers=workers)


def cmd_simulate(spec, args, out):
    corr_rows, ss_rows, sigmas = [], [], []
    for mi, M, K, mu, cfg, res in _run_points(spec, args.workers):
        token = spec.model_tokens[mi]
        sigmas.append({"model": token, "M": M, "K": K, "mu": mu, "sigma_v2": cfg.sigma_v2,
                       "n_iters": cfg.n_iters, "init": cfg.init})
        for est in res.corr:
            for q in range(K):
                for p in range(K):
                    corr_rows.append([est.iteration, q + 1, p + 1, est.mean[q, p], est.stderr[q, p],
                                      mu, K, M, token])
        ss = res.steady_state
        if ss is not None:
            quantities = [("e_energy", ss.e_energy, ss.e_energy_stderr),
                          ("ea_energy", ss.ea_energy, ss.ea_energy_stderr),
                          ("mse", ss.mse, ss.mse_stderr),
                          ("emse", ss.emse, ss.emse_stderr)]
            quantities += [(f"comp_q{q + 1}", ss.component_energies[q], ss.component_stderr[q])
                           for q in range(K)]
            ss_rows += [[mu, K, name, val, se, M, token] for name, val, se in quantities]
    out.csv(f"{spec.name}_corr.csv",
            ["iteration", "q", "p", "mean", "stderr", "mu", "K", "M", "model"], corr_rows)
    out.csv(f"{spec.name}_steady.csv",
            ["mu", "K", "quantity", "estimate", "stderr", "M", "model"], ss_rows)
    out.json(f"{spec.name}_simulate.json", _metadata(spec, "simulate", {"points": sigmas}))


def _need_window(spec, fig):
    if not spec.ss_window:
        raise ConfigError(f"[{spec.name}] figure {fig} needs ss_window > 0")
    if spec.schedule != "constant":
        raise ConfigError(f"[{spec.name}] figure {fig} needs a constant step size")


def figure_diag_eav(spec, args, out):
    if not spec.record_corr_at:
        raise ConfigError(f"[{spec.name}] figure diag_eav needs record_corr_at")
    sim_rows, curve_rows = [], []
    for mi, M, K, mu, cfg, res in _run_points(spec, args.workers):
        token = spec.model_tokens[mi]
        schedule = cfg.filter.schedule
        s2 = cfg.sigma_v2
        for est in res.corr:
            pred = th.diag_eav_transient(schedule, est.iteration, K, s2)
            for q in range(K):
                sim_rows.append([token, M, K, mu, est.iteration, q + 1,
                                 est.mean[q, q], est.stderr[q, q], pred[q]])
        for i in range(K - 1, cfg.n_iters, max(1, spec.theory_stride)):
            pred = th.diag_eav_transient(schedule, i, K, s2)
            curve_rows += [[token, M, K, mu, i, q + 1, pred[q]] for q in range(K)]
    out.csv(f"{spec.name}_diag_eav.csv",
            ["model", "M", "K", "mu", "iteration", "q", "simulation", "stderr", "theory"], sim_rows)
    out.csv(f"{spec.name}_diag_eav_theory.csv",
            ["model", "M", "K", "mu", "iteration", "q", "theory"], curve_rows)


def figure_e_energy(spec, args, out):
    _need_window(spec, "e_energy_sweep")
    rows = []
    for mi, M, K, mu, cfg, res in _run_points(spec, args.workers):
        ss = res.steady_state
        rows.append([spec.model_tokens[mi], M, K, mu, ss.e_energy, ss.e_energy_stderr,
                     th.error_energy_ss(mu, K, cfg.sigma_v2)])
    out.csv(f"{spec.name}_e_energy_sweep.csv",
            ["model", "M", "K", "mu", "simulation", "stderr", "theory"], rows)


def figure_mse(spec, args, out):
    _need_window(spec, "mse_sweep")
    stats = _StatsCache(spec)
    rows = []
    for mi, M, K, mu, cfg, res in _run_points(spec, args.workers):
        ss = res.steady_state
        s2 = cfg.sigma_v2
        rows.append([spec.model_tokens[mi], M, K, mu, ss.mse, ss.mse_stderr,
                     th.component_energy_ss(mu, K, s2)[0], th.mse_prior_small_mu(mu, s2),
                     th.mse_prior_correlated(mu, s2, stats(mi, M), K)])
    out.csv(f"{spec.name}_mse_sweep.csv",
            ["model", "M", "K", "mu", "simulation", "stderr", "theory_components",
             "theory_small_mu", "theory_correlated"], rows)


def figure_components(spec, args, out):
    _need_window(spec, "component_energy")
    rows = []
    for mi, M, K, mu, cfg, res in _run_points(spec, args.workers):
        ss = res.steady_state
        pred = th.component_energy_ss(mu, K, cfg.sigma_v2)
        rows += [[spec.model_tokens[mi], M, K, mu, q + 1, ss.component_energies[q],
                  ss.component_stderr[q], pred[q]] for q in range(K)]
    out.csv(f"{spec.name}_component_energy.csv",
            ["model", "M", "K", "mu", "q", "simulation", "stderr", "theory"], rows)


_FIGURE_FUNCS = {
    "diag_eav": figure_diag_eav,
    "e_energy_sweep": figure_e_energy,
    "mse_sweep": figure_mse,
    "component_energy": figure_components,
}


def cmd_figure(spec, args, out):
    _FIGURE_FUNCS[args.fig_id](spec, args, out)
    out.json(f"{spec.name}_{args.fig_id}.json", _metadata(spec, f"figure {args.fig_id}"))


def cmd_verify(args):
    if args.list:
        for c in acceptance.CRITERIA:
            print(f"{c.number}: {c.title} (budget {c.budget_s:g}s)")
        return EXIT_OK
    results = acceptance.run_all(args.only, workers=args.workers, verbose=args.verbose)
    n_pass = sum(r.passed for r in results)
    total = sum(r.elapsed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed in {total:.1f}s")
    return EXIT_OK if n_pass == len(results) else EXIT_FAIL


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment file (INI)")
    common.add_argument("--experiment", action="append", metavar="NAME",
                        help="run only this section of the config (repeatable)")
    common.add_argument("--out", help=f"output directory (default {DEFAULT_OUT}; "
                        "APA_LAB_OUT overrides)")
    common.add_argument("--workers", type=_positive_int, default=1,
                        help="worker processes; results do not depend on it")
    common.add_argument("--seed", type=int, help="override every experiment's master seed")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress messages")

    parser = argparse.ArgumentParser(prog="apa-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("predict", parents=[common], help="closed-form predictions to CSV")
    sub.add_parser("simulate", parents=[common], help="ensemble simulation to CSV")
    fig = sub.add_parser("figure", parents=[common], help="plot-ready simulation and theory series")
    fig.add_argument("fig_id", nargs="?", choices=FIGURES)
    fig.add_argument("--list", action="store_true", help="list figure ids")
    ver = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    ver.add_argument("--list", action="store_true", help="list criteria without running")
    ver.add_argument("--only", type=int, nargs="+", metavar="N", help="criteria to run")
    ver.add_argument("-v", "--verbose", action="store_true", help="print detail lines")
    return parser


def _dispatch(args, parser):
    if args.command == "verify":
        return cmd_verify(args)
    if args.command == "figure":
        if args.list:
            print("\n".join(FIGURES))
            return EXIT_OK
        if args.fig_id is None:
            parser.error("figure: fig_id is required")
    if args.config is None:
        parser.error(f"{args.command}: --config is required")
    specs = load_experiments(args.config, args.experiment)
    if args.seed is not None:
        specs = [s.with_seed(args.seed) for s in specs]
    out = OutputSet(os.environ.get("APA_LAB_OUT") or args.out or DEFAULT_OUT)
    command = {"predict": cmd_predict, "simulate": cmd_simulate, "figure": cmd_figure}[args.command]
    try:
        for spec in specs:
            t0 = time.perf_counter()
            command(spec, args, out)
            log.info("[%s] done in %.1fs", spec.name, time.perf_counter() - t0)
    except BaseException:
        out.discard()
        raise
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return _dispatch(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, ImpulseResponseFileError, KeyError) as exc:
        print(f"apa-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EnsembleRunError, DegenerateRegressorError, ArithmeticError, ValueError,
            RuntimeError, MemoryError) as exc:
        print(f"apa-lab: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
