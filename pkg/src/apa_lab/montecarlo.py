"""Ensemble simulation of APA and comparison against the closed-form theory.

Runs are split into fixed chunks of consecutive run indices; each chunk is
simulated as one batch and per-run statistics are reduced in run-index order,
so results do not depend on how many worker processes are used.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .apa import DegenerateRegressorError, FilterConfig, history_length, iterate_filter
from .signals import SignalModel, derive_seed, gen_noise, gen_process, noise_variance_for_snr
from .theory import TheoryReport

__all__ = [
    "EnsembleConfig",
    "CorrEstimate",
    "SteadyStateEstimate",
    "EnsembleResult",
    "EnsembleRunError",
    "Check",
    "DeviationReport",
    "noise_variance",
    "run_ensemble",
    "steady_state_average",
    "compare_corr",
    "compare_steady_state",
    "compare_to_theory",
]

DEFAULT_CHUNK = 250


class EnsembleRunError(RuntimeError):
    def __init__(self, run_index, cause):
        self.run_index = run_index
        super().__init__(f"run {run_index} failed: {cause}")


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything needed to reproduce an ensemble of ``J`` independent runs.

    ``init`` selects the starting estimate: ``'zero'`` or ``'true'`` (start at
    the true response, which skips the initial convergence when only the
    steady state matters). ``snr_db = inf`` gives noiseless runs.
    """

    filter: FilterConfig
    model: SignalModel
    snr_db: float
    n_iters: int
    J: int
    master_seed: int = 0
    record_corr_at: tuple = ()
    ss_window: int = 0
    init: str = "zero"
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        K = self.filter.K
        object.__setattr__(self, "record_corr_at", tuple(int(i) for i in self.record_corr_at))
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if not 0 <= self.ss_window < self.n_iters:
            raise ValueError("ss_window must satisfy 0 <= ss_window < n_iters")
        bad = [i for i in self.record_corr_at if not K <= i < self.n_iters]
        if bad:
            raise ValueError(f"record_corr_at entries {bad} outside [K, n_iters)")
        if self.init not in ("zero", "true"):
            raise ValueError("init must be 'zero' or 'true'")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    @property
    def sigma_v2(self):
        return noise_variance(self.filter.w_true, self.model, self.snr_db)


def noise_variance(w, model, snr_db):
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return noise_variance_for_snr(w, model, snr_db)


@dataclass
class CorrEstimate:
    """Ensemble estimate of ``E[e_{a,i} v_i^T]`` at one iteration.

    ``stderr`` is ``inf`` when it cannot be estimated (a single run).
    """

    iteration: int
    mean: np.ndarray
    stderr: np.ndarray
    e_mean: np.ndarray
    ea_mean: np.ndarray
    v_mean: np.ndarray


@dataclass
class SteadyStateEstimate:
    """Time averages over the trailing window, then averaged over runs."""

    sigma_v2: float
    e_energy: float
    e_energy_stderr: float
    component_energies: np.ndarray
    component_stderr: np.ndarray
    emse: float
    emse_stderr: float
    ea_energy: float
    ea_energy_stderr: float
    window: int
    n_runs: int

    @property
    def mse(self):
        return float(self.component_energies[0])

    @property
    def mse_stderr(self):
        return float(self.component_stderr[0])


class EnsembleResult(NamedTuple):
    corr: list
    steady_state: SteadyStateEstimate | None


def steady_state_average(trace, window):
    """Time averages of ``||e||^2``, ``e_q^2``, ``e_{a,q}^2`` over the last ``window`` iterations.

    Works on batched traces too (averaging along the time axis only).
    """
    n = trace.e.shape[-2]
    if not 1 <= window <= n:
        raise ValueError(f"window must be in [1, {n}], got {window}")
    e = trace.e[..., n - window:, :]
    e_a = trace.e_a[..., n - window:, :]
    comp = np.mean(e * e, axis=-2)
    ea_comp = np.mean(e_a * e_a, axis=-2)
    return {
        "e_energy": comp.sum(-1),
        "components": comp,
        "mse": comp[..., 0],
        "ea_components": ea_comp,
        "ea_energy": ea_comp.sum(-1),
        "emse": ea_comp[..., 0],
    }


def _chunk_runs(config, sigma_v2, runs):
    """Simulate runs ``runs`` as one batch; per-run statistics in run order."""
    fcfg = config.filter
    n_total = config.n_iters + history_length(fcfg)
    x = np.stack([gen_process(config.model, n_total, seed=derive_seed(config.master_seed, "input", j))
                  for j in runs])
    v = np.stack([gen_noise(sigma_v2, n_total, seed=derive_seed(config.master_seed, "noise", j))
                  for j in runs])
    w0 = fcfg.w_true if config.init == "true" else None
    K = fcfg.K
    rec_at = {it: slot for slot, it in enumerate(config.record_corr_at)}
    n_rec = len(rec_at)
    corr = np.zeros((len(runs), n_rec, K, K))
    means = np.zeros((3, len(runs), n_rec, K))
    start = config.n_iters - config.ss_window
    e2 = np.zeros((len(runs), K))
    ea2 = np.zeros((len(runs), K))
    try:
        for rec in iterate_filter(fcfg, x, v, config.n_iters, w0=w0, prefilled=True):
            slot = rec_at.get(rec.i)
            if slot is not None:
                corr[:, slot] = rec.e_a[:, :, None] * rec.v[:, None, :]
                means[0, :, slot] = rec.e
                means[1, :, slot] = rec.e_a
                means[2, :, slot] = rec.v
            if rec.i >= start and config.ss_window:
                e2 += rec.e * rec.e
                ea2 += rec.e_a * rec.e_a
    except DegenerateRegressorError as exc:
        raise EnsembleRunError(runs[exc.batch_index or 0], exc) from exc
    if config.ss_window:
        e2 /= config.ss_window
        ea2 /= config.ss_window
    return corr, means, e2, ea2


def _chunk_job(args):
    return _chunk_runs(*args)


def _mean_stderr(a):
    mean = a.mean(axis=0)
    if a.shape[0] < 2:
        return mean, np.full_like(mean, np.inf)
    return mean, a.std(axis=0, ddof=1) / math.sqrt(a.shape[0])


def run_ensemble(config, workers=1):
    """Run ``config.J`` realizations and aggregate correlation and steady-state estimates.

    ``workers`` only changes how chunks are scheduled, never the numbers.
    """
    sigma_v2 = config.sigma_v2
    chunks = [list(range(s, min(s + config.chunk_size, config.J)))
              for s in range(0, config.J, config.chunk_size)]
    jobs = [(config, sigma_v2, runs) for runs in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(job) for job in jobs]
    corr = np.concatenate([p[0] for p in parts])
    means = np.concatenate([p[1] for p in parts], axis=1)
    e2 = np.concatenate([p[2] for p in parts])
    ea2 = np.concatenate([p[3] for p in parts])

    estimates = []
    for slot, it in enumerate(config.record_corr_at):
        m, se = _mean_stderr(corr[:, slot])
        estimates.append(CorrEstimate(
            iteration=it, mean=m, stderr=se,
            e_mean=means[0, :, slot].mean(axis=0),
            ea_mean=means[1, :, slot].mean(axis=0),
            v_mean=means[2, :, slot].mean(axis=0),
        ))

    steady = None
    if config.ss_window:
        comp, comp_se = _mean_stderr(e2)
        e_en, e_en_se = _mean_stderr(e2.sum(axis=1))
        ea_en, ea_en_se = _mean_stderr(ea2.sum(axis=1))
        emse, emse_se = _mean_stderr(ea2[:, 0])
        steady = SteadyStateEstimate(
            sigma_v2=sigma_v2,
            e_energy=float(e_en), e_energy_stderr=float(e_en_se),
            component_energies=comp, component_stderr=comp_se,
            emse=float(emse), emse_stderr=float(emse_se),
            ea_energy=float(ea_en), ea_energy_stderr=float(ea_en_se),
            window=config.ss_window, n_runs=config.J,
        )
    return EnsembleResult(estimates, steady)


@dataclass
class Check:
    name: str
    estimate: float
    expected: float
    stderr: float
    passed: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: estimate={self.estimate:.6g} "
                f"expected={self.expected:.6g} stderr={self.stderr:.3g}")


@dataclass
class DeviationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def extend(self, other):
        self.checks.extend(other.checks)
        return self

    def summary(self):
        n_fail = len(self.failures())
        return f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed"


def _value_check(name, est, expected, se, z, rel_tol):
    dev = abs(est - expected)
    ok = (math.isfinite(se) and dev <= z * se) or dev <= rel_tol * abs(expected)
    return Check(name, float(est), float(expected), float(se), bool(ok))


def _zero_check(name, est, se, z):
    ok = math.isfinite(se) and abs(est) <= z * se
    return Check(name, float(est), 0.0, float(se), bool(ok))


def compare_corr(estimates, predicted_diag, z=4.0, rel_tol=0.05, white=False):
    """Check correlation estimates against a predicted diagonal.

    ``predicted_diag`` maps an iteration to its K-vector diagonal (a callable,
    a dict, or one vector used for every iteration). Diagonal entries
    ``q >= 2`` must agree within ``max(z * stderr, rel_tol * |prediction|)``;
    entry (1,1) and everything below the diagonal must be within
    ``z * stderr`` of zero, and with ``white=True`` so must everything above.
    """
    report = DeviationReport()
    for est in estimates:
        K = est.mean.shape[0]
        if callable(predicted_diag):
            pred = predicted_diag(est.iteration)
        elif isinstance(predicted_diag, dict):
            pred = predicted_diag[est.iteration]
        else:
            pred = predicted_diag
        pred = np.asarray(pred, dtype=float)
        if est.mean.shape != (K, K) or est.stderr.shape != (K, K) or pred.shape != (K,):
            raise ValueError("estimate and prediction shapes do not match")
        it = est.iteration
        report.checks.append(_zero_check(f"i={it} (1,1)", est.mean[0, 0], est.stderr[0, 0], z))
        for q in range(1, K):
            report.checks.append(_value_check(
                f"i={it} ({q + 1},{q + 1})", est.mean[q, q], pred[q], est.stderr[q, q], z, rel_tol))
        for q in range(K):
            for p in range(K):
                if q > p or (white and q < p):
                    where = "below" if q > p else "above"
                    report.checks.append(_zero_check(
                        f"i={it} ({q + 1},{p + 1}) {where}", est.mean[q, p], est.stderr[q, p], z))
    return report


def compare_steady_state(estimate, theory, z=4.0, rel_tol=0.10, components=True):
    """Check steady-state energies against a ``TheoryReport``."""
    K = theory.K
    if estimate.component_energies.shape != (K,):
        raise ValueError("estimate and theory disagree on K")
    report = DeviationReport()
    report.checks.append(_value_check("e_energy", estimate.e_energy, theory.e_energy,
                                      estimate.e_energy_stderr, z, rel_tol))
    report.checks.append(_value_check("mse", estimate.mse, theory.mse, estimate.mse_stderr, z, rel_tol))
    if components:
        for q in range(K):
            report.checks.append(_value_check(
                f"component q={q + 1}", estimate.component_energies[q],
                theory.component_energies[q], estimate.component_stderr[q], z, rel_tol))
    return report


def compare_to_theory(estimates, theory, z=4.0, rel_tol=None, white=False):
    """Dispatch to ``compare_corr`` or ``compare_steady_state``.

    Correlation estimates may be checked against a ``TheoryReport`` (its
    constant-step diagonal) or anything ``compare_corr`` accepts.
    """
    if isinstance(estimates, SteadyStateEstimate):
        if not isinstance(theory, TheoryReport):
            raise ValueError("steady-state estimates need a TheoryReport")
        return compare_steady_state(estimates, theory, z, 0.10 if rel_tol is None else rel_tol)
    pred = theory.diag_eav if isinstance(theory, TheoryReport) else theory
    return compare_corr(list(estimates), pred, z, 0.05 if rel_tol is None else rel_tol, white)
