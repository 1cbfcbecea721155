"""Closed-form predictions for the noise / a priori error correlation and the
steady-state error energies of APA without regularization.

The constant-step expressions contain ``(1 - (1-mu)**K) / mu``; it is always
evaluated as the finite sum ``sum_{n<K} (1-mu)**n`` so nothing is singular at
``mu = 0``, and ``1 - (1-mu)**n`` goes through ``expm1``/``log1p`` to stay
accurate for tiny step sizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .apa import StepSchedule, step_size
from .signals import autocorrelation, derive_seed, gen_process, toeplitz_corr

__all__ = [
    "SteadyStateInputStats",
    "TheoryReport",
    "diag_eav_transient",
    "diag_eav_fixed",
    "trace_eav",
    "error_energy_ss",
    "ea_energy_ss",
    "emse_ss",
    "component_energy_ss",
    "mse_prior_small_mu",
    "mse_prior_correlated",
    "input_stats",
    "theory_report",
]


def _check_mu(mu, upper=2.0, closed=False):
    ok = 0 <= mu <= upper if closed else 0 <= mu < upper
    if not ok:
        raise ValueError(f"step size {mu} outside the admissible range")


def _one_minus_pow(mu, n):
    """``1 - (1 - mu)**n`` without cancellation for small ``mu``."""
    n = np.asarray(n, dtype=float)
    if -1 < mu < 1:
        return -np.expm1(n * np.log1p(-mu))
    return 1.0 - np.power(1.0 - mu, n)


def _powers_sum(a, K):
    """``sum_{n=0}^{K-1} a**n``, i.e. ``(1 - (1-mu)**K) / mu`` with the 0/0 removed."""
    return float(np.sum(np.power(a, np.arange(K))))


def _trace_eav_any(mu, K, sigma_v2):
    # K - (1 - (1-mu)^K)/mu == sum_{n=0}^{K-1} (1 - (1-mu)^n)
    return 0.0 - sigma_v2 * float(np.sum(_one_minus_pow(mu, np.arange(K))))


def _mu_at(mu_seq, index):
    if index < 0:
        raise ValueError(f"step size mu_{index} is not defined")
    if isinstance(mu_seq, StepSchedule):
        return step_size(mu_seq, index)
    if callable(mu_seq):
        return float(mu_seq(index))
    return float(mu_seq[index])


def diag_eav_transient(mu_seq, i, K, sigma_v2):
    """Diagonal of ``E[e_{a,i} v_i^T]`` for a step-size sequence.

    Entry ``q`` (1-based) is ``-sigma_v2 * (mu_{i-1} + sum_{j=2}^{q-1}
    mu_{i-j} prod_{k=1}^{j-1} (1 - mu_{i-k}))`` and the first entry is zero.
    ``mu_seq`` is a ``StepSchedule``, a callable or a sequence indexed by
    iteration.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if i - K + 1 < 0:
        raise ValueError(f"iteration {i} needs mu_{i - K + 1} which does not exist")
    out = np.zeros(K)
    if K == 1:
        return out
    acc = _mu_at(mu_seq, i - 1)
    survive = 1.0 - acc
    out[1] = acc
    for q in range(3, K + 1):
        j = q - 1
        mu_j = _mu_at(mu_seq, i - j)
        acc += mu_j * survive
        survive *= 1.0 - mu_j
        out[q - 1] = acc
    return 0.0 - sigma_v2 * out


def diag_eav_fixed(mu, K, sigma_v2):
    """Constant-step diagonal: ``-sigma_v2 * (1 - (1-mu)**(q-1))`` for ``q = 1..K``."""
    _check_mu(mu, 1.0, closed=True)
    return 0.0 - sigma_v2 * _one_minus_pow(mu, np.arange(K))


def trace_eav(mu, K, sigma_v2):
    """``E[e_a^T v] = -sigma_v2 * (K - (1 - (1-mu)**K) / mu)``; zero in the ``mu -> 0`` limit."""
    _check_mu(mu, 1.0, closed=True)
    return _trace_eav_any(mu, K, sigma_v2)


def error_energy_ss(mu, K, sigma_v2):
    """Steady-state ``E||e||^2 = 2 sigma_v2 (1 - (1-mu)**K) / (mu (2 - mu))``."""
    _check_mu(mu)
    return 2.0 * sigma_v2 * _powers_sum(1.0 - mu, K) / (2.0 - mu)


def ea_energy_ss(mu, K, sigma_v2):
    """Steady-state ``E||e_a||^2``: ``mu/(2-mu) K sigma_v2 + 2 (mu-1)/(2-mu) E[e_a^T v]``."""
    _check_mu(mu)
    cross = _trace_eav_any(mu, K, sigma_v2)
    return mu / (2.0 - mu) * K * sigma_v2 + 2.0 * (mu - 1.0) / (2.0 - mu) * cross


def emse_ss(mu, K, sigma_v2):
    """Steady-state EMSE ``sigma_v2 [1 - 2 (1-mu)(1-(1-mu)**K) / (K mu (2-mu))]``.

    Evaluated as ``sum_{n=1}^K [(1 - a^n) + a (1 - a^{n-1})] / (K (2 - mu))``
    with ``a = 1 - mu``, which equals the bracket above and tends to
    ``K mu / 2`` as ``mu -> 0``.
    """
    _check_mu(mu)
    a = 1.0 - mu
    n = np.arange(1, K + 1)
    terms = _one_minus_pow(mu, n) + a * _one_minus_pow(mu, n - 1)
    return sigma_v2 * float(np.sum(terms)) / (K * (2.0 - mu))


def component_energy_ss(mu, K, sigma_v2):
    """Steady-state ``E[e_q^2]`` for ``q = 1..K``, clamped at zero.

    ``2 sigma_v2 [(1-mu)**(q-1) - (1-mu)(1-(1-mu)**K) / (K (2-mu) mu)]``;
    the first entry is the MSE.
    """
    _check_mu(mu)
    a = 1.0 - mu
    shared = a * _powers_sum(a, K) / (K * (2.0 - mu))
    return np.maximum(0.0, 2.0 * sigma_v2 * (np.power(a, np.arange(K)) - shared))


def mse_prior_small_mu(mu, sigma_v2):
    """Small-step MSE under the independence assumption, ``2 sigma_v2 / (2 - mu)``."""
    _check_mu(mu)
    return 2.0 * sigma_v2 / (2.0 - mu)


@dataclass(frozen=True)
class SteadyStateInputStats:
    """Input statistics needed by the correlated-noise MSE formula.

    ``eigenvalues`` and ``trace`` belong to the M x M input correlation
    matrix; ``inv_energy`` estimates ``E[1 / ||x_i||^2]``.
    """

    eigenvalues: np.ndarray
    trace: float
    inv_energy: float
    inv_energy_stderr: float = 0.0

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if np.any(ev < -1e-9 * self.trace):
            raise ValueError("correlation eigenvalues must be nonnegative")
        if abs(np.sum(ev) - self.trace) > 1e-6 * abs(self.trace):
            raise ValueError("trace does not match the sum of eigenvalues")
        if not self.inv_energy > 0:
            raise ValueError("inv_energy must be positive")
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def p(self):
        return np.clip(self.eigenvalues, 0.0, None) / self.trace


def mse_prior_correlated(mu, sigma_v2, stats, K):
    """MSE accounting for noise/error correlation through the input eigenstructure.

    ``sigma_v2 + mu sigma_v2 / (2-mu) E[1/||x||^2] tr(R) (1 + 2 Gamma)`` with
    ``Gamma = sum_i p_i sum_{q=1}^{K-1} [(1 - (1-p_i)^q) / (1 - (1-p_i)^K)] (1-mu)^q``
    and ``p_i = lambda_i / tr(R)``. The ratio tends to ``q/K`` as ``p_i -> 0``;
    eigenvalues with ``p_i <= 1e-15`` carry no weight and are skipped.
    """
    _check_mu(mu)
    p = stats.p
    p = p[p > 1e-15]
    gamma = 0.0
    if K > 1:
        q = np.arange(1, K)
        with np.errstate(divide="ignore"):
            log_keep = np.log1p(-p)
        ratio = np.expm1(np.multiply.outer(log_keep, q)) / np.expm1(K * log_keep)[:, None]
        gamma = float(np.sum(p[:, None] * ratio * np.power(1.0 - mu, q)[None, :]))
    return sigma_v2 + mu * sigma_v2 / (2.0 - mu) * stats.inv_energy * stats.trace * (1.0 + 2.0 * gamma)


def input_stats(model, M, mc_draws=200_000, seed=0, n_batches=20):
    """Eigenvalues and trace of the exact M x M correlation matrix, plus a Monte
    Carlo estimate of ``E[1/||x_i||^2]`` over ``mc_draws`` sliding windows.

    The standard error uses batch means over ``n_batches`` contiguous blocks
    since neighbouring windows overlap.
    """
    if mc_draws < n_batches:
        raise ValueError("mc_draws must be at least n_batches")
    R = toeplitz_corr(model, M)
    try:
        ev = np.linalg.eigvalsh(R)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    trace = M * autocorrelation(model, 0).values[0]
    x = gen_process(model, mc_draws + M - 1, seed=derive_seed(seed, "input-stats"))
    c = np.concatenate([[0.0], np.cumsum(x * x)])
    inv = 1.0 / (c[M:] - c[:-M])
    batches = np.array_split(inv, n_batches)
    means = np.array([b.mean() for b in batches])
    stderr = float(np.std(means, ddof=1) / np.sqrt(n_batches))
    return SteadyStateInputStats(ev, trace, float(inv.mean()), stderr)


@dataclass(frozen=True)
class TheoryReport:
    mu: float
    K: int
    sigma_v2: float
    diag_eav: np.ndarray
    trace_eav: float
    e_energy: float
    ea_energy: float
    emse: float
    component_energies: np.ndarray
    mse: float


def theory_report(mu, K, sigma_v2, beta=0.0):
    """All constant-step predictions for ``(mu, K, sigma_v2)``.

    The expressions hold only without regularization, so ``beta != 0`` is
    refused.
    """
    if beta != 0:
        raise ValueError("theoretical predictions assume beta == 0")
    _check_mu(mu, 1.0, closed=True)
    comp = component_energy_ss(mu, K, sigma_v2)
    return TheoryReport(
        mu=mu,
        K=K,
        sigma_v2=sigma_v2,
        diag_eav=diag_eav_fixed(mu, K, sigma_v2),
        trace_eav=trace_eav(mu, K, sigma_v2),
        e_energy=error_energy_ss(mu, K, sigma_v2),
        ea_energy=ea_energy_ss(mu, K, sigma_v2),
        emse=emse_ss(mu, K, sigma_v2),
        component_energies=comp,
        mse=float(comp[0]),
    )
