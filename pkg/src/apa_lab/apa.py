"""Affine projection algorithm with a (possibly time-varying) step size.

All arrays may carry a leading batch axis so that many independent
realizations advance in lock step; a single filter is the unbatched case.
Shapes below use ``B`` for that optional axis.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

__all__ = [
    "StepSchedule",
    "FilterConfig",
    "ApaState",
    "ErrorTrace",
    "IterationRecord",
    "DegenerateRegressorError",
    "ScheduleExhaustedError",
    "step_size",
    "apa_update",
    "a_priori_error_vector",
    "history_length",
    "iterate_filter",
    "run_filter",
]


class DegenerateRegressorError(np.linalg.LinAlgError):
    """The K x K Gram matrix of the regressors is not positive definite."""

    def __init__(self, iteration, detail="", batch_index=None):
        self.iteration = iteration
        self.batch_index = batch_index
        msg = f"degenerate regressor at iteration {iteration}: Gram matrix is singular"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class ScheduleExhaustedError(IndexError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequence ``mu_i``.

    Use the constructors: ``constant(mu)``, ``rational_decay(C)`` for
    ``mu_i = 1 / (1 + (C i)^2)`` or ``custom(values)``.
    """

    kind: str
    mu: float = 0.0
    C: float = 0.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "constant":
            _check_mu([self.mu])
        elif self.kind == "rational":
            if not self.C >= 0:
                raise ValueError("decay constant C must be >= 0")
        elif self.kind == "custom":
            if not self.values:
                raise ValueError("custom schedule needs at least one value")
            _check_mu(self.values)
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, mu):
        return cls("constant", mu=float(mu))

    @classmethod
    def rational_decay(cls, C):
        return cls("rational", C=float(C))

    @classmethod
    def custom(cls, values):
        return cls("custom", values=tuple(values))

    @property
    def large_step(self):
        """True when some ``mu_i`` lies in (1, 2]: stable but a larger steady-state error."""
        if self.kind == "constant":
            return self.mu > 1
        if self.kind == "custom":
            return max(self.values) > 1
        return False

    def __call__(self, i):
        return step_size(self, i)

    def sequence(self, n):
        """``mu_0 .. mu_{n-1}`` as an array."""
        i = np.arange(n)
        if self.kind == "constant":
            return np.full(n, self.mu)
        if self.kind == "rational":
            return 1.0 / (1.0 + (self.C * i) ** 2)
        if n > len(self.values):
            raise ScheduleExhaustedError(
                f"custom schedule has {len(self.values)} values, {n} requested"
            )
        return np.array(self.values[:n])

    def label(self):
        if self.kind == "constant":
            return f"constant({self.mu:g})"
        if self.kind == "rational":
            return f"rational({self.C:g})"
        return f"custom[{len(self.values)}]"


def _check_mu(values):
    v = np.asarray(values, dtype=float)
    if np.any(~(v > 0)) or np.any(v > 2):
        raise ValueError("step sizes must lie in (0, 2]")
    if np.any(v > 1):
        warnings.warn("step size above 1: stable, but with a larger steady-state error",
                      stacklevel=3)


def step_size(schedule, i):
    """``mu_i`` for iteration ``i >= 0``."""
    if i < 0:
        raise ValueError("iteration index must be >= 0")
    if schedule.kind == "constant":
        return schedule.mu
    if schedule.kind == "rational":
        return 1.0 / (1.0 + (schedule.C * i) ** 2)
    if i >= len(schedule.values):
        raise ScheduleExhaustedError(
            f"custom schedule has {len(schedule.values)} values, mu_{i} requested"
        )
    return schedule.values[i]


@dataclass(frozen=True)
class FilterConfig:
    """Filter length ``M``, projection order ``K``, regularization and true system."""

    M: int
    K: int
    w_true: np.ndarray
    schedule: StepSchedule
    beta: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w_true, dtype=float)
        if not 1 <= self.K <= self.M:
            raise ValueError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        if w.shape != (self.M,):
            raise ValueError(f"w_true must have length M={self.M}, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("w_true has non-finite taps")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        object.__setattr__(self, "w_true", w)


@dataclass
class ApaState:
    """Mutable filter state.

    ``window`` holds the last ``M + K - 1`` inputs, most recent first, and
    ``d_window`` the last ``K`` reference samples; both start zero-filled.
    The estimate is held fixed until ``M + K - 1`` samples have been pushed.
    """

    w_est: np.ndarray
    window: np.ndarray
    d_window: np.ndarray
    iteration: int = 0
    filled: int = 0

    @classmethod
    def initial(cls, config, batch_shape=()):
        batch = tuple(batch_shape)
        return cls(
            w_est=np.zeros(batch + (config.M,)),
            window=np.zeros(batch + (config.M + config.K - 1,)),
            d_window=np.zeros(batch + (config.K,)),
        )

    @property
    def warmed_up(self):
        return self.filled >= self.window.shape[-1]

    def regressors(self, M):
        """``X_i^T``: rows are ``x_i, ..., x_{i-K+1}`` (shape ``(B, K, M)``)."""
        return sliding_window_view(self.window, M, axis=-1)


def _cho_solve(L, b):
    """Solve ``L L^T s = b`` for a stack of lower-triangular factors."""
    K = L.shape[-1]
    y = np.empty_like(b)
    for k in range(K):
        y[..., k] = (b[..., k] - (L[..., k, :k] * y[..., :k]).sum(-1)) / L[..., k, k]
    s = np.empty_like(b)
    for k in range(K - 1, -1, -1):
        s[..., k] = (y[..., k] - (L[..., k + 1:, k] * s[..., k + 1:]).sum(-1)) / L[..., k, k]
    return s


def gram(Xt):
    """``X_i^T X_i`` from the stacked regressor rows."""
    return np.matmul(Xt, np.swapaxes(Xt, -1, -2))


def _first_singular(G):
    """Flat batch index of the first Gram matrix that is not positive definite."""
    if G.ndim == 2:
        return None
    for idx, g in enumerate(G.reshape(-1, *G.shape[-2:])):
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            return idx
    return None


def _apa_step(w, Xt, y, d_vec, mu, beta, iteration, update=True, G=None):
    """One APA update in place on ``w``.

    ``y`` is ``X_i^T w_i``; returns the pre-update error vector ``d_i - y``.
    """
    e = d_vec - y
    if not update:
        return e
    K = Xt.shape[-2]
    if G is None:
        G = gram(Xt)
    if beta:
        G = G + beta * np.eye(K)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise DegenerateRegressorError(iteration, batch_index=_first_singular(G)) from None
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    bad = ~np.all(np.isfinite(diag) & (diag > 0), axis=-1)
    if np.any(bad):
        first = int(np.flatnonzero(bad.ravel())[0]) if bad.ndim else None
        raise DegenerateRegressorError(iteration, "non-positive pivot", first)
    s = _cho_solve(L, e)
    w += mu * np.matmul(s[..., None, :], Xt)[..., 0, :]
    return e


def apa_update(state, x_new, d_new, config):
    """Push ``(x_new, d_new)`` and apply one update with ``mu_i``.

    Returns ``(state, e)`` where ``e = d_i - X_i^T w_i`` is evaluated before
    the update. ``state`` is modified in place.
    """
    state.window = np.concatenate(
        [np.asarray(x_new, dtype=float)[..., None], state.window[..., :-1]], axis=-1)
    state.d_window = np.concatenate(
        [np.asarray(d_new, dtype=float)[..., None], state.d_window[..., :-1]], axis=-1)
    Xt = state.regressors(config.M)
    mu = step_size(config.schedule, state.iteration)
    state.filled = min(state.filled + 1, state.window.shape[-1])
    y = np.einsum("...km,...m->...k", Xt, state.w_est)
    e = _apa_step(state.w_est, Xt, y, state.d_window, mu, config.beta, state.iteration,
                  update=state.warmed_up)
    state.iteration += 1
    return state, e


def a_priori_error_vector(state, config):
    """``X_i^T (w_true - w_i)`` for the current window and pre-update estimate."""
    Xt = state.regressors(config.M)
    return np.einsum("...km,...m->...k", Xt, config.w_true - state.w_est)


@dataclass
class IterationRecord:
    i: int
    e: np.ndarray
    e_a: np.ndarray
    v: np.ndarray
    mu: float
    w: np.ndarray  # live estimate after this update; copy before keeping


@dataclass
class ErrorTrace:
    """Per-iteration error vectors, shape ``(B, n, K)`` (``(n, K)`` unbatched)."""

    e: np.ndarray
    e_a: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    w_final: np.ndarray

    def __len__(self):
        return self.mu.size


def history_length(config):
    """Input samples preceding ``x_0`` that one full regressor matrix reaches back to."""
    return config.M + config.K - 2


def iterate_filter(config, x, v, n_iters, w0=None, prefilled=False):
    """Run the filter from ``w0`` (zero by default), yielding one record per iteration.

    ``x`` and ``v`` are input and noise sequences (leading batch axes
    allowed); the reference is ``d_i = x_i^T w_true + v_i``.

    With ``prefilled=True`` both carry ``history_length(config)`` samples of
    past signal ahead of sample 0, so the regressor is complete from the first
    iteration. Otherwise they start at sample 0, earlier samples are taken as
    zero, and the estimate is frozen until the window holds no padding: a
    zero-padded regressor is (numerically) rank deficient.
    """
    M, K = config.M, config.K
    lead = history_length(config)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape[:-1] != v.shape[:-1]:
        raise ValueError("input and noise batch shapes differ")
    need = n_iters + (lead if prefilled else 0)
    if x.shape[-1] < need or v.shape[-1] < need:
        raise ValueError(f"need {need} input and noise samples, got "
                         f"{x.shape[-1]} and {v.shape[-1]}")
    if prefilled:
        x_full = x[..., :need]
        v_full = v[..., :need]
    else:
        x_full = np.zeros(x.shape[:-1] + (need + lead,))
        x_full[..., lead:] = x[..., :n_iters]
        v_full = np.zeros(x_full.shape)
        v_full[..., lead:] = v[..., :n_iters]
    mus = config.schedule.sequence(n_iters)
    clean = signal.lfilter(config.w_true, [1.0], x_full, axis=-1)
    # time-reversed copies make every regressor a forward-strided view
    n_full = x_full.shape[-1]
    frames = sliding_window_view(np.ascontiguousarray(x_full[..., ::-1]), M, axis=-1)
    c_rev = np.ascontiguousarray(clean[..., ::-1])
    v_rev = np.ascontiguousarray(v_full[..., ::-1])
    d_rev = c_rev + v_rev
    w = np.zeros(x.shape[:-1] + (M,)) if w0 is None else np.array(w0, dtype=float)
    w = np.broadcast_to(w, x.shape[:-1] + (M,)).copy()
    G = None
    for i in range(n_iters):
        r = n_full - 1 - (lead + i)
        Xt = frames[..., r:r + K, :]  # Xt[..., k, m] = x_{i-k-m}
        y = np.einsum("...km,...m->...k", Xt, w)
        # e_a = X^T w_true - X^T w_i, with X^T w_true read off the noiseless reference
        e_a = c_rev[..., r:r + K] - y
        G = gram(Xt) if G is None else _slide_gram(G, Xt)
        e = _apa_step(w, Xt, y, d_rev[..., r:r + K], float(mus[i]), config.beta, i,
                      update=prefilled or i >= lead, G=G)
        yield IterationRecord(i, e, e_a, v_rev[..., r:r + K].copy(), float(mus[i]), w)


def _slide_gram(G_prev, Xt):
    """Gram matrix of the next regressor: the previous one shifted down one lag
    plus a freshly computed first row and column."""
    G = np.empty_like(G_prev)
    G[..., 1:, 1:] = G_prev[..., :-1, :-1]
    row = np.einsum("...km,...m->...k", Xt, Xt[..., 0, :])
    G[..., 0, :] = row
    G[..., :, 0] = row
    return G


def run_filter(config, x, v, n_iters, w0=None, prefilled=False):
    """Run ``n_iters`` iterations and keep the full error trace.

    See ``iterate_filter`` for the meaning of ``prefilled``.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    es, eas, vs, mus = [], [], [], []
    for rec in iterate_filter(config, x, v, n_iters, w0=w0, prefilled=prefilled):
        es.append(rec.e)
        eas.append(rec.e_a)
        vs.append(rec.v)
        mus.append(rec.mu)
    axis = np.asarray(x).ndim - 1
    return ErrorTrace(
        e=np.stack(es, axis=axis),
        e_a=np.stack(eas, axis=axis),
        v=np.stack(vs, axis=axis),
        mu=np.array(mus),
        w_final=rec.w.copy(),
    )
