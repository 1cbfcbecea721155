"""Input processes, measurement noise and true-system impulse responses.

Everything here is real valued. Processes are generated by filtering
unit-variance Gaussian white noise through a pole-zero filter
``H(z) = ma(z) / ar(z)`` (coefficients in increasing powers of ``z^-1``,
``ar[0] == 1``), scaled by the square root of the drive variance.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.linalg import toeplitz

__all__ = [
    "SignalModel",
    "AutocorrSequence",
    "ImpulseResponseFileError",
    "ARMA22_AR",
    "ARMA22_MA",
    "arma22",
    "derive_seed",
    "default_burn_in",
    "gen_process",
    "gen_noise",
    "autocorrelation",
    "shifted_corr_matrix",
    "toeplitz_corr",
    "noise_variance_for_snr",
    "load_impulse_response",
    "synthetic_impulse_response",
    "write_impulse_response",
]

# Highly correlated ARMA(2,2) benchmark process: (1 - z^-2) / (1 - 1.70223 z^-1 + 0.71902 z^-2)
ARMA22_AR = (1.0, -1.70223, 0.71902)
ARMA22_MA = (1.0, 0.0, -1.0)

_TRUNCATION = 1e-12
_BURN_IN_CAP = 10**6


@dataclass(frozen=True)
class SignalModel:
    """Second-order description of a stationary Gaussian input process.

    Parameters
    ----------
    kind : {'white', 'ar1', 'arma'}
    ar : tuple of float
        Monic denominator coefficients ``[1, a_1, ..., a_p]``.
    ma : tuple of float
        Numerator coefficients ``[b_0, ..., b_q]``.
    drive_variance : float
        Variance of the white Gaussian drive.
    """

    kind: str
    ar: tuple = (1.0,)
    ma: tuple = (1.0,)
    drive_variance: float = 1.0
    poles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("white", "ar1", "arma"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        ar = tuple(float(a) for a in self.ar)
        ma = tuple(float(b) for b in self.ma)
        if not ar or ar[0] != 1.0:
            raise ValueError("AR polynomial must be monic (ar[0] == 1)")
        if not ma or not any(ma):
            raise ValueError("MA polynomial must be nonzero")
        if not (self.drive_variance > 0 and math.isfinite(self.drive_variance)):
            raise ValueError("drive_variance must be positive and finite")
        poles = np.roots(ar) if len(ar) > 1 else np.zeros(0)
        if poles.size and np.max(np.abs(poles)) >= 1.0:
            raise ValueError(
                f"unstable AR part: pole magnitude {np.max(np.abs(poles)):.6g} >= 1"
            )
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "ma", ma)
        object.__setattr__(self, "drive_variance", float(self.drive_variance))
        object.__setattr__(self, "poles", poles)

    @classmethod
    def white(cls, variance=1.0):
        return cls("white", (1.0,), (1.0,), variance)

    @classmethod
    def ar1(cls, pole, drive_variance=1.0):
        """AR(1) process ``x_i = pole * x_{i-1} + u_i``."""
        return cls("ar1", (1.0, -float(pole)), (1.0,), drive_variance)

    @classmethod
    def arma(cls, ar, ma, drive_variance=1.0):
        return cls("arma", tuple(ar), tuple(ma), drive_variance)

    @property
    def pole(self):
        """The AR(1) pole; only meaningful for ``kind == 'ar1'``."""
        return -self.ar[1] if len(self.ar) > 1 else 0.0

    @property
    def max_pole_magnitude(self):
        return float(np.max(np.abs(self.poles))) if self.poles.size else 0.0

    @property
    def variance(self):
        return autocorrelation(self, 0).values[0]

    def with_variance(self, variance):
        """Same spectral shape, drive rescaled so that ``r(0) == variance``."""
        scale = variance / self.variance
        return SignalModel(self.kind, self.ar, self.ma, self.drive_variance * scale)

    def label(self):
        if self.kind == "white":
            return "white"
        if self.kind == "ar1":
            return f"ar1({self.pole:g})"
        return "arma(" + ",".join(f"{a:g}" for a in self.ar) + "|" + ",".join(
            f"{b:g}" for b in self.ma) + ")"


def arma22(drive_variance=1.0):
    """The ARMA(2,2) benchmark process used in the experiments."""
    return SignalModel.arma(ARMA22_AR, ARMA22_MA, drive_variance)


@dataclass(frozen=True)
class AutocorrSequence:
    """Autocorrelation values ``r(0), ..., r(L)`` of a real stationary process."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("autocorrelation needs at least r(0)")
        if not v[0] > 0:
            raise ValueError("r(0) must be positive")
        if np.any(np.abs(v) > v[0] * (1 + 1e-9)):
            raise ValueError("|r(k)| must not exceed r(0)")
        object.__setattr__(self, "values", v)

    @property
    def max_lag(self):
        return self.values.size - 1

    @property
    def lags(self):
        return np.arange(self.values.size)

    def __call__(self, k):
        """r(k) for integer (possibly negative) lags; real processes are even in k."""
        k = np.abs(np.asarray(k))
        if np.any(k > self.max_lag):
            raise ValueError(f"lag {int(np.max(k))} beyond max_lag={self.max_lag}")
        return self.values[k]


def derive_seed(master_seed, role, run_index=0):
    """Independent, reproducible seed for ``(master_seed, role, run_index)``.

    ``role`` is a label such as ``'input'`` or ``'noise'``; it is hashed with
    CRC-32 so the derivation is stable across processes and platforms.
    """
    return np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=(zlib.crc32(role.encode("utf-8")), int(run_index)),
    )


def default_burn_in(model):
    """``50 / (1 - max pole magnitude)`` samples, capped at one million."""
    rho = model.max_pole_magnitude
    return int(min(_BURN_IN_CAP, math.ceil(50.0 / (1.0 - rho))))


def gen_process(model, n, burn_in=None, seed=None):
    """Draw ``n`` stationary samples of ``model``.

    The first ``burn_in`` filter outputs are discarded; by default
    ``default_burn_in(model)`` is used.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in is None:
        burn_in = default_burn_in(model)
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n + burn_in) * math.sqrt(model.drive_variance)
    if model.kind == "white":
        x = u
    else:
        x = signal.lfilter(model.ma, model.ar, u)
    return x[burn_in:]


def gen_noise(sigma_v2, n, seed=None):
    """I.i.d. zero-mean Gaussian measurement noise of variance ``sigma_v2``."""
    if sigma_v2 < 0:
        raise ValueError("noise variance must be >= 0")
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) * math.sqrt(sigma_v2)


def _impulse_response(model):
    rho = model.max_pole_magnitude
    n = len(model.ma)
    if rho > 0:
        n += int(math.ceil(math.log(_TRUNCATION * 1e-2) / math.log(rho))) + len(model.ar)
    impulse = np.zeros(n)
    impulse[0] = 1.0
    h = signal.lfilter(model.ma, model.ar, impulse)
    keep = np.nonzero(np.abs(h) >= _TRUNCATION * np.max(np.abs(h)))[0]
    return h[: keep[-1] + 1]


def autocorrelation(model, max_lag):
    """Exact autocorrelation ``r(k) = E[x_i x_{i-k}]`` for ``k = 0..max_lag``.

    White and AR(1) use closed forms. General ARMA models use
    ``drive * sum_j h_j h_{j+k}`` over the impulse response of the filter,
    truncated where ``|h_j| < 1e-12 max|h|``.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    k = np.arange(max_lag + 1)
    if model.kind == "white":
        r = np.where(k == 0, model.drive_variance, 0.0)
    elif model.kind == "ar1":
        a = model.pole
        r = model.drive_variance / (1.0 - a * a) * a ** k
    else:
        h = _impulse_response(model)
        r = np.zeros(max_lag + 1)
        for lag in range(min(max_lag + 1, h.size)):
            r[lag] = np.dot(h[: h.size - lag], h[lag:])
        r *= model.drive_variance
    return AutocorrSequence(r)


def shifted_corr_matrix(r, K, m):
    """``R_{x,m} = E[[x_i..x_{i-K+1}]^T [x_{i+m}..x_{i+m-K+1}]]``.

    Entry ``(q, p)`` equals ``r(m + q - p)``; ``m = 0`` is the symmetric
    Toeplitz correlation matrix.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if abs(m) + K - 1 > r.max_lag:
        raise ValueError(
            f"need lags up to {abs(m) + K - 1}, autocorrelation has {r.max_lag}"
        )
    q = np.arange(K)[:, None]
    p = np.arange(K)[None, :]
    return r(m + q - p).astype(float)


def toeplitz_corr(model, M):
    """M x M correlation matrix of ``[x_i, ..., x_{i-M+1}]``."""
    return toeplitz(autocorrelation(model, M - 1).values)


def noise_variance_for_snr(w, model, snr_db):
    """Noise variance giving ``10 log10(E[(x^T w)^2] / sigma_v^2) == snr_db``."""
    w = np.asarray(w, dtype=float)
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    if not np.any(w):
        raise ValueError("SNR is undefined for an all-zero system response")
    power = float(w @ toeplitz_corr(model, w.size) @ w)
    return power / 10.0 ** (snr_db / 10.0)


class ImpulseResponseFileError(OSError):
    pass


def load_impulse_response(path, M, offset=0):
    """Read taps ``offset .. offset+M-1`` from a one-value-per-line text file."""
    if M < 1 or offset < 0:
        raise ValueError("need M >= 1 and offset >= 0")
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            try:
                value = float(text)
            except ValueError:
                raise ImpulseResponseFileError(
                    f"{path}:{lineno}: cannot parse {text!r} as a real number"
                ) from None
            if not math.isfinite(value):
                raise ImpulseResponseFileError(f"{path}:{lineno}: non-finite value")
            values.append(value)
            if len(values) == offset + M:
                break
    if len(values) < offset + M:
        raise ImpulseResponseFileError(
            f"{path}: has {len(values)} values, need {offset + M} "
            f"(offset={offset}, M={M}); file ends at line {len(values)}"
        )
    return np.array(values[offset:])


def synthetic_impulse_response(M, seed=0, decay=None):
    """Random Gaussian taps under an exponential envelope, unit energy.

    Stand-in for a measured room response; ``decay`` is the envelope time
    constant in samples (default ``M / 4``).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    decay = M / 4.0 if decay is None else float(decay)
    rng = np.random.default_rng(seed)
    taps = rng.standard_normal(M) * np.exp(-np.arange(M) / decay)
    return taps / np.linalg.norm(taps)


def write_impulse_response(path, taps):
    Path(path).write_text("".join(f"{float(t)!r}\n" for t in np.asarray(taps, dtype=float)))
