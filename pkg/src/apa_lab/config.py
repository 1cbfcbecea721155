"""Experiment files: flat INI sections, one experiment per section.

Example::

    [white_k4]
    models = white
    M = 64
    K = 4
    schedule = rational
    C = 7e-4
    snr_db = 30
    J = 2000
    n_iters = 5001
    record_corr_at = 500, 2000, 5000
    seed = 1

List-valued keys are comma separated. Model tokens are ``white``,
``ar1(<pole>)``, ``arma22`` and ``arma(<ar coefficients> / <ma coefficients>)``
with space-separated coefficients.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .apa import FilterConfig, StepSchedule
from .montecarlo import DEFAULT_CHUNK, EnsembleConfig
from .signals import (
    SignalModel,
    arma22,
    load_impulse_response,
    synthetic_impulse_response,
)

__all__ = ["ConfigError", "ExperimentSpec", "parse_model", "load_experiments", "settle_iterations"]

THEORY_KEYS = ("diag_eav", "trace_eav", "e_energy", "ea_energy", "emse", "components",
               "mse_prior_small_mu", "mse_prior_correlated")

_KNOWN_KEYS = {
    "models", "model", "m", "k", "mu", "schedule", "c", "snr_db", "sigma_v2", "j", "n_iters",
    "record_corr_at", "ss_window", "init", "seed", "impulse_response", "ir_seed", "ir_offset",
    "beta", "theory", "chunk_size", "mc_draws", "theory_stride",
}


class ConfigError(ValueError):
    pass


def parse_model(token):
    token = token.strip().lower()
    if token == "white":
        return SignalModel.white()
    if token == "arma22":
        return arma22()
    m = re.fullmatch(r"ar1\(\s*([^)]+?)\s*\)", token)
    if m:
        return SignalModel.ar1(float(m.group(1)))
    m = re.fullmatch(r"arma\(([^/]+)/([^)]+)\)", token)
    if m:
        ar = [float(t) for t in m.group(1).split()]
        ma = [float(t) for t in m.group(2).split()]
        return SignalModel.arma(ar, ma)
    raise ConfigError(f"unknown input model {token!r}")


def settle_iterations(M, K, mu):
    """Iterations discarded before a steady-state window: ``max(2000, 5 M / (mu K))``."""
    return max(2000, math.ceil(5.0 * M / (mu * K)))


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: shared settings plus sweep axes over model, M, K and mu."""

    name: str
    models: tuple
    model_tokens: tuple
    M: tuple
    K: tuple
    mu: tuple
    schedule: str = "constant"
    C: float = 7e-4
    snr_db: float = 30.0
    sigma_v2: float | None = None
    J: int = 2000
    n_iters: int | None = None
    record_corr_at: tuple = ()
    ss_window: int = 0
    init: str = "zero"
    seed: int = 0
    impulse_response: str = "synthetic"
    ir_seed: int = 0
    ir_offset: int = 0
    beta: float = 0.0
    theory: tuple = THEORY_KEYS
    chunk_size: int = DEFAULT_CHUNK
    mc_draws: int = 200_000
    theory_stride: int = 10
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        for axis in ("models", "M", "K", "mu"):
            if not getattr(self, axis):
                raise ConfigError(f"[{self.name}] sweep axis {axis!r} is empty")
        if self.schedule not in ("constant", "rational"):
            raise ConfigError(f"[{self.name}] schedule must be 'constant' or 'rational'")
        unknown = set(self.theory) - set(THEORY_KEYS)
        if unknown:
            raise ConfigError(f"[{self.name}] unknown theory toggles {sorted(unknown)}")
        if self.impulse_response != "synthetic":
            path = self.ir_path
            if not path.is_file():
                raise ConfigError(f"[{self.name}] impulse response file {path} does not exist")

    @property
    def ir_path(self):
        p = Path(self.impulse_response)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        """Build every sweep point's filter once so bad values fail before any run."""
        try:
            for M in self.M:
                taps = self.taps(M)
                for K in self.K:
                    for mu in self.mu_axis():
                        FilterConfig(M, K, taps, self.step_schedule(mu), self.beta)
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(f"[{self.name}] {exc}") from None
        return self

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def taps(self, M):
        if self.impulse_response == "synthetic":
            return synthetic_impulse_response(M, seed=self.ir_seed)
        return load_impulse_response(self.ir_path, M, self.ir_offset)

    def step_schedule(self, mu):
        if self.schedule == "rational":
            return StepSchedule.rational_decay(self.C)
        return StepSchedule.constant(mu)

    def mu_axis(self):
        """The mu values swept; a decaying schedule has a single unnamed point."""
        return (None,) if self.schedule == "rational" else self.mu

    def points(self):
        """Sweep points ``(model_index, M, K, mu)`` in a fixed order."""
        return [(mi, M, K, mu) for mi in range(len(self.models)) for M in self.M
                for K in self.K for mu in self.mu_axis()]

    def ensemble(self, mi, M, K, mu):
        """``EnsembleConfig`` for one sweep point.

        With ``n_iters`` unset the run length is the settling time plus the
        steady-state window, and the filter starts at the true response.
        """
        taps = self.taps(M)
        schedule = self.step_schedule(mu)
        fcfg = FilterConfig(M, K, taps, schedule, self.beta)
        n_iters, init = self.n_iters, self.init
        if n_iters is None:
            if mu is None or not self.ss_window:
                raise ConfigError(f"[{self.name}] n_iters is required for this experiment")
            n_iters = settle_iterations(M, K, mu) + self.ss_window
            init = "true"
        record = tuple(i for i in self.record_corr_at if K <= i < n_iters)
        try:
            return EnsembleConfig(
                filter=fcfg, model=self.models[mi], snr_db=self.snr_db, n_iters=n_iters, J=self.J,
                master_seed=self.seed, record_corr_at=record, ss_window=self.ss_window,
                init=init, chunk_size=self.chunk_size,
            )
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {exc}") from None


def _list(text, conv):
    return tuple(conv(t.strip()) for t in text.split(",") if t.strip())


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _section_spec(name, sec, base_dir):
    keys = {k.lower() for k in sec}
    unknown = keys - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"[{name}] unknown keys {sorted(unknown)}")
    model_text = sec.get("models", sec.get("model", "white"))
    tokens = tuple(t.strip() for t in re.split(r",(?![^()]*\))", model_text) if t.strip())
    kw = dict(
        name=name,
        models=tuple(parse_model(t) for t in tokens),
        model_tokens=tokens,
        M=_list(sec.get("m", "64"), _int),
        K=_list(sec.get("k", "4"), _int),
        mu=_list(sec.get("mu", "0.05"), float),
        base_dir=base_dir,
    )
    scalars = {
        "schedule": str, "c": float, "snr_db": float, "sigma_v2": float, "j": _int,
        "ss_window": _int, "init": str, "seed": _int, "impulse_response": str,
        "ir_seed": _int, "ir_offset": _int, "beta": float, "chunk_size": _int,
        "mc_draws": _int, "theory_stride": _int,
    }
    fields = {"c": "C", "j": "J"}
    for key, conv in scalars.items():
        if key in sec:
            kw[fields.get(key, key)] = conv(sec[key].strip())
    if "n_iters" in sec and sec["n_iters"].strip().lower() != "auto":
        kw["n_iters"] = _int(sec["n_iters"])
    if "record_corr_at" in sec:
        kw["record_corr_at"] = _list(sec["record_corr_at"], _int)
    if "theory" in sec:
        kw["theory"] = _list(sec["theory"], str)
    return ExperimentSpec(**kw)


def load_experiments(path, only=None):
    """Parse every section of an INI file into an ``ExperimentSpec``.

    Any problem (missing file, bad value, empty axis) raises ``ConfigError``.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    names = parser.sections()
    if only:
        missing = [n for n in only if n not in names]
        if missing:
            raise ConfigError(f"{path}: no experiment(s) {missing}")
        names = [n for n in names if n in only]
    if not names:
        raise ConfigError(f"{path}: no experiments defined")
    specs = []
    for name in names:
        try:
            specs.append(_section_spec(name, parser[name], path.parent).validate())
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return specs
