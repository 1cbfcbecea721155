import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from apa_lab import montecarlo as mc
from apa_lab.apa import ErrorTrace, FilterConfig, StepSchedule, history_length, run_filter
from apa_lab.montecarlo import (
    CorrEstimate,
    EnsembleConfig,
    EnsembleRunError,
    compare_corr,
    compare_to_theory,
    run_ensemble,
    steady_state_average,
)
from apa_lab.signals import SignalModel, derive_seed, gen_noise, gen_process, synthetic_impulse_response
from apa_lab.theory import diag_eav_transient, theory_report


def small_config(**kw):
    M, K = kw.pop("M", 8), kw.pop("K", 3)
    fcfg = FilterConfig(M, K, synthetic_impulse_response(M, seed=1),
                        kw.pop("schedule", StepSchedule.constant(0.3)))
    base = dict(filter=fcfg, model=SignalModel.ar1(0.5), snr_db=20.0, n_iters=200, J=6,
                master_seed=4, record_corr_at=(5, 100, 199), ss_window=50, chunk_size=4)
    base.update(kw)
    return EnsembleConfig(**base)


def single_run(cfg, j):
    lead = history_length(cfg.filter)
    n = cfg.n_iters + lead
    x = gen_process(cfg.model, n, seed=derive_seed(cfg.master_seed, "input", j))
    v = gen_noise(cfg.sigma_v2, n, seed=derive_seed(cfg.master_seed, "noise", j))
    w0 = cfg.filter.w_true if cfg.init == "true" else None
    return run_filter(cfg.filter, x, v, cfg.n_iters, w0=w0, prefilled=True)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            small_config(J=0)
        with pytest.raises(ValueError):
            small_config(ss_window=200)
        with pytest.raises(ValueError):
            small_config(record_corr_at=(2,))
        with pytest.raises(ValueError):
            small_config(record_corr_at=(200,))
        with pytest.raises(ValueError):
            small_config(init="random")

    def test_noise_from_snr(self):
        cfg = small_config(model=SignalModel.white(), snr_db=30.0)
        assert cfg.sigma_v2 == pytest.approx(1e-3)
        assert small_config(snr_db=math.inf).sigma_v2 == 0.0


class TestRunEnsemble:
    def test_single_run(self):
        cfg = small_config(J=1)
        res = run_ensemble(cfg)
        tr = single_run(cfg, 0)
        for est in res.corr:
            i = est.iteration
            assert_allclose(est.mean, np.outer(tr.e_a[i], tr.v[i]), rtol=0, atol=1e-15)
            assert np.all(np.isinf(est.stderr))
        avg = steady_state_average(tr, cfg.ss_window)
        ss = res.steady_state
        assert ss.e_energy == pytest.approx(float(avg["e_energy"]), rel=1e-12)
        assert_allclose(ss.component_energies, avg["components"], rtol=1e-12)
        assert ss.emse == pytest.approx(float(avg["emse"]), rel=1e-12)
        assert math.isinf(ss.e_energy_stderr)

    def test_mean_of_runs(self):
        cfg = small_config(J=5)
        res = run_ensemble(cfg)
        traces = [single_run(cfg, j) for j in range(5)]
        est = res.corr[1]
        outer = np.array([np.outer(t.e_a[100], t.v[100]) for t in traces])
        assert_allclose(est.mean, outer.mean(0), rtol=1e-12, atol=1e-18)
        assert_allclose(est.stderr, outer.std(0, ddof=1) / math.sqrt(5), rtol=1e-10)

    def test_noiseless_means_are_zero(self):
        res = run_ensemble(small_config(snr_db=math.inf))
        for est in res.corr:
            assert not np.any(est.mean)
            assert not np.any(est.v_mean)

    def test_error_split_in_the_mean(self):
        res = run_ensemble(small_config(J=10))
        for est in res.corr:
            scale = max(np.abs(est.e_mean).max(), 1e-300)
            assert np.max(np.abs(est.e_mean - est.ea_mean - est.v_mean)) <= 1e-12 * scale

    def test_worker_count_does_not_matter(self):
        cfg = small_config(J=9, chunk_size=2)
        a, b = run_ensemble(cfg, workers=1), run_ensemble(cfg, workers=3)
        for ea, eb in zip(a.corr, b.corr):
            assert ea.mean.tobytes() == eb.mean.tobytes()
            assert ea.stderr.tobytes() == eb.stderr.tobytes()
        assert a.steady_state.component_energies.tobytes() == b.steady_state.component_energies.tobytes()

    def test_chunking_does_not_matter(self):
        a = run_ensemble(small_config(J=7, chunk_size=3))
        b = run_ensemble(small_config(J=7, chunk_size=7))
        assert_allclose(a.corr[2].mean, b.corr[2].mean, rtol=1e-13, atol=1e-18)

    def test_stderr_scaling(self):
        cfg = dict(model=SignalModel.white(), n_iters=120, record_corr_at=(100,), ss_window=0,
                   schedule=StepSchedule.constant(0.5))
        se1 = run_ensemble(small_config(J=200, **cfg)).corr[0].stderr
        se4 = run_ensemble(small_config(J=800, **cfg)).corr[0].stderr
        ratio = np.median(se1 / se4)
        assert ratio == pytest.approx(2.0, rel=0.2)

    def test_nlms_uncorrelated(self):
        cfg = small_config(K=1, model=SignalModel.white(), J=400, n_iters=300,
                           record_corr_at=(299,), ss_window=0, chunk_size=400)
        est = run_ensemble(cfg).corr[0]
        assert abs(est.mean[0, 0]) < 4 * est.stderr[0, 0]

    def test_failed_run_is_named(self, monkeypatch):
        real = mc.gen_process

        def fake(model, n, burn_in=None, seed=None):
            x = real(model, n, burn_in, seed)
            if seed.spawn_key[-1] == 3:
                x[:] = 0.0
            return x

        monkeypatch.setattr(mc, "gen_process", fake)
        with pytest.raises(EnsembleRunError) as info:
            run_ensemble(small_config(J=6, chunk_size=2))
        assert info.value.run_index == 3


class TestSteadyStateAverage:
    def trace(self, e, e_a=None):
        e = np.asarray(e, dtype=float)
        e_a = np.zeros_like(e) if e_a is None else e_a
        return ErrorTrace(e=e, e_a=e_a, v=e - e_a, mu=np.ones(e.shape[-2]), w_final=np.zeros(1))

    def test_constant(self):
        out = steady_state_average(self.trace(np.full((50, 2), 3.0)), 10)
        assert out["e_energy"] == pytest.approx(18.0)
        assert_allclose(out["components"], [9.0, 9.0])

    def test_full_window(self):
        e = np.random.default_rng(0).standard_normal((40, 3))
        out = steady_state_average(self.trace(e), 40)
        assert_allclose(out["components"], np.mean(e**2, axis=0))

    def test_white_noise_clt(self):
        s2, window = 0.3, 20_000
        e = np.sqrt(s2) * np.random.default_rng(1).standard_normal((window + 100, 1))
        out = steady_state_average(self.trace(e), window)
        assert abs(out["mse"] - s2) <= 5 / math.sqrt(window) * s2

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            steady_state_average(self.trace(np.ones((5, 1))), 6)
        with pytest.raises(ValueError):
            steady_state_average(self.trace(np.ones((5, 1))), 0)


def fake_estimate(mean, stderr, it=10):
    K = mean.shape[0]
    z = np.zeros(K)
    return CorrEstimate(it, mean, stderr, z, z, z)


class TestComparison:
    def test_exact_estimate_passes(self):
        th = theory_report(0.3, 4, 0.01)
        est = fake_estimate(np.diag(th.diag_eav), np.full((4, 4), 1e-4))
        report = compare_to_theory([est], th)
        assert report.passed
        assert len(report.checks) == 4 + 6

    def test_white_adds_above_diagonal(self):
        th = theory_report(0.3, 4, 0.01)
        est = fake_estimate(np.diag(th.diag_eav), np.full((4, 4), 1e-4))
        assert len(compare_to_theory([est], th, white=True).checks) == 4 + 12

    def test_wrong_noise_variance_fails(self):
        s2 = 1e-3
        cfg = small_config(model=SignalModel.white(), J=300, n_iters=301, record_corr_at=(300,),
                           ss_window=0, snr_db=30.0, chunk_size=300,
                           schedule=StepSchedule.constant(0.5))
        res = run_ensemble(cfg)
        sched = cfg.filter.schedule
        good = compare_corr(res.corr, lambda i: diag_eav_transient(sched, i, 3, s2), white=True)
        bad = compare_corr(res.corr, lambda i: diag_eav_transient(sched, i, 3, 2 * s2))
        assert good.passed, good.summary()
        diag_checks = [c for c in bad.checks if c.name.endswith("(2,2)") or c.name.endswith("(3,3)")]
        assert not any(c.passed for c in diag_checks)

    def test_infinite_stderr_never_passes_zero_checks(self):
        est = fake_estimate(np.zeros((2, 2)), np.full((2, 2), np.inf))
        report = compare_corr([est], np.zeros(2))
        zero_checks = [c for c in report.checks if c.expected == 0.0 and "(2,2)" not in c.name]
        assert zero_checks and not any(c.passed for c in zero_checks)

    def test_shape_mismatch(self):
        est = fake_estimate(np.zeros((3, 3)), np.ones((3, 3)))
        with pytest.raises(ValueError):
            compare_corr([est], np.zeros(4))
        ss = run_ensemble(small_config(J=2)).steady_state
        with pytest.raises(ValueError):
            compare_to_theory(ss, theory_report(0.3, 2, 0.1))

    def test_steady_state_report(self):
        # the theory assumes M >> K
        cfg = small_config(M=32, K=2, model=SignalModel.white(), J=40, n_iters=1500,
                           ss_window=1000, record_corr_at=(), snr_db=30.0, init="true")
        res = run_ensemble(cfg)
        report = compare_to_theory(res.steady_state, theory_report(0.3, 2, cfg.sigma_v2))
        assert report.passed, [c.line() for c in report.failures()]
        assert "checks passed" in report.summary()
