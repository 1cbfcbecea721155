import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from apa_lab.signals import (
    AutocorrSequence,
    ImpulseResponseFileError,
    SignalModel,
    arma22,
    autocorrelation,
    default_burn_in,
    derive_seed,
    gen_noise,
    gen_process,
    load_impulse_response,
    noise_variance_for_snr,
    shifted_corr_matrix,
    synthetic_impulse_response,
    toeplitz_corr,
    write_impulse_response,
)

# statsmodels.tsa.arima_process.arma_acovf, unit drive
ARMA22_ACOVF = [7.117944337675244, 6.058189194960461, 4.1944870556622895, 2.7840225057995482,
                1.7231265472848656, 0.9313898404647256, 0.3464772781055059, -0.07990390598141184]
ARMA31_ACOVF = [1.880952380952381, 1.142857142857143, 0.3095238095238095, 0.11428571428571424,
                0.10952380952380952, 0.06285714285714286]


class TestSignalModel:
    def test_unstable_rejected(self):
        with pytest.raises(ValueError, match="unstable"):
            SignalModel.ar1(1.0)
        with pytest.raises(ValueError, match="unstable"):
            SignalModel.arma([1.0, -2.5, 1.0], [1.0])

    def test_non_monic_and_bad_drive(self):
        with pytest.raises(ValueError):
            SignalModel.arma([2.0, 0.5], [1.0])
        with pytest.raises(ValueError):
            SignalModel.white(0.0)
        with pytest.raises(ValueError):
            SignalModel("pink")

    def test_arma22_poles(self):
        m = arma22()
        assert m.max_pole_magnitude == pytest.approx(0.9243, abs=1e-3)
        assert default_burn_in(m) == 662

    def test_with_variance(self):
        m = arma22().with_variance(2.5)
        assert m.variance == pytest.approx(2.5, rel=1e-12)

    def test_labels(self):
        assert SignalModel.white().label() == "white"
        assert SignalModel.ar1(0.95).label() == "ar1(0.95)"


class TestAutocorrelation:
    def test_white(self):
        r = autocorrelation(SignalModel.white(2.0), 3)
        assert_allclose(r.values, [2.0, 0, 0, 0])

    @pytest.mark.parametrize("a", [0.95, -0.6, 0.3])
    def test_ar1_closed_form_matches_general_path(self, a):
        closed = autocorrelation(SignalModel.ar1(a, 0.7), 10).values
        general = autocorrelation(SignalModel.arma([1.0, -a], [1.0], 0.7), 10).values
        assert_allclose(general, closed, rtol=1e-11, atol=1e-12 * closed[0])

    def test_arma22_against_frozen_oracle(self):
        r = autocorrelation(arma22(), 7).values
        assert_allclose(r, ARMA22_ACOVF, rtol=0, atol=1e-12 * ARMA22_ACOVF[0])

    def test_arma31_against_frozen_oracle(self):
        r = autocorrelation(SignalModel.arma([1, -0.5, 0.2, -0.1], [1, 0.4]), 5).values
        assert_allclose(r, ARMA31_ACOVF, rtol=0, atol=1e-12)

    def test_empirical_arma22(self):
        # tolerance relative to r(0): late lags are small and noisy
        x = gen_process(arma22(), 2_000_000, seed=derive_seed(5, "acf"))
        r = autocorrelation(arma22(), 5).values
        emp = [np.dot(x[: x.size - k], x[k:]) / (x.size - k) for k in range(6)]
        assert_allclose(emp, r, atol=0.03 * r[0])

    def test_sequence_lookup(self):
        r = AutocorrSequence([1.0, 0.5, 0.25])
        assert r(-2) == 0.25
        with pytest.raises(ValueError):
            r(3)
        with pytest.raises(ValueError):
            AutocorrSequence([1.0, 1.5])


class TestCorrelationMatrices:
    def test_shifted_entries(self):
        r = autocorrelation(SignalModel.ar1(0.5), 6)
        R = shifted_corr_matrix(r, 3, 2)
        for q in range(3):
            for p in range(3):
                assert R[q, p] == r(2 + q - p)

    def test_zero_shift_is_toeplitz(self):
        m = SignalModel.ar1(0.8)
        r = autocorrelation(m, 4)
        assert_allclose(shifted_corr_matrix(r, 5, 0), toeplitz_corr(m, 5))

    def test_not_enough_lags(self):
        r = autocorrelation(SignalModel.white(), 3)
        with pytest.raises(ValueError):
            shifted_corr_matrix(r, 3, 2)

    @given(a=st.floats(-0.95, 0.95), M=st.integers(1, 12))
    @settings(max_examples=50, deadline=None)
    def test_toeplitz_positive_definite(self, a, M):
        ev = np.linalg.eigvalsh(toeplitz_corr(SignalModel.ar1(a), M))
        assert ev.min() > 0


class TestGeneration:
    def test_seed_derivation_is_stable_and_distinct(self):
        a = np.random.default_rng(derive_seed(1, "input", 3)).standard_normal(4)
        b = np.random.default_rng(derive_seed(1, "input", 3)).standard_normal(4)
        c = np.random.default_rng(derive_seed(1, "noise", 3)).standard_normal(4)
        d = np.random.default_rng(derive_seed(1, "input", 4)).standard_normal(4)
        assert_allclose(a, b)
        assert not np.allclose(a, c) and not np.allclose(a, d)

    def test_white_moments(self):
        x = gen_process(SignalModel.white(3.0), 400_000, seed=1)
        assert x.var() == pytest.approx(3.0, rel=0.01)
        assert abs(np.mean(x[1:] * x[:-1])) < 0.02

    def test_noise(self):
        v = gen_noise(0.25, 200_000, seed=2)
        assert v.var() == pytest.approx(0.25, rel=0.02)
        assert not np.any(gen_noise(0.0, 10, seed=2))
        with pytest.raises(ValueError):
            gen_noise(-1.0, 10)

    def test_bad_lengths(self):
        with pytest.raises(ValueError):
            gen_process(SignalModel.white(), 0)
        with pytest.raises(ValueError):
            gen_process(SignalModel.white(), 5, burn_in=-1)

    def test_snr(self):
        w = np.zeros(8)
        w[0] = 1.0
        assert noise_variance_for_snr(w, SignalModel.white(), 30.0) == pytest.approx(1e-3)
        with pytest.raises(ValueError):
            noise_variance_for_snr(np.zeros(4), SignalModel.white(), 30.0)


class TestImpulseResponseFiles:
    def test_round_trip(self, tmp_path):
        taps = synthetic_impulse_response(32, seed=4)
        assert np.linalg.norm(taps) == pytest.approx(1.0)
        path = tmp_path / "ir.txt"
        write_impulse_response(path, taps)
        assert_allclose(load_impulse_response(path, 32), taps, rtol=0, atol=0)
        assert_allclose(load_impulse_response(path, 8, offset=10), taps[10:18], rtol=0, atol=0)

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "ir.txt"
        path.write_text("0.5\n0.25\nabc\n")
        with pytest.raises(ImpulseResponseFileError, match=":3:"):
            load_impulse_response(path, 3)

    def test_short_file(self, tmp_path):
        path = tmp_path / "ir.txt"
        path.write_text("1\n2\n")
        with pytest.raises(ImpulseResponseFileError, match="need 3"):
            load_impulse_response(path, 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_impulse_response(tmp_path / "nope.txt", 3)


def test_burn_in_cap():
    assert default_burn_in(SignalModel.ar1(1 - 1e-9)) == 10**6
    assert default_burn_in(SignalModel.white()) == 50
    assert math.isclose(default_burn_in(SignalModel.ar1(0.95)), 1000, abs_tol=1)
