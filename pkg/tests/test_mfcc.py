from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heartvec.dataset import AudioRecord
from heartvec.errors import InvalidConfigError, InvalidInputError, TooShortError
from heartvec.mfcc import (
    LOG_FLOOR,
    MfccConfig,
    build_mel_filterbank,
    dct_cepstra,
    extract_mfcc,
    frame_and_window,
    frame_count,
    hamming,
    hz_to_mel,
    log_mel_energies,
    mel_to_hz,
    power_spectrum,
    pre_emphasize,
)


def naive_dft_magnitude(frame, nfft):
    x = np.zeros(nfft)
    x[: len(frame)] = frame
    out = []
    for k in range(nfft // 2 + 1):
        acc = 0j
        for n in range(nfft):
            acc += x[n] * complex(math.cos(2 * math.pi * k * n / nfft), -math.sin(2 * math.pi * k * n / nfft))
        out.append(abs(acc))
    return np.array(out)


def naive_dct(X, M):
    L = len(X)
    return np.array([sum(X[l - 1] * math.cos(math.pi * m * (l - 0.5) / L) for l in range(1, L + 1)) for m in range(1, M + 1)])


class TestPreEmphasis:
    def test_ones(self):
        np.testing.assert_allclose(pre_emphasize([1.0, 1.0, 1.0], 0.97), [1.0, 0.03, 0.03], atol=1e-15)

    def test_impulse(self):
        np.testing.assert_array_equal(pre_emphasize([1.0, 0.0, 0.0], 0.97), [1.0, -0.97, 0.0])

    def test_zeros_and_empty(self):
        np.testing.assert_array_equal(pre_emphasize(np.zeros(5)), np.zeros(5))
        with pytest.raises(InvalidInputError):
            pre_emphasize([])


class TestFraming:
    def test_window_values(self):
        w = hamming(51)
        assert w[0] == pytest.approx(0.08, abs=1e-15)
        assert w[25] == pytest.approx(1.0, abs=1e-15)
        n = np.arange(50)
        np.testing.assert_allclose(hamming(50), 0.54 - 0.46 * np.cos(2 * np.pi * n / 49), atol=1e-15)

    def test_three_frames_from_100_samples(self):
        frames = frame_and_window(np.ones(100), MfccConfig())
        assert frames.shape == (3, 50)
        np.testing.assert_allclose(frames[1], hamming(50))

    def test_frame_contents(self, rng):
        x = rng.normal(size=137)
        cfg = MfccConfig()
        frames = frame_and_window(x, cfg)
        for i, f in enumerate(frames):
            np.testing.assert_array_equal(f, x[20 * i : 20 * i + 50] * hamming(50))

    @given(st.integers(1, 400), st.integers(1, 200), st.integers(0, 500))
    def test_frame_count_formula(self, n, hop, extra):
        length = n + extra
        assert frame_count(length, n, hop) == (length - n) // hop + 1
        # brute force: count admissible start offsets
        assert frame_count(length, n, hop) == len(range(0, length - n + 1, hop))

    def test_too_short(self):
        with pytest.raises(TooShortError):
            frame_and_window(np.ones(49), MfccConfig())


class TestSpectrum:
    def test_constant_frame(self):
        np.testing.assert_allclose(power_spectrum(np.ones(4), 4), [4.0, 0.0, 0.0], atol=1e-12)

    def test_zero_frame(self):
        np.testing.assert_array_equal(power_spectrum(np.zeros(50), 64), np.zeros(33))

    def test_matches_naive_dft(self, rng):
        for _ in range(10):
            frame = rng.normal(size=50)
            np.testing.assert_allclose(power_spectrum(frame, 64), naive_dft_magnitude(frame, 64), atol=1e-9)

    def test_frame_longer_than_fft(self):
        with pytest.raises(InvalidInputError):
            power_spectrum(np.ones(65), 64)


class TestMel:
    def test_known_values(self):
        assert hz_to_mel(0.0) == 0.0
        assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2), abs=1e-6)
        assert hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)
        assert hz_to_mel(1000.0) == pytest.approx(999.99, abs=0.01)

    def test_negative(self):
        with pytest.raises(InvalidInputError):
            hz_to_mel(-1.0)

    @given(st.floats(0.0, 1e5))
    def test_inverse(self, f):
        assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f, rel=1e-9, abs=1e-9)


class TestFilterbank:
    def test_default_shape_and_rows(self):
        bank = build_mel_filterbank(MfccConfig())
        assert bank.weights.shape == (20, 33)
        assert np.all(bank.weights >= 0)
        assert np.all(bank.weights.sum(axis=1) > 0)
        assert np.all(np.diff(bank.center_hz) > 0)

    def test_peak_and_support(self):
        bank = build_mel_filterbank(MfccConfig())
        k = np.arange(33)
        for l in range(20):
            assert bank.weights[l, bank.center_bins[l]] == 1.0
            outside = (k < bank.lower_bins[l]) | (k > bank.upper_bins[l])
            assert np.all(bank.weights[l, outside] == 0)

    def test_adjacent_filters_meet_at_centers(self):
        bank = build_mel_filterbank(MfccConfig())
        np.testing.assert_array_equal(bank.upper_bins[:-1], bank.center_bins[1:])
        np.testing.assert_array_equal(bank.lower_bins[1:], bank.center_bins[:-1])

    def test_too_many_filters(self):
        with pytest.raises(InvalidConfigError):
            build_mel_filterbank(MfccConfig(n_filters=40))

    def test_sinusoid_peaks_at_nearest_filter(self):
        cfg = MfccConfig()
        bank = build_mel_filterbank(cfg)
        n = np.arange(50)
        frame = np.sin(2 * np.pi * 250.0 * n / 2000.0) * hamming(50)
        # brute-force per-filter energy with the naive DFT
        mag = naive_dft_magnitude(frame, 64)
        energies = [sum(mag[k] * bank.weights[l, k] for k in range(33)) for l in range(20)]
        expected = int(np.argmin(np.abs(bank.center_hz - 250.0)))
        assert int(np.argmax(energies)) == expected
        assert int(np.argmax(log_mel_energies(power_spectrum(frame, 64), bank))) == expected


class TestLogAndDct:
    def test_log_floor(self):
        bank = build_mel_filterbank(MfccConfig())
        np.testing.assert_array_equal(log_mel_energies(np.zeros(33), bank), np.full(20, np.log(LOG_FLOOR)))

    def test_unit_energy_gives_zero(self):
        bank = build_mel_filterbank(MfccConfig())
        spec = np.zeros(33)
        spec[bank.center_bins[4]] = 1.0
        assert log_mel_energies(spec, bank)[4] == 0.0

    def test_dct_constant(self):
        np.testing.assert_allclose(dct_cepstra(np.full(20, 3.7), 12), np.zeros(12), atol=1e-12)

    def test_dct_matches_naive(self, rng):
        for _ in range(10):
            X = rng.normal(size=20)
            np.testing.assert_allclose(dct_cepstra(X, 12), naive_dct(X, 12), atol=1e-9)

    def test_dct_too_many(self):
        with pytest.raises(InvalidConfigError):
            dct_cepstra(np.zeros(20), 21)


class TestExtract:
    def test_five_second_record(self, rng):
        rec = AudioRecord("x", rng.uniform(-0.5, 0.5, 10000), 2000)
        feats = extract_mfcc(rec)
        assert feats.shape == (498, 12)
        assert np.all(np.isfinite(feats))
        np.testing.assert_array_equal(feats, extract_mfcc(rec))

    def test_silence_rows_identical(self):
        feats = extract_mfcc(AudioRecord("z", np.zeros(400), 2000))
        assert np.all(feats == feats[0])

    def test_rate_mismatch(self):
        with pytest.raises(InvalidConfigError):
            extract_mfcc(AudioRecord("x", np.zeros(4000), 4000))

    def test_too_short(self):
        with pytest.raises(TooShortError, match="tiny"):
            extract_mfcc(AudioRecord("tiny", np.zeros(10), 2000))

    @pytest.mark.parametrize(
        "kwargs", [dict(n_ceps=21), dict(fft_size=48), dict(fft_size=32), dict(sample_rate_hz=0)]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(InvalidConfigError):
            MfccConfig(**kwargs)

    def test_derived_lengths(self):
        cfg = MfccConfig()
        assert (cfg.frame_length, cfg.hop_length) == (50, 20)
