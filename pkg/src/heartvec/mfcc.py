"""MFCC front end: pre-emphasis, Hamming framing, magnitude spectrum,
triangular mel filterbank, log energies and DCT.

Feature matrices are plain ``(n_frames, n_ceps)`` float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import container
from .errors import InvalidConfigError, InvalidInputError, TooShortError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    pre_emphasis: float = 0.97
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 64
    n_filters: int = 20
    n_ceps: int = 12
    sample_rate_hz: int = 2000

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.n_filters < 1 or self.n_ceps < 1:
            raise InvalidConfigError("sample rate, filter count and cepstra count must be positive")
        if self.n_ceps > self.n_filters:
            raise InvalidConfigError(f"n_ceps={self.n_ceps} exceeds n_filters={self.n_filters}")
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise InvalidConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.frame_length < 2 or self.hop_length < 1:
            raise InvalidConfigError("frame must span at least 2 samples and hop at least 1")
        if self.fft_size < self.frame_length:
            raise InvalidConfigError(
                f"fft_size={self.fft_size} shorter than the {self.frame_length}-sample frame"
            )

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate_hz / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000.0))


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_filters, fft_size // 2 + 1)
    lower_bins: np.ndarray
    center_bins: np.ndarray
    upper_bins: np.ndarray
    center_hz: np.ndarray


def pre_emphasize(signal, coeff: float = 0.97) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise InvalidInputError("cannot pre-emphasize an empty signal")
    out = signal.copy()
    out[1:] -= coeff * signal[:-1]
    return out


@lru_cache(maxsize=16)
def hamming(n: int) -> np.ndarray:
    idx = np.arange(n)
    w = 0.54 - 0.46 * np.cos(2.0 * np.pi * idx / (n - 1))
    w.setflags(write=False)
    return w


def frame_count(n_samples: int, frame_length: int, hop_length: int) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // hop_length + 1


def frame_and_window(signal, config: MfccConfig) -> np.ndarray:
    """Slice into overlapping frames and apply a Hamming window.

    Returns an ``(n_frames, frame_length)`` array.
    """
    signal = np.asarray(signal, dtype=np.float64)
    n, hop = config.frame_length, config.hop_length
    count = frame_count(signal.size, n, hop)
    if count == 0:
        raise TooShortError(f"signal of {signal.size} samples is shorter than one {n}-sample frame")
    idx = hop * np.arange(count)[:, None] + np.arange(n)[None, :]
    return signal[idx] * hamming(n)


def power_spectrum(frames, fft_size: int) -> np.ndarray:
    """Magnitude ``|H[k]|`` for k = 0..fft_size/2 of each zero-padded frame.

    Works on a single frame or a stack of frames (last axis is time).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] > fft_size:
        raise InvalidInputError(f"frame of {frames.shape[-1]} samples exceeds fft_size={fft_size}")
    return np.abs(np.fft.rfft(frames, n=fft_size, axis=-1))


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidInputError("frequency must be non-negative")
    mel = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = 700.0 * (10.0 ** (mel / 2595.0) - 1.0)
    return float(hz) if hz.ndim == 0 else hz


def build_mel_filterbank(config: MfccConfig) -> MelFilterbank:
    """Triangular filters equally spaced on the mel axis from 0 Hz to Nyquist.

    Edge frequencies are snapped to the nearest FFT bin; each filter rises
    from the previous filter's center to its own (weight 1) and falls to
    the next filter's center.
    """
    L, nfft, sr = config.n_filters, config.fft_size, config.sample_rate_hz
    n_bins = nfft // 2 + 1
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sr / 2.0), L + 2))
    edges = np.rint(edges_hz * nfft / sr).astype(int)
    if np.any(np.diff(edges) <= 0):
        raise InvalidConfigError(
            f"{L} filters do not fit in a {nfft}-point FFT at {sr} Hz (duplicate bin centers)"
        )

    weights = np.zeros((L, n_bins))
    k = np.arange(n_bins)
    for l in range(L):
        lo, c, hi = edges[l], edges[l + 1], edges[l + 2]
        rise = (k >= lo) & (k <= c)
        fall = (k > c) & (k <= hi)
        weights[l, rise] = (k[rise] - lo) / (c - lo)
        weights[l, fall] = (hi - k[fall]) / (hi - c)
    return MelFilterbank(
        weights=weights,
        lower_bins=edges[:-2].copy(),
        center_bins=edges[1:-1].copy(),
        upper_bins=edges[2:].copy(),
        center_hz=edges[1:-1] * sr / nfft,
    )


def log_mel_energies(spectrum, bank: MelFilterbank) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape[-1] != bank.weights.shape[1]:
        raise InvalidInputError(
            f"spectrum has {spectrum.shape[-1]} bins, filterbank expects {bank.weights.shape[1]}"
        )
    return np.log(np.maximum(spectrum @ bank.weights.T, LOG_FLOOR))


@lru_cache(maxsize=16)
def _dct_basis(L: int, M: int) -> np.ndarray:
    m = np.arange(1, M + 1)[:, None]
    l = np.arange(1, L + 1)[None, :]
    basis = np.cos(np.pi * m * (l - 0.5) / L)
    basis.setflags(write=False)
    return basis


def dct_cepstra(log_energies, n_ceps: int) -> np.ndarray:
    """Cepstral coefficients 1..n_ceps (the energy term C[0] is dropped)."""
    log_energies = np.asarray(log_energies, dtype=np.float64)
    L = log_energies.shape[-1]
    if n_ceps > L:
        raise InvalidConfigError(f"cannot take {n_ceps} cepstra from {L} filter energies")
    return log_energies @ _dct_basis(L, n_ceps).T


_BANKS: dict[MfccConfig, MelFilterbank] = {}


def _bank_for(config: MfccConfig) -> MelFilterbank:
    bank = _BANKS.get(config)
    if bank is None:
        bank = _BANKS[config] = build_mel_filterbank(config)
    return bank


def mfcc_from_signal(signal, config: MfccConfig) -> np.ndarray:
    frames = frame_and_window(pre_emphasize(signal, config.pre_emphasis), config)
    spec = power_spectrum(frames, config.fft_size)
    return dct_cepstra(log_mel_energies(spec, _bank_for(config)), config.n_ceps)


def extract_mfcc(record, config: MfccConfig | None = None) -> np.ndarray:
    """MFCC matrix ``(n_frames, n_ceps)`` of an :class:`AudioRecord`."""
    config = config or MfccConfig()
    if record.sample_rate_hz != config.sample_rate_hz:
        raise InvalidConfigError(
            f"{record.record_id}: sampled at {record.sample_rate_hz} Hz, "
            f"config expects {config.sample_rate_hz} Hz (resampling is not supported)"
        )
    try:
        return mfcc_from_signal(record.samples, config)
    except TooShortError as exc:
        raise TooShortError(f"{record.record_id}: {exc}") from None


@container.register("FeatureMatrix")
@dataclass
class FeatureMatrix:
    """Feature dump of one record, storable in the model container."""

    record_id: str
    values: np.ndarray

    def _to_payload(self):
        return {"record_id": self.record_id}, {"values": self.values}

    @classmethod
    def _from_payload(cls, meta, arrays):
        return cls(meta["record_id"], arrays["values"])
