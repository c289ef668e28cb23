"""Toy two-class corpus: band-limited noise at two centre frequencies.

Used for smoke-testing the full pipeline without PhysioNet audio.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .dataset import AudioRecord, Label, LabelTable, Quality, write_reference, write_wav


def band_noise(rng, n_samples: int, center_hz: float, bandwidth_hz: float, sample_rate_hz: int) -> np.ndarray:
    lo = max(center_hz - bandwidth_hz / 2.0, 1.0)
    hi = min(center_hz + bandwidth_hz / 2.0, sample_rate_hz / 2.0 - 1.0)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sample_rate_hz, output="sos")
    x = sosfiltfilt(sos, rng.standard_normal(n_samples))
    return x / np.sqrt(np.mean(x**2))


def toy_records(
    n_records: int = 40,
    seed: int = 0,
    duration_s: float = 20.0,
    sample_rate_hz: int = 2000,
    centers_hz=(150.0, 400.0),
    bandwidth_hz: float = 80.0,
    snr_db: float = 10.0,
) -> list[AudioRecord]:
    """Alternate Normal (first centre) and Abnormal (second centre) records.

    Each record is unit-power band-limited noise plus white noise at
    ``snr_db``, scaled to a 0.5 peak.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    noise_std = 10.0 ** (-snr_db / 20.0)
    records = []
    for i in range(n_records):
        label = Label.NORMAL if i % 2 == 0 else Label.ABNORMAL
        center = centers_hz[0] if label is Label.NORMAL else centers_hz[1]
        x = band_noise(rng, n, center, bandwidth_hz, sample_rate_hz) + noise_std * rng.standard_normal(n)
        x *= 0.5 / np.max(np.abs(x))
        records.append(AudioRecord(f"toy{i:03d}", x, sample_rate_hz, label, Quality.GOOD))
    return records


def write_toy_corpus(out_dir, **kwargs) -> LabelTable:
    """Write ``toyNNN.wav`` files and ``REFERENCE.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = toy_records(**kwargs)
    for rec in records:
        write_wav(out / f"{rec.record_id}.wav", rec.samples, rec.sample_rate_hz)
    table = LabelTable({r.record_id: (r.label, r.quality) for r in records})
    write_reference(table, out / "REFERENCE.csv")
    return table
