"""WAV ingestion, reference-label tables and reproducible train/eval splits."""

from __future__ import annotations

import csv
import math
import struct
import wave
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateRecordError,
    FormatError,
    InvalidInputError,
    InvalidSpecError,
    ParseError,
    UnsupportedFormatError,
)

PCM16_SCALE = 32768.0


class Label(str, Enum):
    NORMAL = "Normal"
    ABNORMAL = "Abnormal"


class Quality(str, Enum):
    GOOD = "Good"
    POOR = "Poor"


@dataclass(frozen=True)
class AudioRecord:
    record_id: str
    samples: np.ndarray
    sample_rate_hz: int
    label: Label | None = None
    quality: Quality = Quality.GOOD

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError(f"{self.record_id}: samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)) or np.max(np.abs(samples)) > 1.0:
            raise InvalidInputError(f"{self.record_id}: samples must be finite and within [-1, 1]")
        if int(self.sample_rate_hz) <= 0:
            raise InvalidInputError(f"{self.record_id}: sample rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class LabelTable:
    """Mapping ``record_id -> (label, quality)``."""

    entries: dict[str, tuple[Label, Quality]] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, record_id):
        return record_id in self.entries

    def __getitem__(self, record_id):
        return self.entries[record_id]

    def ids(self) -> list[str]:
        return sorted(self.entries)

    def subset(self, ids) -> LabelTable:
        return LabelTable({i: self.entries[i] for i in sorted(ids)})

    def label(self, record_id) -> Label:
        return self.entries[record_id][0]

    def quality(self, record_id) -> Quality:
        return self.entries[record_id][1]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    fold_count: int = 5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidSpecError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.fold_count < 1:
            raise InvalidSpecError("fold_count must be positive")


def load_wav(path) -> AudioRecord:
    """Read a mono 16-bit PCM WAV file.

    Samples are scaled by 1/32768 so that the int16 range maps onto
    [-1, 1). The record id is the file stem; label and quality are left
    for the caller to attach.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sample_width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise FormatError(f"{path}: truncated or malformed WAV header") from exc

    if n_channels != 1:
        raise UnsupportedFormatError(f"{path}: expected mono, got {n_channels} channels")
    if sample_width != 2:
        raise UnsupportedFormatError(f"{path}: expected 16-bit PCM, got {8 * sample_width}-bit")
    if len(raw) != 2 * n_frames or n_frames == 0:
        raise FormatError(f"{path}: data chunk holds {len(raw)} bytes, header promises {2 * n_frames}")

    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioRecord(path.stem, pcm / PCM16_SCALE, rate)


def write_wav(path, samples, sample_rate_hz: int) -> None:
    """Write samples in [-1, 1] as mono 16-bit PCM (round to nearest, clipped)."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate_hz))
        wf.writeframes(pcm.astype("<i2").tobytes())


_CODES = {"-1": Label.NORMAL, "1": Label.ABNORMAL}
_QUALITIES = {"g": Quality.GOOD, "p": Quality.POOR, "1": Quality.GOOD, "0": Quality.POOR}


def load_reference(path) -> LabelTable:
    """Parse a PhysioNet-style ``REFERENCE.csv``.

    Each line is ``record_id,code[,quality]`` where code -1 is normal and 1
    is abnormal. The optional quality column takes ``g``/``p`` and defaults
    to good.
    """
    entries: dict[str, tuple[Label, Quality]] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [cell.strip() for cell in row]
            if not row or not row[0] or row[0].startswith("#"):
                continue
            if len(row) not in (2, 3):
                raise ParseError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(row)}")
            record_id, code = row[0], row[1]
            if code not in _CODES:
                raise ParseError(f"{path}:{lineno}: unknown label code {code!r}")
            quality = Quality.GOOD
            if len(row) == 3 and row[2]:
                q = row[2].lower()
                if q not in _QUALITIES:
                    raise ParseError(f"{path}:{lineno}: unknown quality flag {row[2]!r}")
                quality = _QUALITIES[q]
            if record_id in entries:
                raise DuplicateRecordError(f"{path}:{lineno}: duplicate record id {record_id!r}")
            entries[record_id] = (_CODES[code], quality)
    return LabelTable(entries)


def write_reference(table: LabelTable, path) -> None:
    codes = {Label.NORMAL: "-1", Label.ABNORMAL: "1"}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rid in table.ids():
            label, quality = table[rid]
            writer.writerow([rid, codes[label], "g" if quality is Quality.GOOD else "p"])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _shuffled_ids(table: LabelTable, seed: int) -> list[str]:
    # sort first so the permutation does not depend on insertion order
    ids = table.ids()
    order = np.random.default_rng(seed).permutation(len(ids))
    return [ids[i] for i in order]


def split_train_eval(table: LabelTable, spec: SplitSpec) -> tuple[LabelTable, LabelTable]:
    if len(table) == 0:
        raise InvalidSpecError("cannot split an empty label table")
    n_train = _round_half_up(spec.train_fraction * len(table))
    if n_train == 0 or n_train == len(table):
        raise InvalidSpecError(
            f"train_fraction={spec.train_fraction} on {len(table)} records leaves an empty partition"
        )
    ids = _shuffled_ids(table, spec.seed)
    return table.subset(ids[:n_train]), table.subset(ids[n_train:])


def fold_partition(table: LabelTable, spec: SplitSpec) -> list[LabelTable]:
    """Split ``table`` into ``spec.fold_count`` disjoint folds of near-equal size."""
    if len(table) < spec.fold_count:
        raise InvalidSpecError(f"{len(table)} records cannot fill {spec.fold_count} folds")
    ids = _shuffled_ids(table, spec.seed)
    return [table.subset(chunk) for chunk in np.array_split(np.array(ids, dtype=object), spec.fold_count)]


def cumulative_folds(table: LabelTable, spec: SplitSpec) -> list[LabelTable]:
    """Training tables built from folds 1..k for k = 1..fold_count."""
    folds = fold_partition(table, spec)
    out, acc = [], []
    for fold in folds:
        acc.extend(fold.ids())
        out.append(table.subset(acc))
    return out


def attach_labels(record: AudioRecord, table: LabelTable) -> AudioRecord:
    label, quality = table[record.record_id]
    return AudioRecord(record.record_id, record.samples, record.sample_rate_hz, label, quality)


def list_wavs(data_dir) -> list[Path]:
    return sorted(Path(data_dir).glob("*.wav"), key=lambda p: p.stem)
