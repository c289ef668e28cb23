"""Self-describing binary container for trained models.

Layout (all integers little-endian)::

    8 bytes   magic  b"HVMODEL\\0"
    uint32    container format version
    uint32    header length H
    H bytes   UTF-8 JSON header: kind, kind version, integer/string metadata,
              and the ordered list of array names and shapes
    payload   every array as little-endian float64, concatenated in header order

Float parameters live only in the payload so round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IncompatibleModelError

MAGIC = b"HVMODEL\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")

_REGISTRY: dict[str, type] = {}


def register(kind: str, version: int = 1):
    """Class decorator: make a model type storable under ``kind``.

    The class must provide ``_to_payload() -> (meta, arrays)`` and a
    classmethod ``_from_payload(meta, arrays)``.
    """

    def deco(cls):
        if kind in _REGISTRY:
            raise ValueError(f"model kind {kind!r} registered twice")
        cls.KIND = kind
        cls.KIND_VERSION = version
        _REGISTRY[kind] = cls
        return cls

    return deco


def dumps(model) -> bytes:
    kind = getattr(type(model), "KIND", None)
    if kind not in _REGISTRY:
        raise TypeError(f"{type(model).__name__} is not a registered model type")
    meta, arrays = model._to_payload()
    specs, chunks = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        specs.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "kind_version": model.KIND_VERSION, "meta": meta, "arrays": specs},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes, expected=None):
    if len(blob) < _PREFIX.size:
        raise FormatError("model file shorter than its fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError("not a heartvec model file (bad magic)")
    if version != FORMAT_VERSION:
        raise IncompatibleModelError(f"container version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise FormatError("model header truncated")
    try:
        header = json.loads(blob[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"model header is not valid JSON: {exc}") from exc

    kind = header.get("kind")
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise IncompatibleModelError(f"unknown model kind {kind!r}")
    if expected is not None:
        want = expected if isinstance(expected, str) else expected.KIND
        if kind != want:
            raise IncompatibleModelError(f"file holds a {kind}, expected {want}")
    if header.get("kind_version") != cls.KIND_VERSION:
        raise IncompatibleModelError(
            f"{kind} version {header.get('kind_version')}, expected {cls.KIND_VERSION}"
        )

    offset = start + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(blob) < offset + nbytes:
            raise FormatError(f"payload truncated while reading array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after payload")
    return cls._from_payload(header["meta"], arrays)


def save_model(model, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path, expected=None):
    """Load a model; ``expected`` (class or kind string) guards against mix-ups."""
    return loads(Path(path).read_bytes(), expected)


def peek_kind(path) -> str:
    blob = Path(path).read_bytes()
    _, _, hlen = _PREFIX.unpack_from(blob)
    return json.loads(blob[_PREFIX.size : _PREFIX.size + hlen].decode())["kind"]
