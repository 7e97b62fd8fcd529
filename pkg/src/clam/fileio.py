"""Bit-exact file formats.

Feature files ("CLMF") and code files ("CLMC") carry a fixed little-endian
header followed by a raw payload; readers validate magic, version, dims,
entry ranges, and exact payload length, so corrupt headers fail loudly.
Checkpoints are a length-prefixed JSON manifest followed by one float32 blob
with tensors in lexicographic name order. All writes are atomic
(temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    CodeRangeError,
    DataError,
    MagicError,
    TrailingDataError,
    TruncatedFileError,
    UsageError,
    VersionError,
)
from .synth import FeatureSequence

FEATURE_MAGIC = b"CLMF"
CODE_MAGIC = b"CLMC"
FORMAT_VERSION = 1
MAX_FILE_VOCAB = 65535


@dataclass
class CodeSequence:
    """A length-T sequence of depth-D code stacks with vocabulary size V."""

    codes: np.ndarray   # (T, D) integers in [0, V)
    vocab: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.codes.ndim != 2 or self.codes.shape[0] < 1:
            raise DataError(f"codes must be (T >= 1, D), got {self.codes.shape}")
        if np.any(self.codes < 0) or np.any(self.codes >= self.vocab):
            raise DataError("code entries out of range [0, vocab)")

    @property
    def length(self) -> int:
        return self.codes.shape[0]

    @property
    def depth(self) -> int:
        return self.codes.shape[1]


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def _check_no_trailing(fh) -> None:
    if fh.read(1) != b"":
        raise TrailingDataError("file has trailing bytes beyond the payload")


def write_features(path: str, seq: FeatureSequence) -> None:
    header = FEATURE_MAGIC + struct.pack(
        "<IIIf", FORMAT_VERSION, seq.num_frames, seq.num_bins, float(seq.frame_rate)
    )
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def read_features(path: str) -> FeatureSequence:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != FEATURE_MAGIC:
            raise MagicError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        version, T, B, frame_rate = struct.unpack("<IIIf", _read_exact(fh, 16, "header"))
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported version {version}")
        if T < 1 or B < 1:
            raise DataError(f"invalid dims T={T}, bins={B}")
        raw = _read_exact(fh, 4 * T * B, "frame payload")
        _check_no_trailing(fh)
    frames = np.frombuffer(raw, dtype="<f4").reshape(T, B)
    return FeatureSequence(frames=frames.copy(), frame_rate=frame_rate)


def write_codes(path: str, seq: CodeSequence) -> None:
    if seq.vocab > MAX_FILE_VOCAB:
        raise CodeRangeError(f"vocab {seq.vocab} exceeds u16 limit {MAX_FILE_VOCAB}")
    header = CODE_MAGIC + struct.pack(
        "<IIII", FORMAT_VERSION, seq.length, seq.depth, seq.vocab
    )
    payload = np.ascontiguousarray(seq.codes, dtype="<u2").tobytes()
    _atomic_write(path, header + payload)


def read_codes(path: str) -> CodeSequence:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CODE_MAGIC:
            raise MagicError(f"bad magic {magic!r}, expected {CODE_MAGIC!r}")
        version, T, D, V = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported version {version}")
        if T < 1 or D < 1:
            raise DataError(f"invalid dims T={T}, D={D}")
        if V < 1 or V > MAX_FILE_VOCAB:
            raise CodeRangeError(f"vocab {V} outside [1, {MAX_FILE_VOCAB}]")
        raw = _read_exact(fh, 2 * T * D, "code payload")
        _check_no_trailing(fh)
    codes = np.frombuffer(raw, dtype="<u2").reshape(T, D).astype(np.int64)
    if np.any(codes >= V):
        raise CodeRangeError("code entry >= declared vocab")
    return CodeSequence(codes=codes, vocab=V)


CHECKPOINT_SCHEMA_VERSION = 1


def save_checkpoint(path: str, config: dict, tensors: dict[str, np.ndarray],
                    metrics: dict | None = None) -> None:
    """Manifest + blob checkpoint; tensors are stored float32 little-endian in
    lexicographic name order so identical state always yields identical bytes."""
    names = sorted(tensors)
    entries = []
    blob = bytearray()
    for name in names:
        arr = np.asarray(tensors[name], dtype="<f4")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": len(blob),
            "size": arr.size * 4,
        })
        blob.extend(np.ascontiguousarray(arr).tobytes())
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": config,
        "tensors": entries,
        "metrics": metrics or {},
    }
    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    _atomic_write(path, struct.pack("<I", len(encoded)) + encoded + bytes(blob))


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Returns (config, tensors as float64 arrays, metrics)."""
    with open(path, "rb") as fh:
        (manifest_len,) = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
        try:
            manifest = json.loads(_read_exact(fh, manifest_len, "manifest"))
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt checkpoint manifest: {exc}") from exc
        if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise VersionError(
                f"unsupported checkpoint schema {manifest.get('schema_version')}")
        blob = fh.read()
    tensors: dict[str, np.ndarray] = {}
    expected = [e["name"] for e in manifest["tensors"]]
    if expected != sorted(expected):
        raise DataError("checkpoint manifest order is not lexicographic")
    end = 0
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64)) * 4
        if size != entry["size"]:
            raise DataError(f"tensor {entry['name']} shape/span mismatch")
        start, stop = entry["offset"], entry["offset"] + entry["size"]
        if stop > len(blob):
            raise TruncatedFileError(f"blob too short for tensor {entry['name']}")
        end = max(end, stop)
        arr = np.frombuffer(blob[start:stop], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float64)
    if len(blob) != end:
        raise TrailingDataError("checkpoint blob has bytes beyond the last tensor")
    return manifest["config"], tensors, manifest["metrics"]


def checkpoint_manifest(path: str) -> dict:
    """Manifest JSON of a checkpoint without loading tensor data."""
    with open(path, "rb") as fh:
        (manifest_len,) = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
        return json.loads(_read_exact(fh, manifest_len, "manifest"))
