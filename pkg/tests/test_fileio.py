"""Serialization: bit-exact round trips, distinct failure codes, header
corruption fuzzing, and checkpoint identity."""

import os
import struct

import numpy as np
import pytest

from clam import (
    CodeSequence,
    DataError,
    FeatureSequence,
    load_checkpoint,
    read_codes,
    read_features,
    save_checkpoint,
    write_codes,
    write_features,
)
from clam.errors import (
    CodeRangeError,
    FileFormatError,
    MagicError,
    TruncatedFileError,
    VersionError,
)


@pytest.fixture
def feature_file(tmp_path):
    rng = np.random.default_rng(1)
    seq = FeatureSequence(frames=rng.normal(size=(13, 5)).astype(np.float32),
                          frame_rate=80.0)
    path = tmp_path / "sample.clmf"
    write_features(str(path), seq)
    return str(path), seq


@pytest.fixture
def code_file(tmp_path):
    rng = np.random.default_rng(2)
    seq = CodeSequence(codes=rng.integers(0, 1024, size=(9, 32)), vocab=1024)
    path = tmp_path / "sample.clmc"
    write_codes(str(path), seq)
    return str(path), seq


class TestFeatureRoundTrip:
    def test_bitwise_equal(self, feature_file):
        path, seq = feature_file
        back = read_features(path)
        assert back.frames.tobytes() == seq.frames.tobytes()
        assert back.frame_rate == seq.frame_rate

    def test_truncated_payload(self, feature_file, tmp_path):
        path, _ = feature_file
        raw = open(path, "rb").read()
        clipped = tmp_path / "clipped.clmf"
        clipped.write_bytes(raw[:-7])
        with pytest.raises(TruncatedFileError):
            read_features(str(clipped))

    def test_truncated_header(self, feature_file, tmp_path):
        path, _ = feature_file
        raw = open(path, "rb").read()
        clipped = tmp_path / "clipped.clmf"
        clipped.write_bytes(raw[:10])
        with pytest.raises(TruncatedFileError):
            read_features(str(clipped))

    def test_bad_magic(self, feature_file, tmp_path):
        path, _ = feature_file
        raw = bytearray(open(path, "rb").read())
        raw[:4] = b"NOPE"
        bad = tmp_path / "bad.clmf"
        bad.write_bytes(bytes(raw))
        with pytest.raises(MagicError):
            read_features(str(bad))

    def test_bad_version(self, feature_file, tmp_path):
        path, _ = feature_file
        raw = bytearray(open(path, "rb").read())
        raw[4:8] = struct.pack("<I", 9)
        bad = tmp_path / "bad.clmf"
        bad.write_bytes(bytes(raw))
        with pytest.raises(VersionError):
            read_features(str(bad))

    def test_trailing_bytes(self, feature_file, tmp_path):
        path, _ = feature_file
        raw = open(path, "rb").read()
        padded = tmp_path / "padded.clmf"
        padded.write_bytes(raw + b"\x00")
        with pytest.raises(FileFormatError):
            read_features(str(padded))


class TestCodeRoundTrip:
    def test_values_round_trip(self, code_file):
        path, seq = code_file
        back = read_codes(path)
        assert np.array_equal(back.codes, seq.codes)
        assert back.vocab == seq.vocab

    def test_file_size_is_header_plus_u16_payload(self, code_file):
        path, seq = code_file
        assert os.path.getsize(path) == 20 + 2 * seq.length * seq.depth

    def test_vocab_over_u16_rejected_on_write(self, tmp_path):
        seq = CodeSequence(codes=np.zeros((2, 2), dtype=int), vocab=65536)
        with pytest.raises(CodeRangeError):
            write_codes(str(tmp_path / "big.clmc"), seq)

    def test_entry_above_declared_vocab_rejected(self, code_file, tmp_path):
        path, _ = code_file
        raw = bytearray(open(path, "rb").read())
        raw[16:20] = struct.pack("<I", 3)   # shrink declared V below entries
        bad = tmp_path / "bad.clmc"
        bad.write_bytes(bytes(raw))
        with pytest.raises(CodeRangeError):
            read_codes(str(bad))


class TestHeaderFuzz:
    def _fuzz(self, path, reader, original_bytes, tmp_path, n=1000):
        rng = np.random.default_rng(99)
        silent = []
        for trial in range(n):
            raw = bytearray(original_bytes)
            pos = int(rng.integers(0, 20))
            new = int(rng.integers(0, 256))
            if raw[pos] == new:
                new = (new + 1) % 256
            raw[pos] = new
            target = tmp_path / "fuzz.bin"
            target.write_bytes(bytes(raw))
            try:
                result = reader(str(target))
            except FileFormatError:
                continue
            except DataError:
                continue
            # a successful read must be self-consistent and visibly different
            # from the original in the mutated metadata
            silent.append((trial, pos, result))
        for trial, pos, result in silent:
            assert 16 <= pos < 20, f"dimension byte {pos} mutated silently"
        return silent

    def test_feature_header_mutations_never_silent(self, feature_file, tmp_path):
        path, seq = feature_file
        raw = open(path, "rb").read()
        survivors = self._fuzz(path, read_features, raw, tmp_path)
        # only the frame-rate field (bytes 16..19) can survive, and it must
        # carry a detectably different value with identical payload
        for _, _, result in survivors:
            assert result.frames.tobytes() == seq.frames.tobytes()
            assert struct.pack("<f", result.frame_rate) != struct.pack(
                "<f", seq.frame_rate)

    def test_code_header_mutations_never_silent(self, code_file, tmp_path):
        path, seq = code_file
        raw = open(path, "rb").read()
        rng = np.random.default_rng(5)
        silent = []
        for trial in range(1000):
            buf = bytearray(raw)
            pos = int(rng.integers(0, 20))
            new = int(rng.integers(0, 256))
            if buf[pos] == new:
                new = (new + 1) % 256
            buf[pos] = new
            target = tmp_path / "fuzz.clmc"
            target.write_bytes(bytes(buf))
            try:
                result = read_codes(str(target))
            except FileFormatError:
                continue
            except DataError:
                continue
            silent.append((pos, result))
        for pos, result in silent:
            # only a vocab enlargement can read back; dims must be unchanged
            assert 16 <= pos < 20
            assert np.array_equal(result.codes, seq.codes)
            assert result.vocab != seq.vocab


class TestCheckpoint:
    def _sample(self, tmp_path):
        rng = np.random.default_rng(7)
        tensors = {
            "b.matrix": rng.normal(size=(3, 4)),
            "a.vector": rng.normal(size=5),
            "c.scalar": np.float64(0.25),
        }
        config = {"seed": 3, "steps": 10, "preset": "desk"}
        metrics = {"final": {"loss": 0.125}}
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, config, tensors, metrics)
        return path, config, tensors, metrics

    def test_round_trip_values(self, tmp_path):
        path, config, tensors, metrics = self._sample(tmp_path)
        cfg, loaded, met = load_checkpoint(path)
        assert cfg == config
        assert met == metrics
        for name, arr in tensors.items():
            np.testing.assert_allclose(loaded[name],
                                       np.asarray(arr, dtype=np.float32), atol=0)

    def test_save_load_save_byte_identical(self, tmp_path):
        path, config, _, metrics = self._sample(tmp_path)
        first = open(path, "rb").read()
        cfg, tensors, met = load_checkpoint(path)
        path2 = str(tmp_path / "again.ckpt")
        save_checkpoint(path2, cfg, tensors, met)
        assert open(path2, "rb").read() == first

    def test_manifest_is_lexicographic(self, tmp_path):
        from clam.fileio import checkpoint_manifest

        path, _, _, _ = self._sample(tmp_path)
        names = [e["name"] for e in checkpoint_manifest(path)["tensors"]]
        assert names == sorted(names)

    def test_blob_truncation_detected(self, tmp_path):
        path, _, _, _ = self._sample(tmp_path)
        raw = open(path, "rb").read()
        bad = tmp_path / "short.ckpt"
        bad.write_bytes(raw[:-3])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(str(bad))

    def test_shape_span_mismatch_detected(self, tmp_path):
        import json

        path, _, _, _ = self._sample(tmp_path)
        raw = open(path, "rb").read()
        (mlen,) = struct.unpack("<I", raw[:4])
        manifest = json.loads(raw[4:4 + mlen])
        manifest["tensors"][0]["shape"] = [99]
        encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(struct.pack("<I", len(encoded)) + encoded + raw[4 + mlen:])
        with pytest.raises(DataError):
            load_checkpoint(str(bad))
