"""Container round-trips, corruption handling, and the exact byte layout."""

import json
import os
import struct

import numpy as np
import pytest

from vitforge import (
    ContractError,
    CorruptionError,
    FormatError,
    ManifestError,
    VersionError,
    ViTConfig,
    manifest_shapes,
)
from vitforge import checkpoint


def random_tensor_set(rng):
    out = {}
    for i in range(int(rng.integers(1, 6))):
        rank = int(rng.integers(0, 4))
        shape = tuple(int(s) for s in rng.integers(1, 5, size=rank))
        dtype = rng.choice([np.float32, np.float64, np.int64])
        if dtype == np.int64:
            arr = rng.integers(-1000, 1000, size=shape).astype(np.int64)
        else:
            arr = rng.normal(size=shape).astype(dtype)
        out[f"tensor_{i}"] = arr
    return out


class TestRoundTrip:
    def test_bits_and_names_survive(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "t.ckpt"
        for _ in range(20):
            tensors = random_tensor_set(rng)
            meta = {"epoch": int(rng.integers(0, 100)), "note": "fixture"}
            checkpoint.save(path, tensors, meta)
            loaded, loaded_meta = checkpoint.load(path)
            assert list(loaded) == list(tensors)
            assert loaded_meta == meta
            for name, arr in tensors.items():
                assert loaded[name].dtype == arr.dtype
                assert loaded[name].tobytes() == arr.tobytes()

    def test_empty_tensor_set(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        checkpoint.save(path, {}, {"kind": "empty"})
        tensors, meta = checkpoint.load(path)
        assert tensors == {} and meta == {"kind": "empty"}

    def test_duplicate_name_rejected_before_write(self, tmp_path):
        path = tmp_path / "dup.ckpt"
        pairs = [("a", np.zeros(2, dtype=np.float32)),
                 ("a", np.ones(2, dtype=np.float32))]
        with pytest.raises(ContractError):
            checkpoint.save(path, pairs)
        assert not path.exists()

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            checkpoint.save(tmp_path / "x.ckpt", {"a": np.zeros(2, dtype=np.int32)})

    def test_no_temp_file_left_behind(self, tmp_path):
        checkpoint.save(tmp_path / "ok.ckpt", {"a": np.zeros(3, dtype=np.float32)})
        assert os.listdir(tmp_path) == ["ok.ckpt"]


class TestCorruption:
    def make_file(self, tmp_path):
        path = tmp_path / "c.ckpt"
        checkpoint.save(path, {"weights": np.arange(6, dtype=np.float32).reshape(2, 3)},
                        {"v": 1})
        return path

    def test_wrong_magic(self, tmp_path):
        path = self.make_file(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            checkpoint.load(path)

    def test_unsupported_version(self, tmp_path):
        path = self.make_file(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionError):
            checkpoint.load(path)

    def test_truncation_names_the_entry(self, tmp_path):
        path = self.make_file(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(CorruptionError, match="weights"):
            checkpoint.load(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = self.make_file(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(CorruptionError, match="trailing"):
            checkpoint.load(path)


class TestByteLayout:
    """The format contract, pinned by building files by hand with struct."""

    def hand_built_file(self):
        meta = json.dumps({"k": "v"}, sort_keys=True).encode()
        name = b"m"
        data = np.array([[1.5, -2.0]], dtype="<f4")
        blob = b"VITF"
        blob += struct.pack("<I", 1)
        blob += struct.pack("<Q", len(meta)) + meta
        blob += struct.pack("<I", 1)
        blob += struct.pack("<I", len(name)) + name
        blob += struct.pack("<BB", 0, 2)            # dtype float32, rank 2
        blob += struct.pack("<QQ", 1, 2)
        blob += data.tobytes()
        return blob

    def test_reader_accepts_hand_built_bytes(self, tmp_path):
        path = tmp_path / "hand.ckpt"
        path.write_bytes(self.hand_built_file())
        tensors, meta = checkpoint.load(path)
        assert meta == {"k": "v"}
        np.testing.assert_array_equal(tensors["m"], [[1.5, -2.0]])

    def test_writer_emits_exactly_the_layout(self, tmp_path):
        path = tmp_path / "emit.ckpt"
        checkpoint.save(path, {"m": np.array([[1.5, -2.0]], dtype=np.float32)},
                        {"k": "v"})
        assert path.read_bytes() == self.hand_built_file()

    def test_int64_and_float64_codes(self, tmp_path):
        path = tmp_path / "codes.ckpt"
        checkpoint.save(path, {"i": np.array([7], dtype=np.int64),
                               "f": np.array([0.5], dtype=np.float64)})
        raw = path.read_bytes()
        # dtype codes appear right after each name
        assert raw[raw.index(b"i") + 1] == 2
        assert raw[raw.index(b"f") + 1] == 1


class TestManifestValidation:
    def tiny(self):
        return ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                         mlp_dim=32, num_classes=3)

    def arrays_for(self, cfg):
        return {name: np.zeros(shape, dtype=np.float32)
                for name, shape in manifest_shapes(cfg).items()}

    def test_complete_checkpoint_passes(self):
        cfg = self.tiny()
        checkpoint.validate_against_config(self.arrays_for(cfg), cfg)

    def test_wrong_head_named(self):
        cfg = self.tiny()
        arrays = self.arrays_for(cfg)
        arrays["head.weight"] = np.zeros((16, 1000), dtype=np.float32)
        with pytest.raises(ManifestError, match="head.weight"):
            checkpoint.validate_against_config(arrays, cfg)

    def test_missing_pos_embed_listed(self):
        cfg = self.tiny()
        arrays = self.arrays_for(cfg)
        del arrays["pos_embed"]
        with pytest.raises(ManifestError, match="pos_embed"):
            checkpoint.validate_against_config(arrays, cfg)

    def test_all_offenders_reported_at_once(self):
        cfg = self.tiny()
        arrays = self.arrays_for(cfg)
        del arrays["cls_token"]
        arrays["stray"] = np.zeros(1, dtype=np.float32)
        arrays["head.bias"] = np.zeros(9, dtype=np.float32)
        with pytest.raises(ManifestError) as exc:
            checkpoint.validate_against_config(arrays, cfg)
        msg = str(exc.value)
        assert "cls_token" in msg and "stray" in msg and "head.bias" in msg

    def test_head_exempt_mode(self):
        cfg = self.tiny()
        arrays = self.arrays_for(cfg)
        arrays["head.weight"] = np.zeros((16, 1000), dtype=np.float32)
        del arrays["head.bias"]
        checkpoint.validate_against_config(arrays, cfg, allow_head_mismatch=True)

    def test_manifest_name_count(self):
        cfg = ViTConfig(num_classes=5)  # base preset geometry
        names = list(manifest_shapes(cfg))
        per_layer = [n for n in names if n.startswith("layers.0.")]
        assert len(per_layer) == 12
        assert len(names) == 4 + 12 * cfg.depth + 2 + 2
        assert names[0] == "cls_token" and names[-1] == "head.bias"
