import json
import struct

import numpy as np
import pytest

from llama_affinity import checkpoint as C
from llama_affinity.model import ModelConfig, init_params
from llama_affinity.tensor import make_rng
from llama_affinity.training import TrainConfig

CFG = ModelConfig(num_layers=2, hidden_dim=16, num_query_heads=2, num_key_value_heads=2, intermediate_dim=8)


@pytest.fixture
def saved(tmp_path):
    params = {k: p.data for k, p in init_params(CFG, make_rng(0)).items()}
    cp = C.Checkpoint(CFG, params, TrainConfig(seed=5), {"fold": 2, "epoch": 10, "seed": 5})
    path = tmp_path / "m.ckpt"
    C.save_checkpoint(cp, path)
    return cp, path


def split(raw):
    magic, n = struct.unpack_from("<8sQ", raw)
    return magic, json.loads(raw[16:16 + n]), raw[16 + n:]


def join(magic, manifest, body):
    blob = json.dumps(manifest).encode()
    return struct.pack("<8sQ", magic, len(blob)) + blob + body


class TestRoundTrip:
    def test_bitwise(self, saved):
        cp, path = saved
        back = C.load_checkpoint(path)
        assert list(back.params) == list(cp.params)
        for k, v in cp.params.items():
            assert back.params[k].dtype == np.float32
            assert back.params[k].tobytes() == v.tobytes()
        assert back.model_config == CFG and back.train_config == cp.train_config
        assert back.metadata == cp.metadata

    def test_resave_identical_bytes(self, saved, tmp_path):
        _, path = saved
        C.save_checkpoint(C.load_checkpoint(path), tmp_path / "again.ckpt")
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()

    def test_layout(self, saved):
        _, path = saved
        magic, manifest, body = split(path.read_bytes())
        assert magic == b"LLAFFCKP" and manifest["format_version"] == 1
        first = manifest["tensors"][0]
        assert first["name"] == "embed" and first["offset"] == 0
        np.testing.assert_array_equal(np.frombuffer(body[:first["nbytes"]], "<f4").reshape(first["shape"]),
                                      saved[0].params["embed"])


class TestIntegrity:
    def test_truncated_by_one_byte(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(C.CheckpointTruncatedError):
            C.load_checkpoint(path)

    def test_truncated_header(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(C.CheckpointTruncatedError):
            C.load_checkpoint(path)

    def test_shape_edit(self, saved):
        _, path = saved
        magic, manifest, body = split(path.read_bytes())
        manifest["tensors"][0]["shape"] = [31, 16]
        path.write_bytes(join(magic, manifest, body))
        with pytest.raises(C.CheckpointManifestError) as info:
            C.load_checkpoint(path)
        assert not isinstance(info.value, C.CheckpointTruncatedError)

    def test_nbytes_edit(self, saved):
        _, path = saved
        magic, manifest, body = split(path.read_bytes())
        manifest["tensors"][1]["nbytes"] += 4
        path.write_bytes(join(magic, manifest, body))
        with pytest.raises(C.CheckpointManifestError):
            C.load_checkpoint(path)

    def test_trailing_bytes(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes() + b"\0\0\0\0")
        with pytest.raises(C.CheckpointManifestError):
            C.load_checkpoint(path)

    def test_version(self, saved):
        _, path = saved
        magic, manifest, body = split(path.read_bytes())
        manifest["format_version"] = 99
        path.write_bytes(join(magic, manifest, body))
        with pytest.raises(C.CheckpointVersionError):
            C.load_checkpoint(path)

    def test_bad_magic(self, saved):
        _, path = saved
        raw = path.read_bytes()
        path.write_bytes(b"XXXXXXXX" + raw[8:])
        with pytest.raises(C.CheckpointError):
            C.load_checkpoint(path)

    def test_errors_are_distinct(self):
        kinds = {C.CheckpointVersionError, C.CheckpointTruncatedError, C.CheckpointManifestError}
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)
