"""检查点：逐位往返、平均、参数不一致的报错"""

import json

import numpy as np
import pytest

from src.nn.params import ModelParams
from src.training.checkpoint import (
    average_checkpoint_files,
    average_checkpoints,
    load_checkpoint,
    make_checkpoint,
    rng_snapshot,
    save_checkpoint,
)
from src.utils.error_handler import CheckpointError


def _params(rng, scale=1.0) -> ModelParams:
    return ModelParams({
        "encoder.w": rng.normal(size=(3, 4)) * scale,
        "decoder.b": rng.normal(size=(5,)) * scale,
        "scalar": np.asarray(rng.normal()) * scale,
    })


class TestRoundTrip:
    def test_save_and_load_are_bitwise(self, tmp_path, rng):
        params = _params(rng)
        params.add("special", np.array([np.inf, -0.0, 1e-310]))
        gen = np.random.default_rng(42)
        gen.normal(size=3)
        ckpt = make_checkpoint(
            params,
            step=17,
            config={"train": {"seed": 3}},
            vocab=["<pad>", "a"],
            rng_state=rng_snapshot(shuffle=gen),
            dev_bleu=12.5,
        )
        loaded = load_checkpoint(save_checkpoint(tmp_path / "a.ckpt", ckpt))
        assert loaded.same_as(ckpt)
        assert loaded.params["special"].tobytes() == params["special"].tobytes()

    def test_rng_snapshot_restores_stream(self, tmp_path):
        gen = np.random.default_rng(7)
        gen.integers(0, 10, size=5)
        ckpt = make_checkpoint(ModelParams({"w": np.zeros(1)}), rng_state=rng_snapshot(shuffle=gen))
        loaded = load_checkpoint(save_checkpoint(tmp_path / "r.ckpt", ckpt))
        state = loaded.manifest.rng_state["shuffle"]
        restored = np.random.default_rng()
        restored.bit_generator.state = {
            "bit_generator": state["bit_generator"],
            "state": {k: int(v) for k, v in state["state"].items()},
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }
        assert restored.integers(0, 1000, size=4).tolist() == gen.integers(0, 1000, size=4).tolist()

    def test_manifest_is_first_json_line(self, tmp_path, rng):
        path = save_checkpoint(tmp_path / "m.ckpt", make_checkpoint(_params(rng), step=3))
        header = json.loads(path.read_bytes().split(b"\n", 1)[0])
        assert header["step"] == 3
        assert [e["name"] for e in header["entries"]] == ["encoder.w", "decoder.b", "scalar"]
        assert header["entries"][1]["offset"] == 12 * 8

    def test_truncated_payload(self, tmp_path, rng):
        path = save_checkpoint(tmp_path / "t.ckpt", make_checkpoint(_params(rng)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")


class TestAveraging:
    def test_identical_checkpoints_average_to_themselves(self, rng):
        ckpt = make_checkpoint(_params(rng))
        averaged = average_checkpoints([ckpt] * 5)
        assert averaged.params.equal(ckpt.params)

    def test_single_checkpoint(self, rng):
        ckpt = make_checkpoint(_params(rng))
        assert average_checkpoints([ckpt]).params.equal(ckpt.params)

    def test_opposites_average_to_zero(self, rng):
        params = _params(rng)
        negated = ModelParams({name: -arr for name, arr in params.items()})
        averaged = average_checkpoints([make_checkpoint(params), make_checkpoint(negated)])
        for _, arr in averaged.params.items():
            np.testing.assert_array_equal(arr, 0.0)

    def test_elementwise_mean(self, rng):
        ckpts = [make_checkpoint(_params(rng), step=s) for s in (10, 30, 20)]
        averaged = average_checkpoints(ckpts)
        expected = np.mean([c.params["encoder.w"] for c in ckpts], axis=0)
        np.testing.assert_allclose(averaged.params["encoder.w"], expected, rtol=1e-12)
        assert averaged.manifest.step == 30

    def test_name_mismatch_names_first_difference(self, rng):
        a = make_checkpoint(_params(rng))
        renamed = ModelParams({("decoder.x" if n == "decoder.b" else n): arr for n, arr in _params(rng).items()})
        with pytest.raises(CheckpointError, match="decoder.b"):
            average_checkpoints([a, make_checkpoint(renamed)])

    def test_shape_mismatch(self, rng):
        a = make_checkpoint(_params(rng))
        other = _params(rng)
        reshaped = ModelParams({n: (arr.reshape(4, 3) if n == "encoder.w" else arr) for n, arr in other.items()})
        with pytest.raises(CheckpointError, match="encoder.w"):
            average_checkpoints([a, make_checkpoint(reshaped)])

    def test_missing_parameter(self, rng):
        a = make_checkpoint(_params(rng))
        fewer = _params(rng).filter(lambda n: n != "scalar")
        with pytest.raises(CheckpointError, match="scalar"):
            average_checkpoints([a, make_checkpoint(fewer)])

    def test_empty_list(self):
        with pytest.raises(CheckpointError):
            average_checkpoints([])

    def test_average_files_records_sources(self, tmp_path, rng):
        paths = [save_checkpoint(tmp_path / f"{i}.ckpt", make_checkpoint(_params(rng))) for i in range(2)]
        averaged = average_checkpoint_files(paths)
        assert averaged.manifest.averaged_from == [str(p) for p in paths]
