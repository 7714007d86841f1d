import struct

import numpy as np
import pytest

from pfvae import checkpoint as ck
from pfvae.config import RunConfig
from pfvae.nets import VaeModel
from pfvae.optim import Adam
from pfvae.train import model_from_checkpoint


def sample(rng):
    return ck.Checkpoint(
        "seed = 3\n",
        {"a": rng.standard_normal((2, 3)), "s": np.array(1.5), "v": rng.standard_normal(4)},
        {"adam.t": np.array(7.0)},
        42,
        np.random.default_rng(5).bit_generator.state,
    )


def test_round_trip(rng):
    c = sample(rng)
    d = ck.decode(ck.encode(c))
    assert d.config_text == c.config_text and d.iteration == 42
    assert d.rng_state == c.rng_state
    for name, arr in c.params.items():
        assert d.params[name].shape == arr.shape
        assert np.array_equal(d.params[name], arr)
    assert d.params["s"].ndim == 0


def test_save_load_save_identical(tmp_path, rng):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    ck.save(a, sample(rng))
    ck.save(b, ck.load(a))
    assert a.read_bytes() == b.read_bytes()
    assert not (tmp_path / "a.bin.tmp").exists()


def test_restored_rng_continues_stream():
    g = np.random.default_rng(9)
    g.standard_normal(10)
    c = ck.decode(ck.encode(ck.Checkpoint("", {}, {}, 0, g.bit_generator.state)))
    h = np.random.default_rng()
    h.bit_generator.state = c.rng_state
    assert np.array_equal(g.standard_normal(5), h.standard_normal(5))


def test_header(rng):
    raw = ck.encode(sample(rng))
    assert raw[:8] == b"PFVAECKP"
    assert struct.unpack("<I", raw[8:12]) == (1,)


def test_bad_magic(rng):
    raw = bytearray(ck.encode(sample(rng)))
    raw[0:1] = b"X"
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.decode(bytes(raw))


def test_bad_version(rng):
    raw = bytearray(ck.encode(sample(rng)))
    raw[8:12] = struct.pack("<I", 2)
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.decode(bytes(raw))


@pytest.mark.parametrize("cut", [4, 10, 30, -1])
def test_truncated(rng, cut):
    raw = ck.encode(sample(rng))
    with pytest.raises(ck.CheckpointError):
        ck.decode(raw[:cut])


def test_model_round_trip():
    cfg = RunConfig(input_dim=16, hidden_dims=(8,), flow_length=2, seed=4)
    model = VaeModel(cfg.model, seed=99)
    opt = Adam()
    c = ck.Checkpoint(cfg.to_text(), {n: p.value for n, p in model.named_parameters().items()},
                      opt.state_tensors(), 0, {})
    saved, restored = model_from_checkpoint(ck.decode(ck.encode(c)))
    assert saved == cfg
    for name, p in restored.named_parameters().items():
        assert np.array_equal(p.value, model.named_parameters()[name].value)
        assert p.value.shape == model.named_parameters()[name].value.shape


def test_model_mismatch_rejected():
    cfg = RunConfig(input_dim=16, hidden_dims=(8,), flow_length=2)
    other = VaeModel(cfg.replace(flow_length=1).model)
    c = ck.Checkpoint(cfg.to_text(), {n: p.value for n, p in other.named_parameters().items()}, {}, 0, {})
    with pytest.raises(ck.CheckpointError):
        model_from_checkpoint(c)
