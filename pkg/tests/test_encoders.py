import numpy as np
import pytest

from oracles import mlp_loop
from tokenalign import autodiff as ad
from tokenalign.attentive import CrossAttentionParams
from tokenalign.encoders import Adam, EncoderParams, encode, encode_node, load_checkpoint, save_checkpoint
from tokenalign.errors import DimensionError, FormatError
from tokenalign.serialization import MAGIC, decode_tensors, encode_tensors, load_tensors, save_tensors


def test_zero_weights_give_bias():
    p = EncoderParams(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), [1.5, -2.0])
    np.testing.assert_array_equal(encode(p, np.ones((5, 3))), np.tile([1.5, -2.0], (5, 1)))


def test_identity_weights_give_relu():
    x = np.random.default_rng(0).normal(size=(6, 3))
    p = EncoderParams(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(encode(p, x), np.maximum(x, 0))


def test_matches_loop_oracle():
    rng = np.random.default_rng(1)
    p = EncoderParams.init(4, 6, 3, rng)
    x = rng.normal(size=(5, 4))
    expect = mlp_loop(x.tolist(), p.w1.tolist(), p.b1.tolist(), p.w2.tolist(), p.b2.tolist())
    np.testing.assert_allclose(encode(p, x), expect, atol=1e-12)
    nodes = {k: ad.Node(v) for k, v in p.arrays().items()}
    np.testing.assert_array_equal(encode_node(nodes, x).value, encode(p, x))


def test_shape_errors():
    p = EncoderParams.init(4, 6, 3, np.random.default_rng(2))
    with pytest.raises(DimensionError):
        encode(p, np.ones((2, 5)))
    with pytest.raises(DimensionError):
        EncoderParams(np.ones((4, 3)), np.ones(5), np.ones((2, 4)), np.ones(2))


def test_encoder_gradient():
    rng = np.random.default_rng(3)
    p = EncoderParams.init(3, 5, 2, rng)
    x = rng.normal(size=(4, 3))
    for name in ("w1", "b1", "w2", "b2"):
        def f(w, name=name):
            nodes = {k: ad.Node(v) for k, v in p.arrays().items()}
            nodes[name] = w
            out = encode_node(nodes, x)
            return ad.reduce_sum(ad.mul(out, out))
        assert ad.grad_check(f, getattr(p, name)) < 1e-5


def test_adam_first_step_is_lr_sized():
    params = {"w": np.array([[1.0, -2.0]])}
    opt = Adam(params)
    opt.step(params, {"w": np.array([[0.3, -5.0]])}, lr=0.1)
    np.testing.assert_allclose(params["w"], [[0.9, -1.9]], atol=1e-6)


def test_adam_lr_scale_and_missing_grads():
    params = {"a": np.zeros((1, 1)), "b": np.zeros((1, 1))}
    opt = Adam(params)
    opt.step(params, {"a": np.ones((1, 1))}, lr=0.1, lr_scale={"a": 2.0})
    assert abs(params["a"][0, 0] + 0.2) < 1e-6
    assert params["b"][0, 0] == 0.0


def test_adam_minimises_quadratic():
    params = {"x": np.array([[3.0, -4.0]])}
    opt = Adam(params)
    for _ in range(2000):
        opt.step(params, {"x": 2 * params["x"]}, lr=0.05)
    assert np.abs(params["x"]).max() < 1e-2


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    p = EncoderParams.init(4, 6, 3, rng)
    p.attention = CrossAttentionParams.init(3, rng)
    save_checkpoint(tmp_path / "c.bin", p)
    q = load_checkpoint(tmp_path / "c.bin")
    assert q.attention is None
    for k in ("w1", "b1", "w2", "b2"):
        assert getattr(q, k).tobytes() == getattr(p, k).tobytes()
    save_checkpoint(tmp_path / "d.bin", p, include_attention=True)
    r = load_checkpoint(tmp_path / "d.bin")
    assert r.attention is not None
    assert r.attention.wi_v.tobytes() == p.attention.wi_v.tobytes()
    assert r.attention.tau == p.attention.tau


def test_checkpoint_missing_tensors(tmp_path):
    save_tensors(tmp_path / "x.bin", {"w1": np.ones((2, 2))})
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.bin")


def test_tensor_table_layout():
    blob = encode_tensors({"ab": np.array([[1.0, 2.0]])})
    assert blob[:4] == MAGIC
    assert blob[4:8] == (1).to_bytes(4, "little")
    assert blob[8:12] == (2).to_bytes(4, "little")
    assert blob[12:14] == b"ab"
    assert blob[14:22] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(blob[22:], "<f8").tolist() == [1.0, 2.0]


def test_tensor_table_roundtrip_keeps_order(tmp_path):
    t = {"z": np.arange(6.0).reshape(2, 3), "a": np.array([[np.pi]]), "é": np.zeros((0, 4))}
    save_tensors(tmp_path / "t.bin", t)
    back = load_tensors(tmp_path / "t.bin")
    assert list(back) == list(t)
    for k in t:
        assert back[k].shape == t[k].shape and back[k].tobytes() == t[k].tobytes()


@pytest.mark.parametrize("blob", [b"NOPE\x01\x00\x00\x00", b"DALI", b"DALI\x01\x00\x00\x00\x05\x00\x00\x00ab"])
def test_corrupt_tables(blob):
    with pytest.raises(FormatError):
        decode_tensors(blob)


def test_unsupported_version(tmp_path):
    (tmp_path / "v.bin").write_bytes(encode_tensors({"a": np.ones((1, 1))}, version=2))
    with pytest.raises(FormatError):
        load_tensors(tmp_path / "v.bin")
