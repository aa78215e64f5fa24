import math

import numpy as np
import pytest

from oracles import mean_cosine_distance
from tokenalign.data import (EmbeddingTable, PairedDataset, SynthConfig, decode_table, encode_table,
                             filter_pairs, rank_pairs, read_table_csv, synth_generate)
from tokenalign.errors import DimensionError, FormatError, ParameterError
from tokenalign.training import desk_config, train_alignment

SMALL = SynthConfig(n_samples=12)

# hand-computed mean cosine distances
HAND = {
    "a": ([[1.0, 1.0]], [1.0, 0.0], 1.0 - 1.0 / math.sqrt(2.0)),
    "b": ([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0], 0.5),
    "c": ([[-1.0, 0.0], [1.0, 0.0]], [2.0, 0.0], 1.0),
}


def _hand_table():
    return EmbeddingTable.from_dict({k: (f, c) for k, (f, c, _) in HAND.items()})


def test_shapes_and_rho_zero():
    ds = synth_generate(SynthConfig(n_samples=5, n_a=3, n_i=4, d_in=6, d=2, mismatch_rho=0.0), 0)
    assert ds.raw_a.shape == (5, 3, 6) and ds.tokens_b.shape == (5, 4, 2)
    assert ds.mismatch.shape == (5, 4) and not ds.mismatch.any()
    assert len(ds) == 5


def test_rho_one_all_mismatched():
    assert synth_generate(SynthConfig(n_samples=4, mismatch_rho=1.0), 0).mismatch.all()


def test_deterministic_bytes(tmp_path):
    synth_generate(SMALL, 42).save(tmp_path / "a.bin")
    synth_generate(SMALL, 42).save(tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    synth_generate(SMALL, 43).save(tmp_path / "c.bin")
    assert (tmp_path / "a.bin").read_bytes() != (tmp_path / "c.bin").read_bytes()


def test_roundtrip(tmp_path):
    ds = synth_generate(SMALL, 2 ** 64 - 1)
    ds.save(tmp_path / "d.bin")
    back = PairedDataset.load(tmp_path / "d.bin")
    assert back.seed == 2 ** 64 - 1 and back.config == ds.config
    for name in ("raw_a", "raw_b", "tokens_b", "mismatch", "latent_id"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.frozen.w2.tobytes() == ds.frozen.w2.tobytes()


def test_not_a_dataset(tmp_path):
    from tokenalign.serialization import save_tensors
    save_tensors(tmp_path / "x.bin", {"w1": np.ones((1, 1))})
    with pytest.raises(FormatError):
        PairedDataset.load(tmp_path / "x.bin")


@pytest.mark.parametrize("bad", [{"mismatch_rho": 1.5}, {"n_a": 0}, {"noise_sigma": -1.0}, {"token_scale": 0.0}])
def test_invalid_config(bad):
    with pytest.raises(ParameterError):
        SynthConfig(**bad)


@pytest.mark.parametrize("seed", range(5))
def test_mask_fraction_within_three_sigma(seed):
    cfg = SynthConfig(n_samples=200, mismatch_rho=0.3)
    ds = synth_generate(cfg, seed)
    N = ds.mismatch.size
    assert abs(ds.mismatch.mean() - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / N)


def test_matched_tokens_share_more_signal():
    ds = synth_generate(SynthConfig(mismatch_rho=0.5), 0)

    def cos(a, b):
        return (a @ b.T) / np.outer(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))

    matched, mismatched = [], []
    for i in range(len(ds)):
        C = cos(ds.raw_a[i], ds.raw_b[i])
        matched.extend(C[:, ~ds.mismatch[i]].ravel())
        mismatched.extend(C[:, ds.mismatch[i]].ravel())
    assert np.mean(matched) > np.mean(mismatched)


@pytest.mark.xfail(strict=True, reason="the marginal of independent reference tokens is still learnable; "
                                      "MMD drops well below 90% of its initial value")
def test_independent_sides_mmd_stays_flat():
    ds = synth_generate(SynthConfig(mismatch_rho=1.0), 0)
    _, hist = train_alignment(ds, desk_config("MMD"))
    assert hist.records[-1].mean_loss >= 0.9 * hist.records[0].mean_loss


# ---------------------------------------------------------------------------
# filtering


def test_hand_oracle_ranking():
    table = _hand_table()
    ranked = rank_pairs(table)
    assert [r.id for r in ranked] == ["a", "b", "c"]
    for r in ranked:
        frames, comp, hand = HAND[r.id]
        assert abs(r.distance - hand) < 1e-15
        assert abs(r.distance - mean_cosine_distance(frames, comp)) < 1e-15
    assert filter_pairs(table, 2) == ["a", "b"]


def test_equal_vectors_always_kept():
    t = EmbeddingTable.from_dict({"far": ([[0.0, 1.0]], [1.0, 0.0]), "same": ([[3.0, 4.0]] * 10, [3.0, 4.0])})
    assert rank_pairs(t)[0].distance == 0.0
    assert filter_pairs(t, 1) == ["same"]


def test_ties_break_on_id_and_errors_last():
    t = EmbeddingTable.from_dict({
        "zz": ([[1.0, 0.0]], [1.0, 0.0]),
        "aa": ([[2.0, 0.0]], [1.0, 0.0]),
        "bad": ([[0.0, 0.0]], [1.0, 0.0]),
        "mid": ([[1.0, 1.0]], [1.0, 0.0]),
    })
    ranked = rank_pairs(t)
    assert [r.id for r in ranked] == ["aa", "zz", "mid", "bad"]
    assert ranked[-1].error is not None and ranked[0].error is None
    assert filter_pairs(t, 4) == ["aa", "zz", "mid", "bad"]


def test_prefix_monotone():
    rng = np.random.default_rng(0)
    t = EmbeddingTable.from_dict({f"id{i}": (rng.normal(size=(10, 4)), rng.normal(size=4)) for i in range(12)})
    for n in range(12):
        assert filter_pairs(t, n) == filter_pairs(t, n + 1)[:n]
    assert sorted(filter_pairs(t, 12)) == sorted(it.id for it in t.items)


def test_l2_metric():
    t = EmbeddingTable.from_dict({"x": ([[0.0, 0.0], [0.0, 2.0]], [0.0, 0.0]), "y": ([[0.0, 1.0]], [0.0, 0.0])})
    r = rank_pairs(t, "l2")
    assert [(i.id, i.distance) for i in r] == [("x", 1.0), ("y", 1.0)]
    with pytest.raises(ParameterError):
        rank_pairs(t, "manhattan")


def test_filter_errors():
    with pytest.raises(ParameterError):
        filter_pairs(_hand_table(), 4)
    with pytest.raises(DimensionError):
        EmbeddingTable.from_dict({"a": ([[1.0, 0.0]], [1.0, 0.0]), "b": ([[1.0, 0.0, 0.0]], [1.0, 0.0, 0.0])})


def test_binary_table_roundtrip(tmp_path):
    t = _hand_table()
    t.save(tmp_path / "t.bin")
    back = EmbeddingTable.load(tmp_path / "t.bin")
    assert [i.id for i in back.items] == ["a", "b", "c"]
    np.testing.assert_array_equal(back.items[1].frames, t.items[1].frames)
    blob = encode_table(t)
    assert blob[:4] == b"DALI"
    with pytest.raises(FormatError):
        decode_table(blob[:-3])
    with pytest.raises(FormatError):
        decode_table(b"XXXX" + blob[4:])


def test_csv_import(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("id,frame_index,v0,v1\n"
                 "b,1,0,1\nb,0,1,0\nb,-1,1,0\n"
                 "a,0,1,1\na,-1,1,0\n")
    t = EmbeddingTable.load(p)
    assert [i.id for i in t.items] == ["b", "a"]
    np.testing.assert_array_equal(t.items[0].frames, [[1, 0], [0, 1]])
    assert filter_pairs(t, 2) == ["a", "b"]


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,0,1,1\n")
    with pytest.raises(FormatError):
        read_table_csv(p)
    p.write_text("a,zero,1,1\na,-1,1,0\n")
    with pytest.raises(FormatError):
        read_table_csv(p)
