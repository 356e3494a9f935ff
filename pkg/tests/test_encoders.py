import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from c2vl.data import SkeletonSequence, chain_bones, ntu25_bones, synth_generate
from c2vl.encoders import (ClipFrozenEncoder, EmbeddingBatch, Projector, SkeletonEncoder, SkeletonEncoderConfig,
                           SkeletonModel, StubFrozenEncoder, Temperature, encode_skeleton, frozen_encode,
                           l2_normalize, make_frozen_encoder, module_digest, partitioned_adjacency, project_embed,
                           raw_adjacency)
from c2vl.errors import ConfigError, DataError, ShapeError


def toy_seqs(n=4, joints=5, bodies=1, seed=0):
    rng = np.random.default_rng(seed)
    return [SkeletonSequence(f"t{i}", rng.normal(size=(64, joints, 3, bodies)).astype(np.float32)) for i in range(n)]


def small_cfg(joints=5, bodies=1):
    return SkeletonEncoderConfig(joints=joints, bodies=bodies, channels=[8, 16], strides=[2, 2])


# ---------------------------------------------------------------- graph

@pytest.mark.parametrize("table", [ntu25_bones(), chain_bones(5)])
def test_adjacency_symmetric_with_self_loops(table):
    a = raw_adjacency(table)
    np.testing.assert_array_equal(a, a.T)
    assert (np.diag(a) == 1).all()


def test_spatial_partition_sums_to_normalized_graph():
    table = ntu25_bones()
    spatial = partitioned_adjacency(table, "spatial")
    uniform = partitioned_adjacency(table, "uniform")
    assert spatial.shape == (3, 25, 25) and uniform.shape == (1, 25, 25)
    np.testing.assert_allclose(spatial.sum(0), uniform[0], atol=1e-6)


# ---------------------------------------------------------------- skeleton encoder

def test_encode_skeleton_shape_and_determinism():
    torch.manual_seed(0)
    enc = SkeletonEncoder(small_cfg())
    seqs = toy_seqs()
    f1 = encode_skeleton(seqs, "joint", enc)
    f2 = encode_skeleton(seqs, "joint", enc)
    assert f1.shape == (4, enc.feature_dim) == (4, 16)
    assert torch.equal(f1, f2)


def test_all_zero_sequence_gives_finite_features():
    enc = SkeletonEncoder(small_cfg())
    seqs = toy_seqs(3)
    seqs[1] = SkeletonSequence("zero", np.zeros((64, 5, 3, 1), np.float32))
    enc.train()
    out_train = enc(torch.from_numpy(np.stack([s.data for s in seqs]).transpose(0, 4, 3, 1, 2).reshape(3, 3, 64, 5)))
    assert torch.isfinite(out_train).all()
    assert torch.isfinite(encode_skeleton(seqs, "bone", enc)).all()


def test_two_bodies_stacked_on_channels():
    enc = SkeletonEncoder(small_cfg(bodies=2))
    assert encode_skeleton(toy_seqs(2, bodies=2), "motion", enc).shape == (2, 16)


def test_batch_shape_mismatch_lists_ids():
    seqs = toy_seqs(2) + [SkeletonSequence("odd", np.zeros((64, 4, 3, 1), np.float32))]
    with pytest.raises(DataError, match="odd"):
        encode_skeleton(seqs, "joint", SkeletonEncoder(small_cfg()))


def test_encoder_rejects_wrong_joint_count():
    enc = SkeletonEncoder(small_cfg())
    with pytest.raises(ShapeError):
        enc(torch.zeros(2, 3, 64, 7))


def test_full_scale_config_matches_reference_stack():
    cfg = SkeletonEncoderConfig.full_scale()
    assert cfg.channels == [64, 64, 64, 64, 128, 128, 128, 256, 256, 256]
    assert cfg.feature_dim == 256


# ---------------------------------------------------------------- projection

def test_projection_unit_norm():
    proj = Projector(16, 8)
    out = project_embed(torch.randn(32, 16), proj)
    np.testing.assert_allclose(out.norm(dim=1).detach().numpy(), 1.0, atol=1e-6)


def test_projection_scale_invariant_without_bias():
    torch.manual_seed(1)
    proj = Projector(16, 8, bias=False)
    f = torch.randn(5, 16, dtype=torch.float64)
    proj = proj.double()
    np.testing.assert_allclose(proj(5 * f).detach().numpy(), proj(f).detach().numpy(), atol=1e-9)


def test_zero_row_normalizes_to_unit_without_nan():
    out = l2_normalize(torch.zeros(2, 8, dtype=torch.float64))
    assert torch.isfinite(out).all()
    np.testing.assert_allclose(out.norm(dim=1).numpy(), 1.0, atol=1e-12)
    proj = Projector(4, 8)
    with torch.no_grad():
        for p in proj.parameters():
            p.zero_()
    assert torch.isfinite(proj(torch.zeros(3, 4))).all()


@given(st.integers(1, 20), st.integers(1, 40), st.floats(1e-3, 1e3))
def test_l2_normalize_property(b, d, scale):
    x = torch.randn(b, d, dtype=torch.float64) * scale
    np.testing.assert_allclose(l2_normalize(x).norm(dim=1).numpy(), 1.0, atol=1e-6)


def test_projector_dim_mismatch():
    with pytest.raises(ShapeError):
        Projector(16, 8)(torch.randn(2, 15))


# ---------------------------------------------------------------- temperature

def test_temperature_init_and_clamp():
    t = Temperature(0.07, learnable=True)
    assert float(t().detach()) == pytest.approx(0.07)
    with torch.no_grad():
        t.log_tau.fill_(10.0)
    t.clamp_()
    assert float(t().detach()) == pytest.approx(1.0)
    with torch.no_grad():
        t.log_tau.fill_(-50.0)
    assert float(t().detach()) == pytest.approx(1e-3)
    fixed = Temperature(0.07, learnable=False)
    assert not list(fixed.parameters())
    with pytest.raises(ConfigError):
        Temperature(2.0)


def test_model_has_two_projectors_and_excludes_frozen_weights():
    model = SkeletonModel(small_cfg(), 8)
    s_v, s_l = model(torch.randn(3, 3, 64, 5))
    assert s_v.shape == s_l.shape == (3, 8)
    assert not torch.allclose(s_v, s_l)
    names = {n.split(".")[0] for n, _ in model.named_parameters()}
    assert names == {"encoder", "proj_vision", "proj_language", "tau"}


# ---------------------------------------------------------------- frozen encoders

def test_stub_text_deterministic():
    enc = StubFrozenEncoder(8)
    a = frozen_encode(["Holding a red cup."], enc, "language").matrix
    b = frozen_encode(["Holding a red cup."], StubFrozenEncoder(8), "language").matrix
    np.testing.assert_array_equal(a, b)


def test_stub_digest_constant_over_100_calls():
    enc = StubFrozenEncoder(8)
    before = enc.digest()
    for i in range(100):
        frozen_encode([f"caption {i}"], enc, "language")
        frozen_encode([np.full((4, 4, 3), i, np.uint8)], enc, "vision")
    assert enc.digest() == before


def test_stub_distinct_class_captions_have_low_cosine(synth_small):
    _, records, labels = synth_small
    enc = StubFrozenEncoder(8)
    texts = {}
    for r, y in zip(records, labels):
        texts.setdefault(y, r.language.text)
    emb = frozen_encode(list(texts.values()), enc, "language").matrix
    cos = emb @ emb.T
    off = cos[~np.eye(len(cos), dtype=bool)]
    assert len(texts) == 3 and off.max() < 0.9


def test_stub_outputs_unit_norm(synth_small):
    _, records, _ = synth_small
    enc = StubFrozenEncoder(8)
    frozen_encode([r.vision.crop for r in records], enc, "vision").check_unit_norm()
    frozen_encode([r.language.text for r in records], enc, "language").check_unit_norm()


def test_embedding_batch_norm_check():
    with pytest.raises(ShapeError):
        EmbeddingBatch(np.ones((2, 4), np.float32), "vision").check_unit_norm()


def test_clip_unavailable_points_to_stub(monkeypatch, tmp_path):
    monkeypatch.setenv("C2VL_CLIP_PATH", str(tmp_path / "missing"))
    with pytest.raises(ConfigError, match="stub"):
        ClipFrozenEncoder()
    with pytest.raises(ConfigError):
        make_frozen_encoder("resnet")
