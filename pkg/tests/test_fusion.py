import numpy as np
import pytest

from unir.encoders import l2_normalize
from unir.errors import DimMismatch
from unir.fusion import (
    FeatureFusionEmbedding,
    FusionWeights,
    ScoreFusionEmbedding,
    fuse_feature_level_toy,
    fuse_score_level,
    init_feature_projection,
    similarity_feature_fusion,
    similarity_score_fusion,
)

from conftest import unit_vec

DIM = 8


def random_pair(rng, p_missing=0.0):
    img = None if rng.random() < p_missing else l2_normalize(rng.standard_normal(DIM))
    txt = l2_normalize(rng.standard_normal(DIM)) if img is None or rng.random() >= p_missing \
        else None
    if img is None and txt is None:
        txt = l2_normalize(rng.standard_normal(DIM))
    return ScoreFusionEmbedding(image_vec=img, text_vec=txt)


def test_fuse_orthogonal_unit_parts():
    e = ScoreFusionEmbedding(image_vec=unit_vec(2, 0), text_vec=unit_vec(2, 1))
    assert np.array_equal(fuse_score_level(e, 1.0, 1.0), np.array([1.0, 1.0], dtype=np.float32))


def test_fuse_missing_image_is_text_only():
    e = ScoreFusionEmbedding(text_vec=np.array([2.0, 3.0], dtype=np.float32))
    assert np.array_equal(fuse_score_level(e, 1.0, 1.0), np.array([2.0, 3.0], dtype=np.float32))


def test_fuse_weighted_sum_hand_value():
    e = ScoreFusionEmbedding(
        image_vec=np.array([1.0, 1.0], dtype=np.float32),
        text_vec=np.array([1.0, -1.0], dtype=np.float32),
    )
    assert np.array_equal(fuse_score_level(e, 2.0, 0.5), np.array([2.5, 1.5], dtype=np.float32))


def test_similarity_all_basis_vectors():
    e1 = unit_vec(DIM, 0)
    q = ScoreFusionEmbedding(image_vec=e1, text_vec=e1)
    c = ScoreFusionEmbedding(image_vec=e1, text_vec=e1)
    assert similarity_score_fusion(q, c, FusionWeights()) == pytest.approx(4.0)


def test_similarity_cross_term_orthogonal():
    q = ScoreFusionEmbedding(text_vec=np.array([0.0, 1.0], dtype=np.float32))
    c = ScoreFusionEmbedding(image_vec=np.array([1.0, 0.0], dtype=np.float32))
    assert similarity_score_fusion(q, c, FusionWeights()) == 0.0


def test_similarity_weight_scaling_is_quadratic():
    rng = np.random.default_rng(0)
    q = random_pair(rng)
    c = random_pair(rng)
    base = similarity_score_fusion(q, c, FusionWeights(1.0, 0.5, -1.0, 2.0))
    scaled = similarity_score_fusion(q, c, FusionWeights(2.0, 1.0, -2.0, 4.0))
    assert scaled == pytest.approx(4.0 * base, rel=1e-12)


def test_weight_scaling_preserves_ranking():
    rng = np.random.default_rng(1)
    q = random_pair(rng)
    candidates = [random_pair(rng) for _ in range(50)]
    w = FusionWeights(0.7, 1.3, 0.9, 1.1)
    w_scaled = FusionWeights(1.4, 2.6, 1.8, 2.2)
    base = sorted(range(50), key=lambda i: (-similarity_score_fusion(q, candidates[i], w), i))
    scaled = sorted(
        range(50), key=lambda i: (-similarity_score_fusion(q, candidates[i], w_scaled), i)
    )
    assert base == scaled


def test_feature_similarity_identical_unit_vectors():
    v = l2_normalize(np.ones(DIM, dtype=np.float32))
    assert similarity_feature_fusion(
        FeatureFusionEmbedding(v), FeatureFusionEmbedding(v)
    ) == pytest.approx(1.0, abs=1e-6)


def test_feature_similarity_orthogonal():
    a = FeatureFusionEmbedding(unit_vec(DIM, 0))
    b = FeatureFusionEmbedding(unit_vec(DIM, 1))
    assert similarity_feature_fusion(a, b) == 0.0


def test_feature_similarity_hand_value():
    q = FeatureFusionEmbedding(np.array([0.6, 0.8], dtype=np.float32))
    c = FeatureFusionEmbedding(np.array([0.8, 0.6], dtype=np.float32))
    assert similarity_feature_fusion(q, c) == pytest.approx(0.96, rel=1e-6)


def test_feature_similarity_dim_mismatch():
    with pytest.raises(DimMismatch):
        similarity_feature_fusion(
            FeatureFusionEmbedding(np.zeros(3, dtype=np.float32)),
            FeatureFusionEmbedding(np.zeros(4, dtype=np.float32)),
        )


def sum_halves_projection(dim):
    return np.concatenate([np.eye(dim), np.eye(dim)], axis=1)


def test_toy_feature_fusion_sum_of_halves():
    e1 = unit_vec(DIM, 0)
    fused = fuse_feature_level_toy(e1, e1, sum_halves_projection(DIM))
    assert np.allclose(fused.fused_vec, e1, atol=1e-7)


def test_toy_feature_fusion_both_missing_is_zero():
    fused = fuse_feature_level_toy(None, None, sum_halves_projection(DIM))
    assert not fused.fused_vec.any()


def test_toy_feature_fusion_text_only():
    txt = l2_normalize(np.arange(1, DIM + 1, dtype=np.float32))
    fused = fuse_feature_level_toy(None, txt, sum_halves_projection(DIM))
    assert np.allclose(fused.fused_vec, txt, atol=1e-7)


def test_toy_feature_fusion_bad_projection_shape():
    with pytest.raises(DimMismatch):
        fuse_feature_level_toy(None, unit_vec(DIM, 0), np.zeros((DIM, DIM)))


def test_init_feature_projection_shape():
    proj = init_feature_projection(DIM, seed=0)
    assert proj.shape == (DIM, 2 * DIM)
    assert np.max(np.abs(proj - sum_halves_projection(DIM))) < 0.1


def test_expansion_identity_thousand_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        q = random_pair(rng, p_missing=0.2)
        c = random_pair(rng, p_missing=0.2)
        w = FusionWeights(*rng.uniform(-2.0, 2.0, size=4))
        four_term = similarity_score_fusion(q, c, w)
        fused_q = fuse_score_level(q, w.w1, w.w2).astype(np.float64)
        fused_c = fuse_score_level(c, w.w3, w.w4).astype(np.float64)
        dot = float(fused_q @ fused_c)
        assert abs(four_term - dot) <= 1e-5 * (1.0 + abs(four_term))


def test_missing_image_reduces_to_text_terms_exactly():
    rng = np.random.default_rng(7)
    q = ScoreFusionEmbedding(text_vec=l2_normalize(rng.standard_normal(DIM)))
    c = ScoreFusionEmbedding(
        image_vec=l2_normalize(rng.standard_normal(DIM)),
        text_vec=l2_normalize(rng.standard_normal(DIM)),
    )
    w = FusionWeights(1.7, 0.3, -0.9, 1.1)
    full = similarity_score_fusion(q, c, w)
    qt = q.text_vec.astype(np.float64)
    expected = w.w2 * w.w4 * float(qt @ c.text_vec.astype(np.float64)) + w.w2 * w.w3 * float(
        qt @ c.image_vec.astype(np.float64)
    )
    assert full == expected
