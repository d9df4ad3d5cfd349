"""Score-level and feature-level fusion of uni-modal embeddings.

Score fusion keeps an (image, text) vector pair per item and combines them
with four learnable scalar weights; the query-candidate similarity then
decomposes into within-modality and cross-modality dot products. Feature
fusion represents each item by a single vector and similarity is one dot
product. A missing modality is a zero vector throughout, so it contributes
nothing to any term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unir.encoders import l2_normalize
from unir.errors import DimMismatch


@dataclass
class FusionWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "FusionWeights":
        w1, w2, w3, w4 = (float(x) for x in arr)
        return cls(w1, w2, w3, w4)


@dataclass
class ScoreFusionEmbedding:
    """An (image, text) vector pair; at least one side must be present."""

    image_vec: np.ndarray | None = None
    text_vec: np.ndarray | None = None

    def __post_init__(self):
        if self.image_vec is None and self.text_vec is None:
            raise ValueError("score-fusion embedding needs at least one modality vector")
        if (
            self.image_vec is not None
            and self.text_vec is not None
            and self.image_vec.shape != self.text_vec.shape
        ):
            raise DimMismatch(
                f"image dim {self.image_vec.shape} != text dim {self.text_vec.shape}"
            )

    @property
    def dim(self) -> int:
        vec = self.image_vec if self.image_vec is not None else self.text_vec
        return int(vec.shape[0])


@dataclass
class FeatureFusionEmbedding:
    fused_vec: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.fused_vec.shape[0])


def _part(vec: np.ndarray | None, dim: int) -> np.ndarray:
    if vec is None:
        return np.zeros(dim, dtype=np.float32)
    if vec.shape != (dim,):
        raise DimMismatch(f"vector dim {vec.shape} != ({dim},)")
    return vec


def fuse_score_level(e: ScoreFusionEmbedding, wa: float, wb: float) -> np.ndarray:
    """Weighted sum ``wa * image + wb * text`` with missing sides as zero."""
    dim = e.dim
    img = _part(e.image_vec, dim).astype(np.float64)
    txt = _part(e.text_vec, dim).astype(np.float64)
    return (wa * img + wb * txt).astype(np.float32)


def _dot(a: np.ndarray | None, b: np.ndarray | None, dim: int) -> float:
    if a is None or b is None:
        return 0.0
    if a.shape != (dim,) or b.shape != (dim,):
        raise DimMismatch(f"dot arguments {a.shape} / {b.shape} != ({dim},)")
    return float(np.dot(a.astype(np.float64), b.astype(np.float64)))


def similarity_score_fusion(
    q: ScoreFusionEmbedding, c: ScoreFusionEmbedding, w: FusionWeights
) -> float:
    """Four-term weighted similarity.

    Equals the dot product of the fused query (w1, w2) and fused candidate
    (w3, w4) up to f32 rounding of the fused vectors.
    """
    dim = q.dim
    if c.dim != dim:
        raise DimMismatch(f"query dim {dim} != candidate dim {c.dim}")
    return (
        w.w1 * w.w3 * _dot(q.image_vec, c.image_vec, dim)
        + w.w2 * w.w4 * _dot(q.text_vec, c.text_vec, dim)
        + w.w1 * w.w4 * _dot(q.image_vec, c.text_vec, dim)
        + w.w2 * w.w3 * _dot(q.text_vec, c.image_vec, dim)
    )


def similarity_feature_fusion(q: FeatureFusionEmbedding, c: FeatureFusionEmbedding) -> float:
    if q.dim != c.dim:
        raise DimMismatch(f"query dim {q.dim} != candidate dim {c.dim}")
    return float(np.dot(q.fused_vec.astype(np.float64), c.fused_vec.astype(np.float64)))


def fuse_feature_level_toy(
    img: np.ndarray | None, txt: np.ndarray | None, proj: np.ndarray
) -> FeatureFusionEmbedding:
    """Single-vector fusion stand-in: project the concatenated pair, normalize.

    ``proj`` has shape (dim, 2*dim); missing modalities enter as zeros and a
    fully missing item stays the zero vector.
    """
    out_dim, in_dim = proj.shape
    if in_dim != 2 * out_dim:
        raise DimMismatch(f"projection shape {proj.shape} is not (dim, 2*dim)")
    img_part = _part(img, out_dim)
    txt_part = _part(txt, out_dim)
    stacked = np.concatenate([img_part, txt_part]).astype(np.float64)
    fused = proj.astype(np.float64) @ stacked
    return FeatureFusionEmbedding(fused_vec=l2_normalize(fused))


def init_feature_projection(dim: int, seed: int) -> np.ndarray:
    """Sum-of-halves plus seeded noise, mirroring the toy encoder init scale."""
    rng = np.random.default_rng(seed + 2)
    base = np.concatenate([np.eye(dim), np.eye(dim)], axis=1)
    return base + 0.01 * rng.standard_normal((dim, 2 * dim))
