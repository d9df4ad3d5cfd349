"""Deterministic trainable toy encoders for text and image inputs.

Text goes through a signed hashing featurizer followed by a learnable linear
projection; images are precomputed raw feature vectors pushed through their
own projection. Outputs are L2-normalized f32 vectors (the zero vector is
passed through untouched so a missing modality contributes nothing to fusion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unir.data import Instruction
from unir.errors import DimMismatch, MissingFeature

DEFAULT_DIM = 64

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(token: str) -> int:
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_embed_text(text: str, hash_dim: int) -> np.ndarray:
    """Bag-of-tokens signed hashing: bucket by FNV-1a, sign from the top bit.

    Token order does not matter; the result is L2-normalized unless every
    bucket cancelled to zero (empty text gives the zero vector).
    """
    if hash_dim < 1:
        raise ValueError("hash_dim must be >= 1")
    vec = np.zeros(hash_dim, dtype=np.float32)
    for token in text.split():
        h = fnv1a64(token)
        sign = 1.0 if h & 0x8000000000000000 else -1.0
        vec[h % hash_dim] += sign
    return l2_normalize(vec)


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    """Unit-normalize in f64, return f32; the zero vector stays zero."""
    norm = float(np.sqrt(np.dot(vec.astype(np.float64), vec.astype(np.float64))))
    if norm == 0.0:
        return vec.astype(np.float32)
    return (vec.astype(np.float64) / norm).astype(np.float32)


def _init_projection(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.eye(dim, dtype=np.float64) + 0.01 * rng.standard_normal((dim, dim))


@dataclass
class TextEncoderParams:
    projection: np.ndarray
    hash_dim: int
    seed: int

    @classmethod
    def init(cls, dim: int = DEFAULT_DIM, seed: int = 0) -> "TextEncoderParams":
        return cls(projection=_init_projection(dim, seed), hash_dim=dim, seed=seed)

    @property
    def dim(self) -> int:
        return self.hash_dim


@dataclass
class ImageEncoderParams:
    projection: np.ndarray
    seed: int

    @classmethod
    def init(cls, dim: int = DEFAULT_DIM, seed: int = 0) -> "ImageEncoderParams":
        return cls(projection=_init_projection(dim, seed + 1), seed=seed)

    @property
    def dim(self) -> int:
        return self.projection.shape[0]


def prefixed_text(text: str, instruction: Instruction | None) -> str:
    return f"{instruction.text} {text}" if instruction is not None else text


def encode_text(
    text: str, instruction: Instruction | None, params: TextEncoderParams
) -> np.ndarray:
    """Embed ``instruction.text + " " + text`` (or bare text), project, normalize."""
    features = hash_embed_text(prefixed_text(text, instruction), params.hash_dim)
    projected = params.projection @ features.astype(np.float64)
    return l2_normalize(projected)


def encode_image(image_ref: str, features: np.ndarray | None, params: ImageEncoderParams) -> np.ndarray:
    """Project a precomputed raw image feature vector and normalize."""
    if features is None:
        raise MissingFeature(image_ref)
    if features.shape != (params.dim,):
        raise DimMismatch(
            f"raw feature for {image_ref!r} has dim {features.shape}, expected ({params.dim},)"
        )
    projected = params.projection @ features.astype(np.float64)
    return l2_normalize(projected)
