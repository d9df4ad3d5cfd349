"""Embeds corpora with trained (or freshly initialized) model parameters.

This is the first half of the two-step retrieval pipeline: featurize every
query and candidate into vectors, then hand the matrices to the index module.
"""

from __future__ import annotations

import numpy as np

from unir.data import Pool, QueryInstance
from unir.encoders import (
    ImageEncoderParams,
    TextEncoderParams,
    encode_image,
    encode_text,
)
from unir.errors import MissingFeature
from unir.fusion import (
    FeatureFusionEmbedding,
    ScoreFusionEmbedding,
    fuse_feature_level_toy,
)
from unir.store import EmbeddingStore, StoreMode
from unir.train import ModelParams, query_text_with_instruction


def text_encoder_of(params: ModelParams) -> TextEncoderParams:
    return TextEncoderParams(projection=params.text_proj, hash_dim=params.dim, seed=0)


def image_encoder_of(params: ModelParams) -> ImageEncoderParams:
    return ImageEncoderParams(projection=params.image_proj, seed=0)


def _raw_image(raw_features: EmbeddingStore | None, image_ref: str | None) -> np.ndarray | None:
    if image_ref is None:
        return None
    if raw_features is None or image_ref not in raw_features:
        raise MissingFeature(image_ref)
    return raw_features.row(image_ref)


def _encode_pair(
    text: str | None,
    image_ref: str | None,
    params: ModelParams,
    raw_features: EmbeddingStore | None,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    txt_vec = (
        encode_text(text, None, text_encoder_of(params)) if text is not None else None
    )
    raw = _raw_image(raw_features, image_ref)
    img_vec = (
        encode_image(image_ref, raw, image_encoder_of(params)) if raw is not None else None
    )
    return img_vec, txt_vec


def embed_pool(
    pool: Pool, params: ModelParams, raw_features: EmbeddingStore | None
) -> EmbeddingStore:
    """Encode every candidate into a store matching the model's fusion mode."""
    n, dim = len(pool), params.dim
    ids = [cand.did for cand in pool.candidates]
    if params.mode is StoreMode.SCORE:
        image = np.zeros((n, dim), dtype=np.float32)
        text = np.zeros((n, dim), dtype=np.float32)
        for i, cand in enumerate(pool.candidates):
            img_vec, txt_vec = _encode_pair(cand.text, cand.image_ref, params, raw_features)
            if img_vec is not None:
                image[i] = img_vec
            if txt_vec is not None:
                text[i] = txt_vec
        return EmbeddingStore(dim=dim, mode=StoreMode.SCORE, ids=ids, image=image, text=text)
    fused = np.zeros((n, dim), dtype=np.float32)
    for i, cand in enumerate(pool.candidates):
        img_vec, txt_vec = _encode_pair(cand.text, cand.image_ref, params, raw_features)
        fused[i] = fuse_feature_level_toy(img_vec, txt_vec, params.fusion_proj).fused_vec
    return EmbeddingStore(dim=dim, mode=StoreMode.FEATURE, ids=ids, feature=fused)


def embed_query(
    query: QueryInstance,
    params: ModelParams,
    raw_features: EmbeddingStore | None,
    use_instructions: bool,
    seed: int,
) -> ScoreFusionEmbedding | FeatureFusionEmbedding:
    """Encode one query; instructions prefix the text channel when enabled."""
    text = query_text_with_instruction(query, use_instructions, seed)
    img_vec, txt_vec = _encode_pair(text, query.image_ref, params, raw_features)
    if params.mode is StoreMode.SCORE:
        if img_vec is None and txt_vec is None:
            txt_vec = np.zeros(params.dim, dtype=np.float32)
        return ScoreFusionEmbedding(image_vec=img_vec, text_vec=txt_vec)
    return fuse_feature_level_toy(img_vec, txt_vec, params.fusion_proj)
