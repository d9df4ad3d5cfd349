"""In-batch query-target contrastive training of the toy retrieval models.

The objective is symmetric: cross-entropy over rows (query vs all batch
candidates) averaged with cross-entropy over columns (candidate vs all batch
queries), with positives on the diagonal and similarities divided by a
learnable temperature held as log(1/temperature). Hard negatives attach as
extra similarity columns that only the row direction sees.

All training math runs in float64 so analytic gradients can be verified
against central finite differences; inference embeddings are cast to f32 at
the store boundary.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from unir.data import Pool, QueryInstance, select_instruction
from unir.encoders import hash_embed_text, prefixed_text
from unir.errors import (
    BadMagic,
    BatchTooSmall,
    ChecksumMismatch,
    EmptyCorpus,
    MissingFeature,
    NonPositiveTemperature,
    NonSquare,
)
from unir.fusion import FusionWeights, init_feature_projection
from unir.store import EmbeddingStore, StoreMode


@dataclass
class TrainConfig:
    mode: StoreMode = StoreMode.SCORE
    batch_size: int = 32
    epochs: int = 1
    learning_rate: float = 1e-2
    temperature_init: float = 0.07
    seed: int = 0
    use_instructions: bool = True
    freeze_weights: bool = False

    def validate(self) -> None:
        if self.batch_size < 2:
            raise BatchTooSmall("batch_size must be >= 2 for in-batch negatives")
        if self.temperature_init <= 0:
            raise NonPositiveTemperature("temperature_init must be > 0")

    def canonical_hash(self) -> bytes:
        payload = {
            "mode": self.mode.name,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "temperature_init": self.temperature_init,
            "seed": self.seed,
            "use_instructions": self.use_instructions,
            "freeze_weights": self.freeze_weights,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()


@dataclass
class ModelParams:
    """Everything the retriever learns, stored as float64 arrays."""

    mode: StoreMode
    dim: int
    text_proj: np.ndarray
    image_proj: np.ndarray
    fusion_proj: np.ndarray | None
    weights: np.ndarray  # w1..w4
    log_inv_temp: np.ndarray  # shape (1,), holds log(1/temperature)

    @classmethod
    def init(cls, mode: StoreMode, dim: int, seed: int, temperature_init: float = 0.07):
        rng = np.random.default_rng(seed)
        eye = np.eye(dim, dtype=np.float64)
        text_proj = eye + 0.01 * rng.standard_normal((dim, dim))
        image_proj = eye + 0.01 * rng.standard_normal((dim, dim))
        fusion_proj = init_feature_projection(dim, seed) if mode is StoreMode.FEATURE else None
        return cls(
            mode=mode,
            dim=dim,
            text_proj=text_proj,
            image_proj=image_proj,
            fusion_proj=fusion_proj,
            weights=np.ones(4, dtype=np.float64),
            log_inv_temp=np.array([np.log(1.0 / temperature_init)], dtype=np.float64),
        )

    @property
    def temperature(self) -> float:
        return float(np.exp(-self.log_inv_temp[0]))

    def fusion_weights(self) -> FusionWeights:
        return FusionWeights.from_array(self.weights)

    def groups(self) -> dict[str, np.ndarray]:
        out = {
            "text_proj": self.text_proj,
            "image_proj": self.image_proj,
            "log_inv_temp": self.log_inv_temp,
        }
        if self.mode is StoreMode.SCORE:
            out["weights"] = self.weights
        if self.fusion_proj is not None:
            out["fusion_proj"] = self.fusion_proj
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            mode=self.mode,
            dim=self.dim,
            text_proj=self.text_proj.copy(),
            image_proj=self.image_proj.copy(),
            fusion_proj=None if self.fusion_proj is None else self.fusion_proj.copy(),
            weights=self.weights.copy(),
            log_inv_temp=self.log_inv_temp.copy(),
        )


@dataclass
class BatchLossReport:
    loss: float
    accuracy_in_batch: float
    grad_norms: dict[str, float]


@dataclass
class Batch:
    """Raw (pre-projection) f64 features; all-zero rows mean missing modality."""

    q_text: np.ndarray
    q_image: np.ndarray
    c_text: np.ndarray
    c_image: np.ndarray

    @property
    def n_queries(self) -> int:
        return self.q_text.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.c_text.shape[0]


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grads(sim: np.ndarray, log_inv_temp: float):
    """Loss, gradient w.r.t. sim, gradient w.r.t. log(1/temperature)."""
    n, m = sim.shape
    scale = np.exp(log_inv_temp)
    s = scale * sim
    row_sm = _softmax_rows(s)
    col_sm = _softmax_rows(s[:, :n].T).T
    diag = np.arange(n)
    row_lse = np.log(np.exp(s - s.max(axis=1, keepdims=True)).sum(axis=1)) + s.max(axis=1)
    col_block = s[:, :n]
    col_lse = (
        np.log(np.exp(col_block - col_block.max(axis=0, keepdims=True)).sum(axis=0))
        + col_block.max(axis=0)
    )
    loss_rows = float(np.mean(row_lse - s[diag, diag]))
    loss_cols = float(np.mean(col_lse - s[diag, diag]))
    loss = 0.5 * (loss_rows + loss_cols)

    grad_s = 0.5 * row_sm / n
    grad_s[:, :n] += 0.5 * col_sm / n
    grad_s[diag, diag] -= 1.0 / n
    grad_sim = scale * grad_s
    grad_theta = float(np.sum(grad_s * s))
    return loss, grad_sim, grad_theta


def contrastive_loss(sim: np.ndarray, temperature: float, extra_negatives: int = 0):
    """Symmetric in-batch contrastive loss with positives on the diagonal.

    ``sim`` has shape (N, N + extra_negatives); the appended columns are hard
    negatives visible to the row direction only. Returns the loss and its
    gradient with respect to ``sim``.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[1] != sim.shape[0] + extra_negatives:
        raise NonSquare(f"similarity matrix shape {sim.shape} with {extra_negatives} extras")
    if sim.shape[0] < 2:
        raise NonSquare("need at least 2 queries for in-batch contrast")
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature {temperature} must be > 0")
    loss, grad_sim, _ = _loss_and_grads(sim, float(np.log(1.0 / temperature)))
    return loss, grad_sim


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _encode_side(feats: np.ndarray, proj: np.ndarray):
    u = feats @ proj.T
    r = np.sqrt(np.sum(u * u, axis=1))
    safe = np.where(r > 0.0, r, 1.0)
    y = u / safe[:, None]
    return u, r, y


def _normalize_backward(dy: np.ndarray, u: np.ndarray, r: np.ndarray) -> np.ndarray:
    safe = np.where(r > 0.0, r, 1.0)
    y = u / safe[:, None]
    du = (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / safe[:, None]
    du[r == 0.0] = 0.0
    return du


def forward_backward(params: ModelParams, batch: Batch):
    """One training step's loss, report, and gradients for every param group."""
    uqt, rqt, yqt = _encode_side(batch.q_text, params.text_proj)
    uqi, rqi, yqi = _encode_side(batch.q_image, params.image_proj)
    uct, rct, yct = _encode_side(batch.c_text, params.text_proj)
    uci, rci, yci = _encode_side(batch.c_image, params.image_proj)
    theta = float(params.log_inv_temp[0])
    n = batch.n_queries

    if params.mode is StoreMode.SCORE:
        w1, w2, w3, w4 = params.weights
        fq = w1 * yqi + w2 * yqt
        fc = w3 * yci + w4 * yct
        sim = fq @ fc.T
        loss, grad_sim, grad_theta = _loss_and_grads(sim, theta)
        dfq = grad_sim @ fc
        dfc = grad_sim.T @ fq
        grad_w = np.array(
            [
                np.sum(dfq * yqi),
                np.sum(dfq * yqt),
                np.sum(dfc * yci),
                np.sum(dfc * yct),
            ]
        )
        dyqi, dyqt = w1 * dfq, w2 * dfq
        dyci, dyct = w3 * dfc, w4 * dfc
        grads = {"weights": grad_w}
    else:
        zq = np.concatenate([yqi, yqt], axis=1)
        zc = np.concatenate([yci, yct], axis=1)
        uq, rq, fq = _encode_side(zq, params.fusion_proj)
        uc, rc, fc = _encode_side(zc, params.fusion_proj)
        sim = fq @ fc.T
        loss, grad_sim, grad_theta = _loss_and_grads(sim, theta)
        dfq = grad_sim @ fc
        dfc = grad_sim.T @ fq
        duq = _normalize_backward(dfq, uq, rq)
        duc = _normalize_backward(dfc, uc, rc)
        grad_fusion = duq.T @ zq + duc.T @ zc
        dzq = duq @ params.fusion_proj
        dzc = duc @ params.fusion_proj
        dim = params.dim
        dyqi, dyqt = dzq[:, :dim], dzq[:, dim:]
        dyci, dyct = dzc[:, :dim], dzc[:, dim:]
        grads = {"fusion_proj": grad_fusion}

    duqt = _normalize_backward(dyqt, uqt, rqt)
    duqi = _normalize_backward(dyqi, uqi, rqi)
    duct = _normalize_backward(dyct, uct, rct)
    duci = _normalize_backward(dyci, uci, rci)
    grads["text_proj"] = duqt.T @ batch.q_text + duct.T @ batch.c_text
    grads["image_proj"] = duqi.T @ batch.q_image + duci.T @ batch.c_image
    grads["log_inv_temp"] = np.array([grad_theta])

    accuracy = float(np.mean(np.argmax(sim, axis=1) == np.arange(n)))
    report = BatchLossReport(
        loss=loss,
        accuracy_in_batch=accuracy,
        grad_norms={k: float(np.linalg.norm(v)) for k, v in grads.items()},
    )
    return loss, report, grads


def batch_loss(params: ModelParams, batch: Batch) -> float:
    loss, _, _ = forward_backward(params, batch)
    return loss


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle
# ---------------------------------------------------------------------------

def gradient_check(
    params: ModelParams, batch: Batch, epsilon: float = 1e-4, samples_per_matrix: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every scalar of the fusion weights and log-temperature is checked, plus a
    seeded sample of at least ``samples_per_matrix`` entries per projection.
    """
    _, _, grads = forward_backward(params, batch)
    rng = np.random.default_rng(seed)
    max_err = 0.0

    def fd(arr: np.ndarray, flat_idx: int) -> float:
        orig = arr.flat[flat_idx]
        arr.flat[flat_idx] = orig + epsilon
        up = batch_loss(params, batch)
        arr.flat[flat_idx] = orig - epsilon
        down = batch_loss(params, batch)
        arr.flat[flat_idx] = orig
        return (up - down) / (2.0 * epsilon)

    for name, arr in params.groups().items():
        if arr.size <= 8:
            indices = np.arange(arr.size)
        else:
            indices = rng.choice(arr.size, size=min(samples_per_matrix, arr.size), replace=False)
        analytic = grads[name]
        for flat_idx in indices:
            numeric = fd(arr, int(flat_idx))
            a = float(analytic.flat[int(flat_idx)])
            denom = max(abs(a), abs(numeric), 1e-8)
            err = abs(a - numeric) / denom
            if abs(a) < 1e-10 and abs(numeric) < 1e-10:
                err = 0.0
            max_err = max(max_err, err)
    return max_err


# ---------------------------------------------------------------------------
# Batch assembly from a corpus
# ---------------------------------------------------------------------------

class FeatureCache:
    """Raw featurization of corpus items, computed once per run."""

    def __init__(self, pool: Pool, raw_features: EmbeddingStore | None, dim: int):
        self.pool = pool
        self.raw = raw_features
        self.dim = dim
        self._text: dict[str, np.ndarray] = {}
        self._zero = np.zeros(dim, dtype=np.float64)

    def text_features(self, key: str, text: str | None) -> np.ndarray:
        if not text:
            return self._zero
        cached = self._text.get(key)
        if cached is None:
            cached = hash_embed_text(text, self.dim).astype(np.float64)
            self._text[key] = cached
        return cached

    def image_features(self, image_ref: str | None) -> np.ndarray:
        if not image_ref:
            return self._zero
        if self.raw is None or image_ref not in self.raw:
            raise MissingFeature(image_ref)
        return self.raw.row(image_ref).astype(np.float64)


def query_text_with_instruction(
    query: QueryInstance, use_instructions: bool, seed: int
) -> str | None:
    if query.text is None and not use_instructions:
        return None
    instruction = select_instruction(query, seed) if use_instructions else None
    return prefixed_text(query.text or "", instruction) if (
        instruction is not None or query.text is not None
    ) else None


def build_batch(
    queries: list[QueryInstance],
    positives: list[str],
    negatives: list[str],
    cache: FeatureCache,
    use_instructions: bool,
    seed: int,
) -> Batch:
    dim = cache.dim
    n, m = len(queries), len(positives) + len(negatives)
    q_text = np.zeros((n, dim))
    q_image = np.zeros((n, dim))
    c_text = np.zeros((m, dim))
    c_image = np.zeros((m, dim))
    for i, q in enumerate(queries):
        text = query_text_with_instruction(q, use_instructions, seed)
        key = f"q:{q.qid}:{int(use_instructions)}"
        q_text[i] = cache.text_features(key, text)
        q_image[i] = cache.image_features(q.image_ref)
    for j, did in enumerate(positives + negatives):
        cand = cache.pool.get(did)
        c_text[j] = cache.text_features(f"c:{did}", cand.text)
        c_image[j] = cache.image_features(cand.image_ref)
    return Batch(q_text=q_text, q_image=q_image, c_text=c_text, c_image=c_image)


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, groups: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             frozen: set[str] = frozenset()) -> None:
        self.t += 1
        for name, param in groups.items():
            if name in frozen:
                continue
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(param))
            v = self.v.setdefault(name, np.zeros_like(param))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    loss_curve: list[float] = field(default_factory=list)
    reports: list[BatchLossReport] = field(default_factory=list)


def train(
    queries: list[QueryInstance],
    pool: Pool,
    raw_features: EmbeddingStore | None,
    config: TrainConfig,
    params: ModelParams | None = None,
) -> TrainResult:
    """Deterministic epoch/batch training loop; same seed, same bits out."""
    config.validate()
    if not queries:
        raise EmptyCorpus("no queries to train on")
    dim = raw_features.dim if raw_features is not None else (
        params.dim if params is not None else 64
    )
    if params is None:
        params = ModelParams.init(config.mode, dim, config.seed, config.temperature_init)
    cache = FeatureCache(pool, raw_features, params.dim)
    optimizer = Adam(lr=config.learning_rate)
    frozen = {"weights"} if config.freeze_weights else set()
    result = TrainResult(params=params)

    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(queries))
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            if len(chunk) < 2:
                continue
            batch_queries = [queries[i] for i in chunk]
            positives = [
                q.positives[int(rng.integers(len(q.positives)))] for q in batch_queries
            ]
            negatives: list[str] = []
            for q in batch_queries:
                negatives.extend(q.negatives)
            batch = build_batch(
                batch_queries, positives, negatives, cache, config.use_instructions, config.seed
            )
            loss, report, grads = forward_backward(params, batch)
            optimizer.step(params.groups(), grads, frozen)
            result.loss_curve.append(loss)
            result.reports.append(report)
    return result


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, arrays, config hash, CRC32
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"UNCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, params: ModelParams, config: TrainConfig) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<HBI", CHECKPOINT_VERSION, params.mode.value, params.dim)
    arrays = params.groups()
    buf += struct.pack("<B", len(arrays))
    for name in sorted(arrays):
        arr = np.atleast_2d(np.asarray(arrays[name], dtype=np.float64))
        encoded = name.encode("utf-8")
        buf += struct.pack("<B", len(encoded))
        buf += encoded
        buf += struct.pack("<II", arr.shape[0], arr.shape[1])
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    buf += config.canonical_hash()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(buf)


def load_checkpoint(path: str) -> tuple[ModelParams, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    body = raw[:-4]
    if zlib.crc32(body) != stored_crc:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    version, mode_val, dim = struct.unpack_from("<HBI", body, 4)
    if version != CHECKPOINT_VERSION:
        raise BadMagic(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<HBI")
    (n_arrays,) = struct.unpack_from("<B", body, offset)
    offset += 1
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<B", body, offset)
        offset += 1
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", body, offset)
        offset += 8
        count = rows * cols * 8
        arrays[name] = (
            np.frombuffer(body[offset : offset + count], dtype="<f8")
            .reshape(rows, cols)
            .copy()
        )
        offset += count
    config_hash = body[offset : offset + 32]
    mode = StoreMode(mode_val)
    params = ModelParams(
        mode=mode,
        dim=dim,
        text_proj=arrays["text_proj"],
        image_proj=arrays["image_proj"],
        fusion_proj=arrays.get("fusion_proj"),
        weights=arrays["weights"][0] if "weights" in arrays else np.ones(4),
        log_inv_temp=arrays["log_inv_temp"][0],
    )
    return params, config_hash
