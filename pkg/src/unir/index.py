"""Exact and clustered (inverted-list) maximum-inner-product retrieval.

The retrieval pipeline is two-step: embed everything into an EmbeddingStore,
then search it. Flat search scores every row; the clustered index k-means
partitions rows and scans only the probed lists. Both return results under
the total order (score descending, id ascending) so outputs are exactly
reproducible and ties never depend on memory layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from unir import kernels
from unir.errors import DimMismatch, ModeMismatch, TooFewRows
from unir.fusion import (
    FeatureFusionEmbedding,
    FusionWeights,
    ScoreFusionEmbedding,
    fuse_score_level,
)
from unir.store import EmbeddingStore, StoreMode, read_embeddings

Query = ScoreFusionEmbedding | FeatureFusionEmbedding


@dataclass
class RetrievalResult:
    """Ranked (did, score) entries, best first; at most k of them."""

    entries: list[tuple[str, float]]

    def ids(self) -> list[str]:
        return [did for did, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class FlatIndex:
    store: EmbeddingStore
    weights: FusionWeights = field(default_factory=FusionWeights)

    def __post_init__(self):
        w = self.weights.as_array()
        if not np.all(np.isfinite(w)):
            raise ValueError("fusion weights must be finite")
        self._ids_arr = np.asarray(self.store.ids, dtype=object)

    def _check_query(self, query: Query) -> None:
        expected = StoreMode.FEATURE if isinstance(query, FeatureFusionEmbedding) else StoreMode.SCORE
        if self.store.mode is not expected:
            raise ModeMismatch(
                f"{expected.name.lower()}-fusion query against a "
                f"{self.store.mode.name.lower()}-fusion store"
            )
        if query.dim != self.store.dim:
            raise DimMismatch(f"query dim {query.dim} != store dim {self.store.dim}")

    def probe_vector(self, query: Query) -> np.ndarray:
        """Single f32 vector standing in for the query (clustered probing)."""
        self._check_query(query)
        if isinstance(query, FeatureFusionEmbedding):
            return query.fused_vec.astype(np.float32)
        return fuse_score_level(query, self.weights.w1, self.weights.w2)

    def scores(self, query: Query) -> np.ndarray:
        """f64 similarity of the query against every row, in store order."""
        return self._score_rows(query, None)

    def _score_rows(self, query: Query, rows: np.ndarray | None) -> np.ndarray:
        self._check_query(query)
        if self.store.mode is StoreMode.FEATURE:
            mat = self.store.feature if rows is None else self.store.feature[rows]
            return kernels.feature_scores(mat, query.fused_vec.astype(np.float32))
        # Four-term score, factored as the query's image and text parts each
        # against both candidate matrices; weights can change without re-indexing.
        img = self.store.image if rows is None else self.store.image[rows]
        txt = self.store.text if rows is None else self.store.text[rows]
        w = self.weights
        total = np.zeros(len(img), dtype=np.float64)
        if query.image_vec is not None:
            total += kernels.pair_scores(
                img, txt, query.image_vec.astype(np.float32), w.w1 * w.w3, w.w1 * w.w4
            )
        if query.text_vec is not None:
            total += kernels.pair_scores(
                img, txt, query.text_vec.astype(np.float32), w.w2 * w.w3, w.w2 * w.w4
            )
        return total


def build_flat(store: EmbeddingStore, weights: FusionWeights | None = None) -> FlatIndex:
    return FlatIndex(store=store, weights=weights or FusionWeights())


def _top_k(scores: np.ndarray, ids: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k under (score desc, id asc), via partition + tie repair."""
    n = len(scores)
    k_eff = min(k, n)
    if k_eff == 0:
        return []
    if k_eff < n:
        part = np.argpartition(-scores, k_eff - 1)[:k_eff]
        threshold = scores[part].min()
        above = np.flatnonzero(scores > threshold)
        tied = np.flatnonzero(scores == threshold)
        need = k_eff - len(above)
        if need < len(tied):
            tied = tied[np.argsort(ids[tied].astype(str))[:need]]
        chosen = np.concatenate([above, tied])
    else:
        chosen = np.arange(n)
    order = np.lexsort((ids[chosen].astype(str), -scores[chosen]))
    return [(str(ids[chosen[i]]), float(scores[chosen[i]])) for i in order]


def search_flat(index: FlatIndex, query: Query, k: int) -> RetrievalResult:
    """Exhaustive exact top-k search."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = index.scores(query)
    return RetrievalResult(_top_k(scores, index._ids_arr, k))


@dataclass
class ClusteredIndex:
    flat: FlatIndex
    n_lists: int
    centroids: np.ndarray
    assignments: np.ndarray
    seed: int
    inertia_curve: list[float] = field(default_factory=list, repr=False)
    lists: list[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.lists is None:
            self.lists = [
                np.flatnonzero(self.assignments == c) for c in range(self.n_lists)
            ]

    @property
    def store(self) -> EmbeddingStore:
        return self.flat.store


def _candidate_matrix(flat: FlatIndex) -> np.ndarray:
    """Rows the clustering runs on: fused vectors in score mode."""
    store = flat.store
    if store.mode is StoreMode.FEATURE:
        return store.feature
    w = flat.weights
    return (
        w.w3 * store.image.astype(np.float64) + w.w4 * store.text.astype(np.float64)
    ).astype(np.float32)


def _kmeans_pp_seed(data: np.ndarray, n_lists: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    data64 = data.astype(np.float64)
    centroids = np.empty((n_lists, data.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = data64[first]
    d2 = np.sum((data64 - centroids[0]) ** 2, axis=1)
    for c in range(1, n_lists):
        total = d2.sum()
        if total <= 0.0:
            # All remaining points coincide with a centroid; spread deterministically.
            idx = int(np.argmin(d2))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[c] = data64[idx]
        d2 = np.minimum(d2, np.sum((data64 - centroids[c]) ** 2, axis=1))
    return centroids


def build_clustered(
    store: EmbeddingStore,
    n_lists: int,
    seed: int,
    max_iters: int = 25,
    weights: FusionWeights | None = None,
) -> ClusteredIndex:
    """K-means inverted lists with k-means++ seeding; deterministic per seed."""
    flat = build_flat(store, weights)
    n = len(store)
    if n_lists < 1 or n_lists > n:
        raise TooFewRows(f"n_lists={n_lists} with {n} rows")
    data = np.ascontiguousarray(_candidate_matrix(flat))
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_seed(data, n_lists, rng).astype(np.float32)
    assign, dists = kernels.assign_nearest(data, centroids)
    inertia_curve = [float(dists.sum())]
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        for c in range(n_lists):
            members = np.flatnonzero(assign == c)
            if len(members):
                new_centroids[c] = (
                    data[members].astype(np.float64).mean(axis=0).astype(np.float32)
                )
        new_assign, dists = kernels.assign_nearest(data, new_centroids)
        inertia_curve.append(float(dists.sum()))
        converged = np.array_equal(new_assign, assign)
        centroids, assign = new_centroids, new_assign
        if converged:
            break
    return ClusteredIndex(
        flat=flat,
        n_lists=n_lists,
        centroids=centroids,
        assignments=assign,
        seed=seed,
        inertia_curve=inertia_curve,
    )


def search_clustered(index: ClusteredIndex, query: Query, k: int, n_probe: int) -> RetrievalResult:
    """Scan only the n_probe lists whose centroids score highest for the query."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 1 <= n_probe <= index.n_lists:
        raise ValueError(f"n_probe={n_probe} outside [1, {index.n_lists}]")
    qvec = index.flat.probe_vector(query)
    affinity = index.centroids.astype(np.float64) @ qvec.astype(np.float64)
    probe_order = np.lexsort((np.arange(index.n_lists), -affinity))[:n_probe]
    rows = np.concatenate([index.lists[c] for c in probe_order])
    if len(rows) == 0:
        return RetrievalResult([])
    rows = np.sort(rows)
    scores = index.flat._score_rows(query, rows)
    return RetrievalResult(_top_k(scores, index.flat._ids_arr[rows], k))


# ---------------------------------------------------------------------------
# Index persistence: JSON manifest + npz arrays next to the embedding file
# ---------------------------------------------------------------------------

def save_index(path: str, embeddings_path: str, weights: FusionWeights,
               clustered: ClusteredIndex | None = None) -> None:
    manifest = {
        "type": "clustered" if clustered is not None else "flat",
        "embeddings": os.path.relpath(embeddings_path, os.path.dirname(path) or "."),
        "weights": [weights.w1, weights.w2, weights.w3, weights.w4],
    }
    if clustered is not None:
        arrays_path = path + ".npz"
        np.savez(
            arrays_path,
            centroids=clustered.centroids,
            assignments=clustered.assignments,
            n_lists=np.int64(clustered.n_lists),
            seed=np.uint64(clustered.seed),
        )
        manifest["arrays"] = os.path.basename(arrays_path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_index(path: str) -> tuple[EmbeddingStore, FlatIndex | ClusteredIndex]:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(path) or "."
    store = read_embeddings(os.path.join(base, manifest["embeddings"]))
    weights = FusionWeights.from_array(manifest.get("weights", [1.0, 1.0, 1.0, 1.0]))
    flat = build_flat(store, weights)
    if manifest["type"] == "flat":
        return store, flat
    arrays = np.load(os.path.join(base, manifest["arrays"]))
    clustered = ClusteredIndex(
        flat=flat,
        n_lists=int(arrays["n_lists"]),
        centroids=arrays["centroids"].astype(np.float32),
        assignments=arrays["assignments"].astype(np.int64),
        seed=int(arrays["seed"]),
    )
    return store, clustered
