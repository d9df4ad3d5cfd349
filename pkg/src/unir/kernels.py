"""Scoring and assignment kernels with a compiled fast path.

The compiled extension (unir._kernels) is used when importable; otherwise the
numpy fallbacks below take over. Both paths accumulate in f64 over f32 rows.
Set UNIR_KERNEL=python or UNIR_KERNEL=cython to force a backend; forcing
cython when the extension is missing raises at import time.

The selected backend is fixed for the lifetime of the process, so results are
reproducible within a build. bench/bench_kernels.py compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from unir import _kernels as _ext
except ImportError:
    _ext = None


def _numpy_feature_scores(mat: np.ndarray, q: np.ndarray) -> np.ndarray:
    return mat.astype(np.float64) @ q.astype(np.float64)


def _numpy_pair_scores(
    img: np.ndarray, txt: np.ndarray, q: np.ndarray, wi: float, wt: float
) -> np.ndarray:
    q64 = q.astype(np.float64)
    return wi * (img.astype(np.float64) @ q64) + wt * (txt.astype(np.float64) @ q64)


def _numpy_assign_nearest(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x64 = x.astype(np.float64)
    c64 = centroids.astype(np.float64)
    assign = np.empty(len(x64), dtype=np.int64)
    dists = np.empty(len(x64), dtype=np.float64)
    # Chunked |x - c|^2 keeps the (chunk, k, dim) temporary small.
    chunk = max(1, 4_000_000 // max(1, c64.size))
    for start in range(0, len(x64), chunk):
        block = x64[start : start + chunk]
        diff = block[:, None, :] - c64[None, :, :]
        d2 = np.einsum("ikd,ikd->ik", diff, diff)
        assign[start : start + chunk] = np.argmin(d2, axis=1)
        dists[start : start + chunk] = d2[np.arange(len(block)), assign[start : start + chunk]]
    return assign, dists


def _select_backend() -> str:
    forced = os.environ.get("UNIR_KERNEL", "").strip().lower()
    if forced == "python":
        return "python"
    if forced == "cython":
        if _ext is None:
            raise ImportError("UNIR_KERNEL=cython but unir._kernels is not built")
        return "cython"
    return "cython" if _ext is not None else "python"


BACKEND = _select_backend()

if BACKEND == "cython":
    def feature_scores(mat: np.ndarray, q: np.ndarray) -> np.ndarray:
        return _ext.feature_scores(np.ascontiguousarray(mat), np.ascontiguousarray(q))

    def pair_scores(img, txt, q, wi: float, wt: float) -> np.ndarray:
        return _ext.pair_scores(
            np.ascontiguousarray(img), np.ascontiguousarray(txt),
            np.ascontiguousarray(q), float(wi), float(wt),
        )

    def assign_nearest(x: np.ndarray, centroids: np.ndarray):
        return _ext.assign_nearest(np.ascontiguousarray(x), np.ascontiguousarray(centroids))
else:
    feature_scores = _numpy_feature_scores
    pair_scores = _numpy_pair_scores
    assign_nearest = _numpy_assign_nearest

# The fallbacks stay importable under their own names for parity tests and
# the kernel benchmark.
numpy_feature_scores = _numpy_feature_scores
numpy_pair_scores = _numpy_pair_scores
numpy_assign_nearest = _numpy_assign_nearest
HAVE_EXT = _ext is not None
