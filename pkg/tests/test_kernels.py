import numpy as np
import pytest

from unir import kernels


@pytest.fixture
def arrays():
    rng = np.random.default_rng(0)
    mat = rng.standard_normal((500, 48)).astype(np.float32)
    txt = rng.standard_normal((500, 48)).astype(np.float32)
    q = rng.standard_normal(48).astype(np.float32)
    centroids = rng.standard_normal((7, 48)).astype(np.float32) * 3.0
    return mat, txt, q, centroids


def test_feature_scores_matches_fallback(arrays):
    mat, _, q, _ = arrays
    fast = kernels.feature_scores(mat, q)
    slow = kernels.numpy_feature_scores(mat, q)
    assert fast.dtype == np.float64
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)


def test_pair_scores_matches_fallback(arrays):
    mat, txt, q, _ = arrays
    fast = kernels.pair_scores(mat, txt, q, 1.7, -0.3)
    slow = kernels.numpy_pair_scores(mat, txt, q, 1.7, -0.3)
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)


def test_assign_nearest_matches_fallback(arrays):
    mat, _, _, centroids = arrays
    fast_assign, fast_d = kernels.assign_nearest(mat, centroids)
    slow_assign, slow_d = kernels.numpy_assign_nearest(mat, centroids)
    assert np.array_equal(fast_assign, slow_assign)
    np.testing.assert_allclose(fast_d, slow_d, rtol=1e-9, atol=1e-9)


def test_empty_inputs():
    mat = np.zeros((0, 8), dtype=np.float32)
    q = np.zeros(8, dtype=np.float32)
    assert len(kernels.feature_scores(mat, q)) == 0
    assign, dists = kernels.assign_nearest(mat, np.zeros((1, 8), dtype=np.float32))
    assert len(assign) == 0 and len(dists) == 0


def test_scores_accumulate_in_f64():
    # Values chosen so f32 accumulation would lose the small term entirely.
    mat = np.array([[3e7, 1.0, -3e7]], dtype=np.float32)
    q = np.array([1.0, 1.0, 1.0], dtype=np.float32)
    out = kernels.feature_scores(mat, q)
    assert out[0] == 1.0


def test_non_contiguous_inputs_accepted():
    rng = np.random.default_rng(1)
    big = rng.standard_normal((40, 16)).astype(np.float32)
    view = big[::2]
    q = rng.standard_normal(16).astype(np.float32)
    np.testing.assert_allclose(
        kernels.feature_scores(view, q),
        kernels.numpy_feature_scores(np.ascontiguousarray(view), q),
        rtol=1e-12,
    )


def test_backend_is_reported():
    import os

    assert kernels.BACKEND in ("cython", "python")
    forced = os.environ.get("UNIR_KERNEL", "").strip().lower()
    if forced:
        assert kernels.BACKEND == forced
    elif kernels.HAVE_EXT:
        assert kernels.BACKEND == "cython"
