#!/usr/bin/env python3
"""Times the compiled kernels against their numpy fallbacks.

Run from the repo root after building the extension:

    python3 bench/bench_kernels.py [--json out.json]

Each cell reports median wall time over repeated calls; speedup > 1 means the
compiled path is faster.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from unir import kernels


def median_time(fn, repeats=7):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return sorted(times)[len(times) // 2]


def bench_case(n, dim, rng):
    mat = rng.standard_normal((n, dim)).astype(np.float32)
    txt = rng.standard_normal((n, dim)).astype(np.float32)
    q = rng.standard_normal(dim).astype(np.float32)
    centroids = rng.standard_normal((max(4, n // 100), dim)).astype(np.float32)
    rows = []
    cases = [
        ("feature_scores", lambda: kernels.feature_scores(mat, q),
         lambda: kernels.numpy_feature_scores(mat, q)),
        ("pair_scores", lambda: kernels.pair_scores(mat, txt, q, 1.0, 1.0),
         lambda: kernels.numpy_pair_scores(mat, txt, q, 1.0, 1.0)),
        ("assign_nearest", lambda: kernels.assign_nearest(mat, centroids),
         lambda: kernels.numpy_assign_nearest(mat, centroids)),
    ]
    for name, fast, slow in cases:
        if kernels.HAVE_EXT:
            t_fast = median_time(fast)
        else:
            t_fast = float("nan")
        t_slow = median_time(slow)
        rows.append(
            {
                "kernel": name,
                "n": n,
                "dim": dim,
                "compiled_ms": t_fast * 1e3,
                "numpy_ms": t_slow * 1e3,
                "speedup": (t_slow / t_fast) if t_fast == t_fast else float("nan"),
            }
        )
    return rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--json", default=None, help="also write results as JSON")
    parser.add_argument("--sizes", default="2000,20000,100000")
    parser.add_argument("--dims", default="64,256,768")
    args = parser.parse_args()

    print(f"backend: {kernels.BACKEND} (extension built: {kernels.HAVE_EXT})")
    rng = np.random.default_rng(0)
    rows = []
    for n in (int(s) for s in args.sizes.split(",")):
        for dim in (int(d) for d in args.dims.split(",")):
            rows.extend(bench_case(n, dim, rng))

    header = f"{'kernel':<16}{'n':>8}{'dim':>6}{'compiled ms':>14}{'numpy ms':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row['kernel']:<16}{row['n']:>8}{row['dim']:>6}"
            f"{row['compiled_ms']:>14.3f}{row['numpy_ms']:>12.3f}{row['speedup']:>10.2f}"
        )
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
        print(f"wrote {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
