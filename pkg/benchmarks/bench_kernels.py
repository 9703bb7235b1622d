"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0] [--json out.json]

Each kernel runs on the same inputs in both backends; outputs are checked
for agreement before timing. Reports the best of ``--repeat`` runs.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from contramatch import _fallback as py

try:
    from contramatch import _kernels as cy
except ImportError:
    cy = None


def make_inputs(scale: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    n_seq = max(1, int(512 * scale))
    lengths = rng.integers(5, 60, size=n_seq)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    vocab, dim = 32768, 64
    table = rng.normal(size=(vocab, dim))
    ids = rng.integers(0, vocab, size=int(offsets[-1])).astype(np.int64)
    rows, inverse = np.unique(ids, return_inverse=True)
    grad = rng.normal(size=(n_seq, dim))
    words = [f"tok{int(i)}" for i in rng.integers(0, 50000, size=int(20000 * scale))]
    n_nodes = int(20000 * scale)
    src = rng.integers(0, n_nodes, size=n_nodes // 2).astype(np.int64)
    dst = rng.integers(0, n_nodes, size=n_nodes // 2).astype(np.int64)
    return {
        "hash_tokens": ((words, vocab), {}),
        "mean_pool": ((table, ids, offsets), {}),
        "scatter_mean_grad": ((grad, inverse.astype(np.int64), offsets, len(rows)), {}),
        "connected_components": ((n_nodes, src, dst), {}),
    }


def check(name, a, b):
    if name == "hash_tokens" or name == "connected_components":
        return bool(np.array_equal(a, b))
    return bool(np.allclose(a, b, rtol=0, atol=1e-12))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies input sizes")
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)

    if cy is None:
        print("compiled extension not built; only the fallback can run", file=sys.stderr)
    inputs = make_inputs(args.scale)
    results = []
    print(f"{'kernel':22s} {'python (s)':>11s} {'cython (s)':>11s} {'speedup':>8s}  agree")
    for name, (pos, kw) in inputs.items():
        fn_py = getattr(py, name)
        t_py = min(timeit.repeat(lambda: fn_py(*pos, **kw), number=1, repeat=args.repeat))
        row = {"kernel": name, "python_s": t_py}
        if cy is not None:
            fn_cy = getattr(cy, name)
            agree = check(name, fn_py(*pos, **kw), fn_cy(*pos, **kw))
            t_cy = min(timeit.repeat(lambda: fn_cy(*pos, **kw), number=1, repeat=args.repeat))
            row.update(cython_s=t_cy, speedup=t_py / t_cy, agree=agree)
            print(f"{name:22s} {t_py:11.5f} {t_cy:11.5f} {t_py / t_cy:7.1f}x  {agree}")
        else:
            print(f"{name:22s} {t_py:11.5f} {'-':>11s} {'-':>8s}  -")
        results.append(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0 if all(r.get("agree", True) for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
