"""Pure-Python/numpy versions of the hot kernels.

Each function has the same signature and results as its counterpart in
``_kernels.pyx``; ``contramatch.kernels`` picks one at import time.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

COL_ID = 1
VAL_ID = 2
NUM_RESERVED = 3


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def hash_tokens(tokens: Sequence[str], vocab_size: int) -> np.ndarray:
    """Map tokens to ids; ``[COL]``/``[VAL]`` are reserved, the rest hash into [3, V)."""
    buckets = vocab_size - NUM_RESERVED
    out = np.empty(len(tokens), dtype=np.int64)
    for i, tok in enumerate(tokens):
        if tok == "[COL]":
            out[i] = COL_ID
        elif tok == "[VAL]":
            out[i] = VAL_ID
        else:
            out[i] = NUM_RESERVED + fnv1a_64(tok.encode("utf-8")) % buckets
    return out


def mean_pool(table: np.ndarray, ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    n = len(offsets) - 1
    out = np.zeros((n, table.shape[1]), dtype=np.float64)
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        if hi > lo:
            out[i] = table[ids[lo:hi]].sum(axis=0) / (hi - lo)
    return out


def scatter_mean_grad(
    grad_pooled: np.ndarray, inverse: np.ndarray, offsets: np.ndarray, num_rows: int
) -> np.ndarray:
    """Accumulate d(mean pool) into compact rows: ``out[inverse[k]] += grad[i] / len_i``."""
    out = np.zeros((num_rows, grad_pooled.shape[1]), dtype=np.float64)
    n = len(offsets) - 1
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        if hi > lo:
            g = grad_pooled[i] / (hi - lo)
            for k in range(lo, hi):
                out[inverse[k]] += g
    return out


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components(n: int, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Component label per node, numbered densely in order of first node appearance."""
    uf = UnionFind(n)
    for a, b in zip(src.tolist(), dst.tolist()):
        uf.union(a, b)
    labels = np.empty(n, dtype=np.int64)
    seen: dict[int, int] = {}
    for i in range(n):
        root = uf.find(i)
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    return labels
