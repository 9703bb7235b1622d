# cython: language_level=3
"""Compiled hot kernels. Semantics mirror ``_fallback.py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


def fnv1a_64(bytes data):
    cdef const unsigned char* p = data
    cdef Py_ssize_t i, n = len(data)
    cdef uint64_t h = FNV_OFFSET
    for i in range(n):
        h ^= p[i]
        h *= FNV_PRIME
    return h


def hash_tokens(tokens, Py_ssize_t vocab_size):
    cdef Py_ssize_t n = len(tokens), i, j, m
    cdef uint64_t buckets = vocab_size - 3
    cdef uint64_t h
    cdef bytes raw
    cdef const unsigned char* p
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[:] o = out
    for i in range(n):
        tok = tokens[i]
        if tok == "[COL]":
            o[i] = 1
        elif tok == "[VAL]":
            o[i] = 2
        else:
            raw = (<str>tok).encode("utf-8")
            p = raw
            m = len(raw)
            h = FNV_OFFSET
            for j in range(m):
                h ^= p[j]
                h *= FNV_PRIME
            o[i] = <int64_t>(3 + h % buckets)
    return out


def mean_pool(const double[:, :] table, const int64_t[:] ids, const int64_t[:] offsets):
    cdef Py_ssize_t n = offsets.shape[0] - 1, d = table.shape[1]
    cdef Py_ssize_t i, k, c, lo, hi
    cdef double inv
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, :] o = out
    with nogil:
        for i in range(n):
            lo = offsets[i]
            hi = offsets[i + 1]
            if hi <= lo:
                continue
            for k in range(lo, hi):
                for c in range(d):
                    o[i, c] += table[ids[k], c]
            inv = 1.0 / (hi - lo)
            for c in range(d):
                o[i, c] *= inv
    return out


def scatter_mean_grad(const double[:, :] grad_pooled, const int64_t[:] inverse,
                      const int64_t[:] offsets, Py_ssize_t num_rows):
    cdef Py_ssize_t n = offsets.shape[0] - 1, d = grad_pooled.shape[1]
    cdef Py_ssize_t i, k, c, lo, hi, r
    cdef double inv
    out = np.zeros((num_rows, d), dtype=np.float64)
    cdef double[:, :] o = out
    with nogil:
        for i in range(n):
            lo = offsets[i]
            hi = offsets[i + 1]
            if hi <= lo:
                continue
            inv = 1.0 / (hi - lo)
            for k in range(lo, hi):
                r = inverse[k]
                for c in range(d):
                    o[r, c] += grad_pooled[i, c] * inv
    return out


cdef Py_ssize_t _find(int64_t[:] parent, Py_ssize_t x) noexcept nogil:
    cdef Py_ssize_t root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


def connected_components(Py_ssize_t n, const int64_t[:] src, const int64_t[:] dst):
    parent_arr = np.arange(n, dtype=np.int64)
    size_arr = np.ones(n, dtype=np.int64)
    root_label = np.full(n, -1, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    cdef int64_t[:] parent = parent_arr
    cdef int64_t[:] size = size_arr
    cdef int64_t[:] rl = root_label
    cdef int64_t[:] lab = labels
    cdef Py_ssize_t e, a, b, i, r
    cdef int64_t nxt_label = 0
    with nogil:
        for e in range(src.shape[0]):
            a = _find(parent, src[e])
            b = _find(parent, dst[e])
            if a == b:
                continue
            if size[a] < size[b]:
                a, b = b, a
            parent[b] = a
            size[a] += size[b]
        for i in range(n):
            r = _find(parent, i)
            if rl[r] < 0:
                rl[r] = nxt_label
                nxt_label += 1
            lab[i] = rl[r]
    return labels
