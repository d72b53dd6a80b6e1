# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled selection kernels.

Every routine here has a line-for-line twin in ``_fallback.py``. Random
numbers are always supplied by the caller so both backends return identical
indices for identical inputs.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline Py_ssize_t _kth_valid(const unsigned char[:] valid, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t j, seen = 0
    for j in range(valid.shape[0]):
        if valid[j]:
            if seen == k:
                return j
            seen += 1
    return -1


cdef inline Py_ssize_t _uniform_pick(Py_ssize_t count, double u) noexcept nogil:
    cdef Py_ssize_t k = <Py_ssize_t>floor(u * count)
    if k >= count:
        k = count - 1
    return k


def select_weighted(const double[:, :] weights, const unsigned char[:, :] valid,
                    const double[:] u):
    cdef Py_ssize_t n = weights.shape[0], m = weights.shape[1]
    cdef Py_ssize_t i, j, nvalid, chosen
    cdef double total, acc, target
    out = np.full(n, -1, dtype=np.int64)
    cdef long long[:] res = out
    with nogil:
        for i in range(n):
            nvalid = 0
            total = 0.0
            for j in range(m):
                if valid[i, j]:
                    nvalid += 1
                    total = total + weights[i, j]
            if nvalid == 0:
                continue
            if not (total > 0.0):
                res[i] = _kth_valid(valid[i], _uniform_pick(nvalid, u[i]))
                continue
            target = u[i] * total
            acc = 0.0
            chosen = -1
            for j in range(m):
                if valid[i, j]:
                    acc = acc + weights[i, j]
                    if weights[i, j] > 0.0:
                        chosen = j
                        if target < acc:
                            break
            res[i] = chosen
    return out


def select_binned(const long long[:, :] bins, const unsigned char[:, :] valid,
                  const double[:] bin_weights, const double[:] u_bin,
                  const double[:] u_pick):
    cdef Py_ssize_t n = bins.shape[0], m = bins.shape[1], nb = bin_weights.shape[0]
    cdef Py_ssize_t i, j, b, nvalid, chosen_bin, k, seen
    cdef double total, acc, target
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts_arr = np.zeros(nb, dtype=np.int64)
    cdef long long[:] counts = counts_arr
    out = np.full(n, -1, dtype=np.int64)
    cdef long long[:] res = out
    with nogil:
        for i in range(n):
            for b in range(nb):
                counts[b] = 0
            nvalid = 0
            for j in range(m):
                if valid[i, j]:
                    counts[bins[i, j]] += 1
                    nvalid += 1
            if nvalid == 0:
                continue
            total = 0.0
            for b in range(nb):
                if counts[b] > 0:
                    total = total + bin_weights[b]
            if not (total > 0.0):
                res[i] = _kth_valid(valid[i], _uniform_pick(nvalid, u_pick[i]))
                continue
            target = u_bin[i] * total
            acc = 0.0
            chosen_bin = -1
            for b in range(nb):
                if counts[b] > 0 and bin_weights[b] > 0.0:
                    acc = acc + bin_weights[b]
                    chosen_bin = b
                    if target < acc:
                        break
            k = _uniform_pick(counts[chosen_bin], u_pick[i])
            seen = 0
            for j in range(m):
                if valid[i, j] and bins[i, j] == chosen_bin:
                    if seen == k:
                        res[i] = j
                        break
                    seen += 1
    return out


def select_semihard(const double[:, :] d_an, const double[:] d_ap,
                    const unsigned char[:, :] valid, double gamma,
                    const double[:] u):
    cdef Py_ssize_t n = d_an.shape[0], m = d_an.shape[1]
    cdef Py_ssize_t i, j, nvalid, nband, best, k, seen
    cdef double d, lo, hi, best_d
    out = np.full(n, -1, dtype=np.int64)
    cdef long long[:] res = out
    with nogil:
        for i in range(n):
            lo = d_ap[i]
            hi = d_ap[i] + gamma
            nvalid = 0
            nband = 0
            best = -1
            best_d = 0.0
            for j in range(m):
                if valid[i, j]:
                    nvalid += 1
                    d = d_an[i, j]
                    if d > lo:
                        if d < hi:
                            nband += 1
                        if best < 0 or d < best_d:
                            best = j
                            best_d = d
            if nvalid == 0:
                continue
            if nband > 0:
                k = _uniform_pick(nband, u[i])
                seen = 0
                for j in range(m):
                    if valid[i, j] and d_an[i, j] > lo and d_an[i, j] < hi:
                        if seen == k:
                            res[i] = j
                            break
                        seen += 1
            elif best >= 0:
                res[i] = best
            else:
                res[i] = _kth_valid(valid[i], _uniform_pick(nvalid, u[i]))
    return out


def knn_hit_counts(const double[:, :] dist, const long long[:] labels,
                   const long long[:] ks):
    cdef Py_ssize_t n = dist.shape[0], nk = ks.shape[0]
    cdef Py_ssize_t i, j, r, q, kmax = 0, filled
    cdef double d
    for q in range(nk):
        if ks[q] > kmax:
            kmax = ks[q]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] top_d_arr = np.empty(kmax, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] top_i_arr = np.empty(kmax, dtype=np.int64)
    cdef double[:] top_d = top_d_arr
    cdef long long[:] top_i = top_i_arr
    hits_arr = np.zeros(nk, dtype=np.int64)
    cdef long long[:] hits = hits_arr
    with nogil:
        for i in range(n):
            filled = 0
            for j in range(n):
                if j == i:
                    continue
                d = dist[i, j]
                # scanning j in increasing order makes strict < an index tie-break
                if filled == kmax and not (d < top_d[kmax - 1]):
                    continue
                r = filled if filled < kmax else kmax - 1
                while r > 0 and d < top_d[r - 1]:
                    if r < kmax:
                        top_d[r] = top_d[r - 1]
                        top_i[r] = top_i[r - 1]
                    r -= 1
                top_d[r] = d
                top_i[r] = j
                if filled < kmax:
                    filled += 1
            for q in range(nk):
                for r in range(ks[q]):
                    if r < filled and labels[top_i[r]] == labels[i]:
                        hits[q] += 1
                        break
    return hits_arr
