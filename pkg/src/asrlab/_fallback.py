"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Accumulation order matches the compiled loops exactly, so the two backends
agree bit for bit. Keep them in sync when editing either file.
"""

import math

import numpy as np


def _uniform_pick(count, u):
    k = int(math.floor(u * count))
    return min(k, count - 1)


def _kth_valid(valid_row, k):
    return int(np.flatnonzero(valid_row)[k])


def select_weighted(weights, valid, u):
    n = weights.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        idx = np.flatnonzero(valid[i])
        if idx.size == 0:
            continue
        w = weights[i, idx]
        total = 0.0
        for x in w:
            total = total + float(x)
        if not total > 0.0:
            out[i] = _kth_valid(valid[i], _uniform_pick(idx.size, u[i]))
            continue
        target = u[i] * total
        acc = 0.0
        chosen = -1
        for j, x in zip(idx, w):
            acc = acc + float(x)
            if x > 0.0:
                chosen = j
                if target < acc:
                    break
        out[i] = chosen
    return out


def select_binned(bins, valid, bin_weights, u_bin, u_pick):
    n = bins.shape[0]
    nb = bin_weights.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        mask = valid[i].astype(bool)
        nvalid = int(mask.sum())
        if nvalid == 0:
            continue
        counts = np.bincount(bins[i][mask], minlength=nb)
        total = 0.0
        for b in range(nb):
            if counts[b] > 0:
                total = total + float(bin_weights[b])
        if not total > 0.0:
            out[i] = _kth_valid(valid[i], _uniform_pick(nvalid, u_pick[i]))
            continue
        target = u_bin[i] * total
        acc = 0.0
        chosen_bin = -1
        for b in range(nb):
            if counts[b] > 0 and bin_weights[b] > 0.0:
                acc = acc + float(bin_weights[b])
                chosen_bin = b
                if target < acc:
                    break
        k = _uniform_pick(int(counts[chosen_bin]), u_pick[i])
        members = np.flatnonzero(mask & (bins[i] == chosen_bin))
        out[i] = members[k]
    return out


def select_semihard(d_an, d_ap, valid, gamma, u):
    n = d_an.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        mask = valid[i].astype(bool)
        nvalid = int(mask.sum())
        if nvalid == 0:
            continue
        lo = d_ap[i]
        hi = d_ap[i] + gamma
        row = d_an[i]
        band = np.flatnonzero(mask & (row > lo) & (row < hi))
        if band.size:
            out[i] = band[_uniform_pick(band.size, u[i])]
            continue
        beyond = np.flatnonzero(mask & (row > lo))
        if beyond.size:
            # argmin returns the first minimum, i.e. the lowest index on ties
            out[i] = beyond[np.argmin(row[beyond])]
        else:
            out[i] = _kth_valid(valid[i], _uniform_pick(nvalid, u[i]))
    return out


def knn_hit_counts(dist, labels, ks):
    n = dist.shape[0]
    kmax = int(max(ks))
    hits = np.zeros(len(ks), dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        # lexsort: last key is primary, so distance first then index
        order = others[np.lexsort((others, dist[i, others]))][:kmax]
        same = labels[order] == labels[i]
        for q, k in enumerate(ks):
            if same[:k].any():
                hits[q] += 1
    return hits
