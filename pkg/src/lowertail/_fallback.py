"""Pure numpy versions of the compiled kernels.

Same signatures and bit-identical outputs as ``_kernels``. Batch queries use
chunked brute force; single ball queries walk the grid like the compiled code.
"""
import itertools
import math

import numpy as np

_CHUNK = 1 << 21


def _dist_block(q, x):
    """Torus distances between rows of q and rows of x, summed axis by axis."""
    s = None
    for i in range(q.shape[1]):
        t = np.abs(q[:, None, i] - x[None, :, i])
        t = np.minimum(t, 1.0 - t)
        s = t * t if s is None else s + t * t
    if s is None:
        return np.zeros((q.shape[0], x.shape[0]))
    return np.sqrt(s)


def _chunks(nq, nx):
    step = max(1, _CHUNK // max(nx, 1))
    for lo in range(0, nq, step):
        yield lo, min(nq, lo + step)


def _cells(coords, G):
    c = (coords * G).astype(np.int64)
    return np.clip(c, 0, G - 1)


def build_grid(coords, G):
    N, d = coords.shape
    flat = np.zeros(N, dtype=np.int64)
    cells = _cells(coords, G)
    for i in range(d):
        flat = flat * G + cells[:, i]
    counts = np.bincount(flat, minlength=G**d)
    start = np.zeros(G**d + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    order = np.argsort(flat, kind="stable").astype(np.int64)
    return order, start


def ball_query(coords, G, order, start, center, r):
    d = coords.shape[1]
    center = np.asarray(center, dtype=np.float64)
    if r * G + 2.0 >= G:
        m = G
    else:
        m = int(math.ceil(r * G)) + 1
    axes = []
    for i in range(d):
        if 2 * m + 1 >= G:
            axes.append(range(G))
        else:
            c = min(max(int(center[i] * G), 0), G - 1)
            axes.append([(c + o) % G for o in range(-m, m + 1)])
    cand = []
    for cell in itertools.product(*axes):
        flat = 0
        for c in cell:
            flat = flat * G + c
        cand.extend(order[start[flat]:start[flat + 1]])
    cand = np.asarray(cand, dtype=np.int64)
    if cand.size == 0:
        return cand
    dist = _dist_block(center[None, :], coords[cand])[0]
    return np.sort(cand[dist <= r])


def ball_counts(coords, G, order, start, centers, r):
    out = np.zeros(centers.shape[0], dtype=np.int64)
    if coords.shape[0] == 0:
        return out
    for lo, hi in _chunks(centers.shape[0], coords.shape[0]):
        out[lo:hi] = (_dist_block(centers[lo:hi], coords) <= r).sum(axis=1)
    return out


def pairs_within(coords, G, order, start, r):
    N = coords.shape[0]
    left, right, dist = [], [], []
    for lo, hi in _chunks(N, N):
        D = _dist_block(coords[lo:hi], coords)
        ii, jj = np.nonzero(D <= r)
        keep = jj > ii + lo
        left.append(ii[keep] + lo)
        right.append(jj[keep])
        dist.append(D[ii[keep], jj[keep]])
    if not left:
        return np.empty((0, 2), dtype=np.int64), np.empty(0)
    pairs = np.stack([np.concatenate(left), np.concatenate(right)], axis=1).astype(np.int64)
    dists = np.concatenate(dist)
    idx = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[idx], dists[idx]


def knn_dists(coords, G, order, start, queries, k, exclude_coincident):
    Q = queries.shape[0]
    out = np.full((Q, max(k, 0)), np.inf)
    if coords.shape[0] == 0 or k <= 0:
        return out
    for lo, hi in _chunks(Q, coords.shape[0]):
        D = _dist_block(queries[lo:hi], coords)
        if exclude_coincident:
            D[D == 0.0] = np.inf
        kk = min(k, D.shape[1])
        part = np.partition(D, kk - 1, axis=1)[:, :kk] if kk < D.shape[1] else D
        out[lo:hi, :kk] = np.sort(part, axis=1)[:, :kk]
    return out


def component_labels(N, pairs):
    parent = list(range(N))
    size = [1] * N

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        a, b = find(int(a)), find(int(b))
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    labels = np.full(N, -1, dtype=np.int64)
    nxt = 0
    for i in range(N):
        a = find(i)
        if labels[a] < 0:
            labels[a] = nxt
            nxt += 1
        labels[i] = labels[a]
    return labels
