# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled grid kernels on the unit torus.

Every function mirrors one in ``_fallback`` with the same signature and
bit-identical results. Distances are accumulated axis by axis in index order
so that both backends round the same way.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt, INFINITY
from libc.stdint cimport int64_t
from libcpp.vector cimport vector

cnp.import_array()


cdef inline double _dist2(const double* a, const double* b, int d) noexcept nogil:
    cdef double s = 0.0, t, u
    cdef int i
    for i in range(d):
        t = fabs(a[i] - b[i])
        u = 1.0 - t
        if u < t:
            t = u
        s += t * t
    return s


cdef inline double _dist(const double* a, const double* b, int d) noexcept nogil:
    return sqrt(_dist2(a, b, d))


cdef inline int64_t _cell(double x, int64_t G) noexcept nogil:
    cdef int64_t c = <int64_t>(x * G)
    if c >= G:
        c = G - 1
    if c < 0:
        c = 0
    return c


cdef struct Scan:
    int d
    int64_t G
    int64_t lo[8]
    int64_t cnt[8]
    int64_t ctr[8]


cdef bint _scan_init(Scan* sc, const double* q, double r, int d, int64_t G) noexcept nogil:
    """Set up the block of cells covering the closed ball; True if it spans the torus."""
    cdef int64_t lo, hi
    cdef int i
    cdef bint full = True
    sc.d = d
    sc.G = G
    for i in range(d):
        sc.ctr[i] = 0
        if 2.0 * r * G + 3.0 >= G:
            sc.lo[i] = 0
            sc.cnt[i] = G
            continue
        # the slack absorbs rounding in x * G for points on a cell edge
        lo = <int64_t>floor((q[i] - r) * G - 1e-7)
        hi = <int64_t>floor((q[i] + r) * G + 1e-7)
        if hi - lo + 1 >= G:
            sc.lo[i] = 0
            sc.cnt[i] = G
        else:
            sc.lo[i] = lo + 2 * G
            sc.cnt[i] = hi - lo + 1
            full = False
    return full


cdef inline int64_t _scan_flat(Scan* sc) noexcept nogil:
    cdef int64_t flat = 0
    cdef int i
    for i in range(sc.d):
        flat = flat * sc.G + (sc.lo[i] + sc.ctr[i]) % sc.G
    return flat


cdef inline bint _scan_next(Scan* sc) noexcept nogil:
    cdef int i = sc.d - 1
    while i >= 0:
        sc.ctr[i] += 1
        if sc.ctr[i] < sc.cnt[i]:
            return True
        sc.ctr[i] = 0
        i -= 1
    return False


def build_grid(const double[:, ::1] coords, int64_t G):
    """Bucket points by cell. Returns (order, start) in CSR form."""
    cdef Py_ssize_t N = coords.shape[0], p
    cdef int d = coords.shape[1], i
    cdef int64_t ncell = G ** d, flat
    cdef cnp.ndarray[int64_t, ndim=1] cells = np.empty(N, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] start = np.zeros(ncell + 1, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] order = np.empty(N, dtype=np.int64)
    cdef int64_t[::1] cv = cells, sv = start, ov = order
    with nogil:
        for p in range(N):
            flat = 0
            for i in range(d):
                flat = flat * G + _cell(coords[p, i], G)
            cv[p] = flat
            sv[flat + 1] += 1
        for flat in range(ncell):
            sv[flat + 1] += sv[flat]
        # stable counting sort keeps indices ascending inside each cell
        for p in range(N):
            ov[sv[cv[p]]] = p
            sv[cv[p]] += 1
        for flat in range(ncell, 0, -1):
            sv[flat] = sv[flat - 1]
        sv[0] = 0
    return order, start


def ball_query(const double[:, ::1] coords, int64_t G, const int64_t[::1] order,
               const int64_t[::1] start, const double[::1] center, double r):
    cdef int d = coords.shape[1]
    cdef Scan sc
    cdef vector[int64_t] hits
    cdef int64_t flat, p, j
    with nogil:
        _scan_init(&sc, &center[0], r, d, G)
        while True:
            flat = _scan_flat(&sc)
            for p in range(start[flat], start[flat + 1]):
                j = order[p]
                if _dist(&center[0], &coords[j, 0], d) <= r:
                    hits.push_back(j)
            if not _scan_next(&sc):
                break
    out = np.array(hits, dtype=np.int64)
    out.sort()
    return out


def ball_counts(const double[:, ::1] coords, int64_t G, const int64_t[::1] order,
                const int64_t[::1] start, const double[:, ::1] centers, double r):
    cdef Py_ssize_t Q = centers.shape[0], q
    cdef int d = coords.shape[1]
    cdef Scan sc
    cdef int64_t flat, p, c
    cdef cnp.ndarray[int64_t, ndim=1] counts = np.zeros(Q, dtype=np.int64)
    cdef int64_t[::1] cv = counts
    if coords.shape[0] == 0:
        return counts
    with nogil:
        for q in range(Q):
            _scan_init(&sc, &centers[q, 0], r, d, G)
            c = 0
            while True:
                flat = _scan_flat(&sc)
                for p in range(start[flat], start[flat + 1]):
                    if _dist(&centers[q, 0], &coords[order[p], 0], d) <= r:
                        c += 1
                if not _scan_next(&sc):
                    break
            cv[q] = c
    return counts


def pairs_within(const double[:, ::1] coords, int64_t G, const int64_t[::1] order,
                 const int64_t[::1] start, double r):
    """All pairs i < j at distance <= r, sorted by (i, j), with their distances."""
    cdef Py_ssize_t N = coords.shape[0], i
    cdef int d = coords.shape[1]
    cdef Scan sc
    cdef int64_t flat, p, j
    cdef double t
    cdef vector[int64_t] left, right
    cdef vector[double] dist
    with nogil:
        for i in range(N):
            _scan_init(&sc, &coords[i, 0], r, d, G)
            while True:
                flat = _scan_flat(&sc)
                for p in range(start[flat], start[flat + 1]):
                    j = order[p]
                    if j > i:
                        t = _dist(&coords[i, 0], &coords[j, 0], d)
                        if t <= r:
                            left.push_back(i)
                            right.push_back(j)
                            dist.push_back(t)
                if not _scan_next(&sc):
                    break
    pairs = np.empty((left.size(), 2), dtype=np.int64)
    if left.size():
        pairs[:, 0] = np.asarray(<int64_t[:left.size()]>left.data())
        pairs[:, 1] = np.asarray(<int64_t[:right.size()]>right.data())
    dists = np.array(dist, dtype=np.float64)
    idx = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[idx], dists[idx]


cdef inline void _push_best(double* best, int k, double t) noexcept nogil:
    cdef int i
    if t >= best[k - 1]:
        return
    i = k - 1
    while i > 0 and best[i - 1] > t:
        best[i] = best[i - 1]
        i -= 1
    best[i] = t


def knn_dists(const double[:, ::1] coords, int64_t G, const int64_t[::1] order,
              const int64_t[::1] start, const double[:, ::1] queries, int k,
              bint exclude_coincident):
    """Sorted k smallest distances from each query; +inf pads missing neighbours.

    With exclude_coincident, points at distance exactly 0 are skipped.
    """
    cdef Py_ssize_t Q = queries.shape[0], q
    cdef int d = coords.shape[1], i
    cdef Scan sc
    cdef int64_t flat, p
    cdef double r, t, h = 1.0 / G
    cdef bint full
    cdef cnp.ndarray[double, ndim=2] out = np.full((Q, k), np.inf)
    cdef double[:, ::1] ov = out
    if coords.shape[0] == 0 or k <= 0:
        return out
    with nogil:
        for q in range(Q):
            r = h
            while True:
                for i in range(k):
                    ov[q, i] = INFINITY
                full = _scan_init(&sc, &queries[q, 0], r, d, G)
                while True:
                    flat = _scan_flat(&sc)
                    for p in range(start[flat], start[flat + 1]):
                        t = _dist2(&queries[q, 0], &coords[order[p], 0], d)
                        if exclude_coincident and t == 0.0:
                            continue
                        _push_best(&ov[q, 0], k, t)
                    if not _scan_next(&sc):
                        break
                if full or sqrt(ov[q, k - 1]) <= r:
                    break
                r *= 2.0
            # sqrt is monotone, so ranking squared distances gives the same order
            for i in range(k):
                ov[q, i] = sqrt(ov[q, i])
    return out


cdef int64_t _find(int64_t* parent, int64_t x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def component_labels(int64_t N, const int64_t[:, ::1] pairs):
    """Union-find over an edge list; labels numbered by first appearance."""
    cdef cnp.ndarray[int64_t, ndim=1] parent = np.arange(N, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] size = np.ones(N, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] labels = np.full(N, -1, dtype=np.int64)
    cdef int64_t* par = <int64_t*>parent.data
    cdef int64_t* sz = <int64_t*>size.data
    cdef int64_t* lab = <int64_t*>labels.data
    cdef Py_ssize_t e, E = pairs.shape[0]
    cdef int64_t a, b, nxt = 0, i
    with nogil:
        for e in range(E):
            a = _find(par, pairs[e, 0])
            b = _find(par, pairs[e, 1])
            if a == b:
                continue
            if sz[a] < sz[b]:
                a, b = b, a
            par[b] = a
            sz[a] += sz[b]
        for i in range(N):
            a = _find(par, i)
            if lab[a] < 0:
                lab[a] = nxt
                nxt += 1
            lab[i] = lab[a]
    return labels
