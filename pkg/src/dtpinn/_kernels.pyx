# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: CSR products, fused tanh jet rules, Poisson-disk dart throwing.

Every routine here has a behaviourally identical twin in ``_fallback.py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, atan2, floor, M_PI

cnp.import_array()

ctypedef fused real_t:
    float
    double


def csr_spmv(const cnp.int64_t[::1] row_ptr, const cnp.int64_t[::1] col_idx,
             const real_t[::1] values, const real_t[::1] v, real_t[::1] out):
    """out = M @ v, summing each row in ascending column order."""
    cdef Py_ssize_t n_rows = row_ptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double acc
    with nogil:
        for i in range(n_rows):
            acc = 0.0
            for k in range(row_ptr[i], row_ptr[i + 1]):
                acc = acc + <double>values[k] * <double>v[col_idx[k]]
            out[i] = <real_t>acc


def csr_spmm(const cnp.int64_t[::1] row_ptr, const cnp.int64_t[::1] col_idx,
             const real_t[::1] values, const real_t[:, ::1] V, real_t[:, ::1] out):
    """out = M @ V for a row-major block of right-hand sides."""
    cdef Py_ssize_t n_rows = row_ptr.shape[0] - 1
    cdef Py_ssize_t n_rhs = V.shape[1]
    cdef Py_ssize_t i, k, j
    cdef cnp.int64_t c
    cdef real_t a
    with nogil:
        for i in range(n_rows):
            for j in range(n_rhs):
                out[i, j] = 0
            for k in range(row_ptr[i], row_ptr[i + 1]):
                a = values[k]
                c = col_idx[k]
                for j in range(n_rhs):
                    out[i, j] = out[i, j] + a * V[c, j]


def jet_tanh_forward(const real_t[:, :, ::1] Z, int n_dir, int order,
                     real_t[:, :, ::1] A, real_t[:, ::1] T):
    """Jet of tanh(Z) for a stacked jet Z of shape (K, B, W); T must hold tanh(Z[0])."""
    cdef Py_ssize_t B = Z.shape[1], W = Z.shape[2]
    cdef Py_ssize_t b, w, d
    cdef double t, s, z1
    with nogil:
        for b in range(B):
            for w in range(W):
                t = T[b, w]
                s = 1.0 - t * t
                A[0, b, w] = <real_t>t
                for d in range(n_dir):
                    z1 = Z[1 + d, b, w]
                    A[1 + d, b, w] = <real_t>(s * z1)
                    if order == 2:
                        A[1 + n_dir + d, b, w] = <real_t>(s * Z[1 + n_dir + d, b, w]
                                                          - 2.0 * t * s * z1 * z1)


def jet_tanh_backward(const real_t[:, :, ::1] G, const real_t[:, :, ::1] Z,
                      const real_t[:, ::1] T, int n_dir, int order, real_t[:, :, ::1] out):
    """Cotangent of the pre-activation jet given the cotangent G of the tanh jet."""
    cdef Py_ssize_t B = Z.shape[1], W = Z.shape[2]
    cdef Py_ssize_t b, w, d
    cdef double t, s, ts, g0, z1, g1, g2
    with nogil:
        for b in range(B):
            for w in range(W):
                t = T[b, w]
                s = 1.0 - t * t
                ts = t * s
                g0 = s * G[0, b, w]
                for d in range(n_dir):
                    z1 = Z[1 + d, b, w]
                    g1 = G[1 + d, b, w]
                    g0 = g0 - 2.0 * ts * z1 * g1
                    if order == 2:
                        g2 = G[1 + n_dir + d, b, w]
                        out[1 + n_dir + d, b, w] = <real_t>(s * g2)
                        out[1 + d, b, w] = <real_t>(s * g1 - 4.0 * ts * z1 * g2)
                        g0 = g0 - g2 * (2.0 * ts * Z[1 + n_dir + d, b, w]
                                        + 2.0 * (s * s - 2.0 * t * ts) * z1 * z1)
                    else:
                        out[1 + d, b, w] = <real_t>(s * g1)
                out[0, b, w] = <real_t>g0


cdef inline bint _inside(double x, double y, double amp, int petals, double margin) nogil:
    cdef double rho = sqrt(x * x + y * y)
    cdef double theta = atan2(y, x)
    return rho - (1.0 + amp * cos(petals * theta)) < -margin


def poisson_disk(const double[:, ::1] seeds, double radius, double amp, int petals,
                 double margin, int attempts, const double[::1] uniforms,
                 Py_ssize_t max_points):
    """Bridson dart throwing grown from ``seeds`` inside r(t) = 1 + amp*cos(petals*t).

    Returns (points, n_points, n_uniforms_used); n_uniforms_used is -1 when the
    uniform stream ran out and the caller must retry with a longer one.
    """
    cdef double extent = 1.0 + abs(amp) + 2.0 * radius
    cdef double cell = radius / sqrt(2.0)
    cdef Py_ssize_t gdim = <Py_ssize_t>(2.0 * extent / cell) + 1
    cdef cnp.int64_t[::1] head = np.full(gdim * gdim, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] nxt = np.full(max_points, -1, dtype=np.int64)
    cdef double[:, ::1] pts = np.zeros((max_points, 2), dtype=np.float64)
    cdef cnp.int64_t[::1] active = np.zeros(max_points, dtype=np.int64)
    cdef Py_ssize_t n_seeds = seeds.shape[0]
    cdef Py_ssize_t n_uni = uniforms.shape[0]
    cdef Py_ssize_t npts = 0, nact = 0, pos = 0
    cdef Py_ssize_t i, j, t, gi, gj, ci, cj, cidx
    cdef cnp.int64_t q
    cdef double r2 = radius * radius
    cdef double cx, cy, rad, ang, px, py, dx, dy
    cdef bint ok, placed

    for i in range(n_seeds):
        pts[npts, 0] = seeds[i, 0]
        pts[npts, 1] = seeds[i, 1]
        gi = <Py_ssize_t>floor((seeds[i, 0] + extent) / cell)
        gj = <Py_ssize_t>floor((seeds[i, 1] + extent) / cell)
        nxt[npts] = head[gi * gdim + gj]
        head[gi * gdim + gj] = npts
        active[nact] = npts
        nact += 1
        npts += 1

    while nact > 0:
        if pos + 1 + 2 * attempts > n_uni:
            return np.asarray(pts[:npts]).copy(), npts, -1
        j = <Py_ssize_t>(uniforms[pos] * nact)
        if j >= nact:
            j = nact - 1
        pos += 1
        cx = pts[active[j], 0]
        cy = pts[active[j], 1]
        placed = False
        for t in range(attempts):
            rad = radius * sqrt(1.0 + 3.0 * uniforms[pos])
            ang = 2.0 * M_PI * uniforms[pos + 1]
            pos += 2
            px = cx + rad * cos(ang)
            py = cy + rad * sin(ang)
            if not _inside(px, py, amp, petals, margin):
                continue
            gi = <Py_ssize_t>floor((px + extent) / cell)
            gj = <Py_ssize_t>floor((py + extent) / cell)
            ok = True
            for ci in range(gi - 2, gi + 3):
                if not ok:
                    break
                if ci < 0 or ci >= gdim:
                    continue
                for cj in range(gj - 2, gj + 3):
                    if cj < 0 or cj >= gdim:
                        continue
                    q = head[ci * gdim + cj]
                    while q >= 0:
                        dx = pts[q, 0] - px
                        dy = pts[q, 1] - py
                        if dx * dx + dy * dy < r2:
                            ok = False
                            break
                        q = nxt[q]
                    if not ok:
                        break
            if ok:
                if npts >= max_points:
                    raise ValueError("poisson_disk: max_points exceeded")
                pts[npts, 0] = px
                pts[npts, 1] = py
                nxt[npts] = head[gi * gdim + gj]
                head[gi * gdim + gj] = npts
                active[nact] = npts
                nact += 1
                npts += 1
                placed = True
                break
        if not placed:
            nact -= 1
            active[j] = active[nact]
    return np.asarray(pts[:npts]).copy(), npts, pos
