"""Pure-Python/NumPy versions of the routines in ``_kernels.pyx``.

Used when the compiled extension is unavailable or when ``DTPINN_PURE_PYTHON``
is set. Results agree with the compiled path; ``poisson_disk`` consumes the
uniform stream identically and returns bit-identical points.
"""

import math

import numpy as np


def csr_spmv(row_ptr, col_idx, values, v, out):
    """out = M @ v, summing each row in ascending column order."""
    n_rows = len(row_ptr) - 1
    if len(values) == 0:
        out[:] = 0
        return
    prod = values.astype(np.float64) * v[col_idx].astype(np.float64)
    starts = row_ptr[:-1]
    lengths = row_ptr[1:] - starts
    acc = np.zeros(n_rows)
    # k-th entry of every row at once keeps the per-row order ascending
    max_len = int(lengths.max()) if n_rows else 0
    for k in range(max_len):
        live = lengths > k
        acc[live] += prod[starts[live] + k]
    out[:] = acc


def csr_spmm(row_ptr, col_idx, values, V, out):
    """out = M @ V for a row-major block of right-hand sides."""
    n_rows = len(row_ptr) - 1
    acc = np.zeros((n_rows, V.shape[1]), dtype=V.dtype)
    starts = row_ptr[:-1]
    lengths = row_ptr[1:] - starts
    max_len = int(lengths.max()) if n_rows else 0
    for k in range(max_len):
        live = np.nonzero(lengths > k)[0]
        idx = starts[live] + k
        acc[live] += values[idx, None] * V[col_idx[idx]]
    out[:] = acc


def jet_tanh_forward(Z, n_dir, order, A, T):
    """Jet of tanh(Z) for a stacked jet Z of shape (K, B, W); T must hold tanh(Z[0])."""
    D = n_dir
    t = T
    s = 1.0 - t * t
    A[0] = t
    if D:
        A[1:1 + D] = s * Z[1:1 + D]
    if order == 2:
        A[1 + D:] = s * Z[1 + D:] - 2.0 * t * s * Z[1:1 + D] ** 2


def jet_tanh_backward(G, Z, T, n_dir, order, out):
    """Cotangent of the pre-activation jet given the cotangent G of the tanh jet."""
    D = n_dir
    t = T
    s = 1.0 - t * t
    ts = t * s
    out[0] = s * G[0]
    if D:
        Z1 = Z[1:1 + D]
        G1 = G[1:1 + D]
        out[1:1 + D] = s * G1
        out[0] -= 2.0 * ts * np.sum(Z1 * G1, axis=0)
    if order == 2:
        Z2 = Z[1 + D:]
        G2 = G[1 + D:]
        out[1 + D:] = s * G2
        out[1:1 + D] -= 4.0 * ts * Z1 * G2
        out[0] -= np.sum(G2 * (2.0 * ts * Z2 + 2.0 * (s * s - 2.0 * t * ts) * Z1 ** 2), axis=0)


def _inside(x, y, amp, petals, margin):
    rho = math.sqrt(x * x + y * y)
    theta = math.atan2(y, x)
    return rho - (1.0 + amp * math.cos(petals * theta)) < -margin


def poisson_disk(seeds, radius, amp, petals, margin, attempts, uniforms, max_points):
    """Bridson dart throwing grown from ``seeds`` inside r(t) = 1 + amp*cos(petals*t).

    Returns (points, n_points, n_uniforms_used); n_uniforms_used is -1 when the
    uniform stream ran out.
    """
    extent = 1.0 + abs(amp) + 2.0 * radius
    cell = radius / math.sqrt(2.0)
    gdim = int(2.0 * extent / cell) + 1
    grid = {}
    pts = []
    active = []
    r2 = radius * radius
    uni = uniforms.tolist()
    n_uni = len(uni)

    def cell_of(px, py):
        return int(math.floor((px + extent) / cell)), int(math.floor((py + extent) / cell))

    def insert(px, py):
        key = cell_of(px, py)
        grid.setdefault(key, []).append(len(pts))
        active.append(len(pts))
        pts.append((px, py))

    for sx, sy in np.asarray(seeds, dtype=np.float64):
        insert(float(sx), float(sy))

    pos = 0
    while active:
        if pos + 1 + 2 * attempts > n_uni:
            return np.array(pts, dtype=np.float64).reshape(-1, 2), len(pts), -1
        nact = len(active)
        j = min(int(uni[pos] * nact), nact - 1)
        pos += 1
        cx, cy = pts[active[j]]
        placed = False
        for _ in range(attempts):
            rad = radius * math.sqrt(1.0 + 3.0 * uni[pos])
            ang = 2.0 * math.pi * uni[pos + 1]
            pos += 2
            px = cx + rad * math.cos(ang)
            py = cy + rad * math.sin(ang)
            if not _inside(px, py, amp, petals, margin):
                continue
            gi, gj = cell_of(px, py)
            ok = True
            for ci in range(max(gi - 2, 0), min(gi + 3, gdim)):
                for cj in range(max(gj - 2, 0), min(gj + 3, gdim)):
                    for q in grid.get((ci, cj), ()):
                        dx = pts[q][0] - px
                        dy = pts[q][1] - py
                        if dx * dx + dy * dy < r2:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                if len(pts) >= max_points:
                    raise ValueError("poisson_disk: max_points exceeded")
                insert(px, py)
                placed = True
                break
        if not placed:
            active[j] = active[-1]
            active.pop()
    return np.array(pts, dtype=np.float64).reshape(-1, 2), len(pts), pos
