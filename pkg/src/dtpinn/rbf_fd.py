"""RBF-FD weights from polyharmonic splines augmented with Legendre polynomials.

Each stencil solves the saddle-point system

    [A  P] [c]   [L phi]
    [P' 0] [l] = [L q  ]

in stencil-local coordinates (shifted to the center, scaled by the stencil
radius) and the weights are scaled back by radius**-theta.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import numpy.polynomial.legendre as leg
from scipy.linalg import lu

from .geometry import PointCloud, knn_many
from .sparse import CsrMatrix, from_triplets

DERIVATIVE_ORDER = {"identity": 0, "laplacian": 2, "normal-gradient": 1, "robin": 1,
                    "biharmonic": 4}


class StencilError(RuntimeError):
    """Saddle-point system is singular or numerically rank deficient."""

    def __init__(self, center, condition, msg=""):
        self.center = center
        self.condition = condition
        super().__init__(f"stencil at point {center} is singular "
                         f"(condition estimate {condition:.3g}) {msg}".rstrip())


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    alpha: float = 1.0
    beta: float = 1.0
    normal: tuple | None = None

    def __post_init__(self):
        if self.kind not in DERIVATIVE_ORDER:
            raise ValueError(f"unknown operator {self.kind!r}")

    @property
    def theta(self):
        return DERIVATIVE_ORDER[self.kind]


LAPLACIAN = OperatorSpec("laplacian")
BIHARMONIC = OperatorSpec("biharmonic")


@dataclass(frozen=True)
class StencilConfig:
    p: int
    theta: int
    d: int = 2

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("order p must be positive")

    @property
    def ell(self):
        return self.p + self.theta - 1

    @property
    def m(self):
        m = self.ell if self.ell % 2 else self.ell - 1
        # r^(m - theta) must vanish at r = 0
        floor = 3 if self.theta <= 2 else 5
        return max(m, floor)

    @property
    def n_poly(self):
        return math.comb(self.ell + self.d, self.d)

    @property
    def n(self):
        return 2 * self.n_poly + 1

    @classmethod
    def for_operator(cls, p, op, d=2):
        return cls(p, op.theta, d)


def phs_apply(kind, center, nodes, m, d=2, normal=None):
    """Operator applied to r^m, r = |x - node|, evaluated at x = center.

    Broadcasts over leading axes of ``center``/``nodes`` (and ``normal``).
    """
    theta = DERIVATIVE_ORDER[kind]
    if m - theta < 1 and kind != "identity":
        raise ValueError(f"r^{m} cannot take {theta} derivatives at r = 0")
    diff = np.asarray(center, dtype=np.float64) - np.asarray(nodes, dtype=np.float64)
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    if kind == "identity":
        return r**m
    if kind == "laplacian":
        return m * (m + d - 2) * r ** (m - 2)
    if kind == "biharmonic":
        return m * (m - 2) * (m + d - 2) * (m + d - 4) * r ** (m - 4)
    if kind in ("normal-gradient", "robin"):
        if normal is None:
            raise ValueError("gradient operators need a normal")
        normal = np.asarray(normal, dtype=np.float64)
        if diff.ndim > normal.ndim:
            normal = np.expand_dims(normal, -2)
        return m * r ** (m - 2) * np.sum(diff * normal, axis=-1)
    raise ValueError(kind)


def poly_exponents(ell, d=2):
    """(a, b) degree pairs of the total-degree <= ell tensor Legendre basis."""
    if d != 2:
        raise NotImplementedError("only d = 2 is supported")
    return [(k - j, j) for k in range(ell + 1) for j in range(k + 1)]


def _legendre_derivs(x, ell, order):
    """out[k, i, a] = k-th derivative of P_a at x[i], for k = 0..order."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.zeros((order + 1, len(x), ell + 1))
    for a in range(ell + 1):
        coef = np.zeros(a + 1)
        coef[a] = 1.0
        for k in range(order + 1):
            out[k, :, a] = leg.legval(x, leg.legder(coef, k)) if k <= a else 0.0
    return out


def poly_basis_apply(op: OperatorSpec | str, center, ell, d=2, normal=None):
    """Operator applied to every basis polynomial, evaluated at ``center``.

    ``center`` is in the same (stencil-local) coordinates as the basis.
    """
    kind = op if isinstance(op, str) else op.kind
    if normal is None and not isinstance(op, str):
        normal = op.normal
    center = np.asarray(center, dtype=np.float64)
    ex = poly_exponents(ell, d)
    dx = _legendre_derivs(center[..., 0], ell, 4)[:, 0]
    dy = _legendre_derivs(center[..., 1], ell, 4)[:, 0]
    a = np.array([e[0] for e in ex])
    b = np.array([e[1] for e in ex])
    if kind == "identity":
        return dx[0, a] * dy[0, b]
    if kind == "laplacian":
        return dx[2, a] * dy[0, b] + dx[0, a] * dy[2, b]
    if kind == "biharmonic":
        return dx[4, a] * dy[0, b] + 2 * dx[2, a] * dy[2, b] + dx[0, a] * dy[4, b]
    if kind in ("normal-gradient", "robin"):
        normal = np.asarray(normal, dtype=np.float64)
        nx, ny = normal[..., 0, None], normal[..., 1, None]
        return nx * dx[1, a] * dy[0, b] + ny * dx[0, a] * dy[1, b]
    raise ValueError(kind)


def poly_vander(y, ell, d=2):
    """P[..., i, j] = q_j(y_i) for the tensor Legendre basis."""
    y = np.asarray(y, dtype=np.float64)
    ex = poly_exponents(ell, d)
    vx = leg.legvander(y[..., 0], ell)
    vy = leg.legvander(y[..., 1], ell)
    a = [e[0] for e in ex]
    b = [e[1] for e in ex]
    return vx[..., a] * vy[..., b]


def solve_stencils(points, kind, cfg: StencilConfig, normals=None, center_ids=None):
    """Weights at points[r, 0] using all of points[r] as the stencil, for every r.

    ``points`` has shape (R, n, d); returns (R, n). Systems are LU-factored with
    partial pivoting and rejected when a pivot falls below 1e-12 of the largest.
    """
    points = np.asarray(points, dtype=np.float64)
    R, n, d = points.shape
    y = points - points[:, :1, :]
    scale = np.max(np.linalg.norm(y, axis=-1), axis=1)
    if np.any(scale == 0.0):
        r = int(np.argmin(scale))
        raise StencilError(_cid(center_ids, r), math.inf, "(coincident nodes)")
    y /= scale[:, None, None]
    m, ell = cfg.m, cfg.ell
    diff = y[:, :, None, :] - y[:, None, :, :]
    P = poly_vander(y, ell, d)
    M = P.shape[-1]
    system = np.zeros((R, n + M, n + M))
    system[:, :n, :n] = np.sqrt(np.sum(diff * diff, axis=-1)) ** m
    system[:, :n, n:] = P
    system[:, n:, :n] = P.transpose(0, 2, 1)
    rhs = np.empty((R, n + M))
    origin = np.zeros(d)
    rhs[:, :n] = phs_apply(kind, origin, y, m, d, normals)
    rhs[:, n:] = poly_basis_apply(kind, origin, ell, d,
                                  np.zeros((R, d)) if normals is None else normals)

    _, _, upper = lu(system, p_indices=True, check_finite=False)
    pivots = np.abs(np.diagonal(upper, axis1=1, axis2=2))
    bad = ~np.all(np.isfinite(upper), axis=(1, 2)) | (
        pivots.min(axis=1) < 1e-12 * pivots.max(axis=1))
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        raise StencilError(_cid(center_ids, r), float(np.linalg.cond(system[r])))
    sol = np.linalg.solve(system, rhs[..., None])[..., 0]
    return sol[:, :n] / scale[:, None] ** cfg.theta


def _cid(center_ids, r):
    return r if center_ids is None else int(center_ids[r])


def solve_stencil(points, kind, cfg: StencilConfig, normal=None, center_id=None):
    """Weights at points[0] using every row of ``points`` as the stencil."""
    normals = None if normal is None else np.asarray(normal, dtype=np.float64)[None]
    ids = None if center_id is None else [center_id]
    return solve_stencils(np.asarray(points)[None], kind, cfg, normals, ids)[0]


def stencil_weights(cloud: PointCloud, center_index: int, op: OperatorSpec,
                    cfg: StencilConfig | None = None, p: int | None = None):
    """(global indices, weights) of the stencil for ``op`` at a point of the cloud."""
    if cfg is None:
        cfg = StencilConfig.for_operator(p, op)
    idx = knn_many(cloud.extended, cloud.tree, [center_index], cfg.n)[0]
    normal = op.normal
    if op.kind in ("normal-gradient", "robin") and normal is None:
        normal = _normal_of(cloud, center_index)
    w = solve_stencil(cloud.extended[idx], op.kind, cfg, normal, center_index)
    if op.kind == "robin":
        w = op.alpha * w
        w[0] += op.beta
    return idx, w


def _normal_of(cloud, index):
    j = index - cloud.n_interior
    if not 0 <= j < cloud.n_boundary:
        raise ValueError(f"point {index} is not a boundary point")
    return cloud.normals[j]


def _rows(cloud, centers, kind, cfg, normals, alpha, beta, batch=256):
    idx = knn_many(cloud.extended, cloud.tree, centers, cfg.n)
    w = np.empty(idx.shape)
    for lo in range(0, len(centers), batch):
        sl = slice(lo, lo + batch)
        nv = None if normals is None else normals[sl]
        w[sl] = solve_stencils(cloud.extended[idx[sl]], kind, cfg, nv, centers[sl])
    if kind == "normal-gradient" and alpha is not None:
        w *= alpha
        w[:, 0] += beta
    return idx, w


def assemble_matrix(cloud: PointCloud, kind: str, p: int, alpha: float = 1.0,
                    beta: float = 1.0, dtype=np.float64, workers: int = 1) -> CsrMatrix:
    """Differentiation matrix over the extended node set.

    ``laplacian`` and ``biharmonic`` give one row per interior/boundary point;
    ``robin`` gives one row per boundary point applying alpha*n.grad + beta.
    Every matrix has N_i + 2 N_b columns and exactly one stencil per row.
    """
    if cloud.n_ghost != cloud.n_boundary:
        raise ValueError("assemble_matrix needs one ghost point per boundary point")
    if kind in ("laplacian", "biharmonic"):
        centers = np.arange(cloud.n)
        normals = None
        stencil_kind, a, b = kind, None, None
    elif kind in ("robin", "normal-gradient"):
        centers = np.arange(cloud.n_interior, cloud.n)
        normals = cloud.normals
        stencil_kind = "normal-gradient"
        a, b = (alpha, beta) if kind == "robin" else (None, None)
    else:
        raise ValueError(f"cannot assemble operator {kind!r}")
    cfg = StencilConfig(p, DERIVATIVE_ORDER[kind])
    if cfg.n > cloud.n_extended:
        raise ValueError(f"stencil size {cfg.n} exceeds the {cloud.n_extended} available points")

    chunks = np.array_split(np.arange(len(centers)), max(1, workers))

    def run(rows):
        nv = None if normals is None else normals[rows]
        return _rows(cloud, centers[rows], stencil_kind, cfg, nv, a, b)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(chunks[0])]
    idx = np.vstack([pp[0] for pp in parts])
    w = np.vstack([pp[1] for pp in parts])
    rows = np.repeat(np.arange(len(centers)), cfg.n)
    return from_triplets(len(centers), cloud.n_extended, rows=rows, cols=idx.ravel(),
                         vals=w.ravel(), dtype=dtype)
