"""Collocation point clouds on curved 2-D domains.

Points are stored in one global index space ordered ``[interior | boundary | ghost]``;
every routine that returns a :class:`PointCloud` keeps that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from ._backend import kernels


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class DomainShape:
    """Star-shaped domain with boundary radius r(t) = 1 + amplitude*cos(petals*t).

    ``kind="unit-disk"`` is the special case amplitude = 0.
    """

    kind: str = "unit-disk"
    petals: int = 5
    amplitude: float = 0.25

    def __post_init__(self):
        if self.kind not in ("unit-disk", "star"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if self.kind == "star":
            if int(self.petals) != self.petals or self.petals < 3:
                raise GeometryError("star domain needs an integer petal count >= 3")
            if not 0.0 < self.amplitude < 1.0:
                raise GeometryError("star amplitude must lie in (0, 1) so that r(t) > 0")

    @classmethod
    def unit_disk(cls):
        return cls("unit-disk")

    @classmethod
    def star(cls, petals=5, amplitude=0.25):
        return cls("star", petals, amplitude)

    @property
    def amp(self):
        return 0.0 if self.kind == "unit-disk" else float(self.amplitude)

    @property
    def k(self):
        return int(self.petals) if self.kind == "star" else 0

    def radius(self, theta):
        return 1.0 + self.amp * np.cos(self.k * np.asarray(theta))

    def dradius(self, theta):
        return -self.amp * self.k * np.sin(self.k * np.asarray(theta))

    def boundary_point(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        r = self.radius(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def normal(self, theta):
        """Unit outward normal at boundary parameter ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        r, dr = self.radius(theta), self.dradius(theta)
        # tangent = dr*(cos, sin) + r*(-sin, cos); rotate clockwise for outward
        tx = dr * np.cos(theta) - r * np.sin(theta)
        ty = dr * np.sin(theta) + r * np.cos(theta)
        nrm = np.hypot(tx, ty)
        return np.stack([ty / nrm, -tx / nrm], axis=-1)

    def level_set(self, x):
        """|x| - r(angle(x)): negative inside, zero on the boundary, positive outside."""
        x = np.atleast_2d(x)
        return np.hypot(x[:, 0], x[:, 1]) - self.radius(np.arctan2(x[:, 1], x[:, 0]))

    def signed_distance(self, x, n_samples=4096):
        """Euclidean distance to the boundary curve, negative inside."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "unit-disk":
            return np.hypot(x[:, 0], x[:, 1]) - 1.0
        curve = self.boundary_point(np.linspace(0.0, 2 * np.pi, n_samples, endpoint=False))
        dist, idx = cKDTree(curve).query(x)
        # polish the nearest sample by a few Newton steps on |x - b(t)|^2
        t = idx * (2 * np.pi / n_samples)
        for _ in range(4):
            b = self.boundary_point(t)
            r, dr = self.radius(t), self.dradius(t)
            ddr = -self.amp * self.k**2 * np.cos(self.k * t)
            db = np.stack([dr * np.cos(t) - r * np.sin(t), dr * np.sin(t) + r * np.cos(t)], -1)
            d2b = np.stack([ddr * np.cos(t) - 2 * dr * np.sin(t) - r * np.cos(t),
                            ddr * np.sin(t) + 2 * dr * np.cos(t) - r * np.sin(t)], -1)
            diff = b - x
            g = np.sum(diff * db, -1)
            hss = np.sum(db * db, -1) + np.sum(diff * d2b, -1)
            t = t - np.where(hss > 0, g / np.where(hss > 0, hss, 1.0), 0.0)
        dist = np.linalg.norm(self.boundary_point(t) - x, axis=1)
        return np.sign(self.level_set(x)) * dist

    def perimeter(self, n_samples=20000):
        pts = self.boundary_point(np.linspace(0, 2 * np.pi, n_samples + 1))
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def area(self):
        # integral of r^2/2 dt; the cross term integrates to zero
        return math.pi * (1.0 + 0.5 * self.amp**2)

    def equispaced_boundary(self, n_points, n_samples=20000):
        """``n_points`` parameters equispaced in arclength, starting at t = 0."""
        t = np.linspace(0.0, 2 * np.pi, n_samples + 1)
        seg = np.linalg.norm(np.diff(self.boundary_point(t), axis=0), axis=1)
        s = np.concatenate(([0.0], np.cumsum(seg)))
        target = np.arange(n_points) * (s[-1] / n_points)
        return np.interp(target, s, t)


@dataclass(frozen=True, eq=False)
class PointCloud:
    interior: np.ndarray
    boundary: np.ndarray
    normals: np.ndarray
    ghost: np.ndarray
    h: float
    shape: DomainShape | None = None

    @property
    def dim(self):
        return self.interior.shape[1]

    @property
    def n_interior(self):
        return len(self.interior)

    @property
    def n_boundary(self):
        return len(self.boundary)

    @property
    def n_ghost(self):
        return len(self.ghost)

    @property
    def n(self):
        """Number of collocation points (interior + boundary)."""
        return self.n_interior + self.n_boundary

    @property
    def n_extended(self):
        return self.n + self.n_ghost

    @cached_property
    def points(self):
        """Interior then boundary points, shape (N, d)."""
        return np.vstack([self.interior, self.boundary])

    @cached_property
    def extended(self):
        """All points in global order [interior | boundary | ghost]."""
        return np.vstack([self.interior, self.boundary, self.ghost])

    @cached_property
    def tree(self):
        return cKDTree(self.extended)

    @property
    def boundary_slice(self):
        return slice(self.n_interior, self.n)


def nearest_neighbor_distances(points):
    d, _ = cKDTree(points).query(points, k=2)
    return d[:, 1]


def _poisson_disk(shape, radius, seed, attempts=30):
    n_b = max(int(round(shape.perimeter() / radius)), 8)
    theta = shape.equispaced_boundary(n_b)
    boundary = shape.boundary_point(theta)
    est = int(4.0 * shape.area() / radius**2) + n_b + 64
    n_uni = est * (1 + 2 * attempts)
    while True:
        uniforms = np.random.default_rng(seed).random(n_uni)
        pts, npts, used = kernels.poisson_disk(
            np.ascontiguousarray(boundary), float(radius), shape.amp, shape.k,
            0.25 * radius, attempts, uniforms, 2 * est)
        if used >= 0:
            break
        n_uni *= 2
    pts = np.asarray(pts)[:npts]
    return pts[n_b:], boundary, theta


def repel(shape, interior, boundary, iters=10, k=7, step=0.1):
    """Inverse-square repulsion among interior nodes; boundary nodes stay fixed.

    Moves that would bring a node within half a local spacing of the boundary
    are discarded.
    """
    x = interior.copy()
    for _ in range(iters):
        allp = np.vstack([x, boundary])
        d, idx = cKDTree(allp).query(x, k=k + 1)
        d, idx = d[:, 1:], idx[:, 1:]
        spacing = d[:, 0].mean()
        force = np.sum((x[:, None, :] - allp[idx]) / d[..., None] ** 3, axis=1) * spacing**2
        mag = np.linalg.norm(force, axis=1, keepdims=True)
        force *= np.minimum(mag, 1.0) / np.maximum(mag, 1e-300)
        moved = x + step * spacing * force
        ok = shape.level_set(moved) < -0.5 * spacing
        x = np.where(ok[:, None], moved, x)
    return x


def generate_nodes(shape: DomainShape, target_n: int, seed: int = 0,
                   ghost_factor: float | None = 1.0, tol: float = 0.03,
                   smooth_iters: int = 10) -> PointCloud:
    """Quasi-uniform interior + boundary nodes with about ``target_n`` points in total.

    Boundary nodes are equispaced in arclength; the interior is filled by
    Poisson-disk dart throwing grown inward from the boundary and then relaxed
    with a few repulsion sweeps. The exclusion radius is rescaled until the
    count lands within ``tol`` of the target. Ghost points are attached at
    ``ghost_factor * h`` unless it is None.
    """
    if int(target_n) != target_n or target_n <= 0:
        raise GeometryError("target_n must be a positive integer")
    if target_n < 50:
        raise GeometryError("target_n must be at least 50")

    # Poisson-disk packing density is roughly 1 / (1.6 r^2)
    radius = math.sqrt(shape.area() / (1.6 * target_n))
    best = None
    for _ in range(12):
        interior, boundary, theta = _poisson_disk(shape, radius, seed)
        n = len(interior) + len(boundary)
        err = abs(n - target_n) / target_n
        if best is None or err < best[0]:
            best = (err, interior, boundary, theta)
        if err <= tol:
            break
        radius *= math.sqrt(n / target_n)
    _, interior, boundary, theta = best
    if smooth_iters:
        interior = repel(shape, interior, boundary, smooth_iters)

    normals = shape.normal(theta)
    pts = np.vstack([interior, boundary])
    h = float(np.mean(nearest_neighbor_distances(pts)))
    cloud = PointCloud(interior, boundary, normals, np.zeros((0, 2)), h, shape)
    if ghost_factor is not None:
        cloud = make_ghost_points(cloud, ghost_factor)
    return cloud


def make_ghost_points(cloud: PointCloud, offset_factor: float = 1.0,
                      adaptive: bool = True) -> PointCloud:
    """One ghost per boundary point at ``X_b + offset_factor*h*n``.

    With ``adaptive`` a ghost that lands inside the domain has its offset
    halved (up to 20 times) before giving up.
    """
    if offset_factor <= 0:
        raise GeometryError("offset_factor must be positive")
    if cloud.n_boundary and cloud.normals.shape != cloud.boundary.shape:
        raise GeometryError("cloud has no boundary normals")
    offsets = np.full(cloud.n_boundary, offset_factor * cloud.h)
    ghost = cloud.boundary + offsets[:, None] * cloud.normals
    if cloud.shape is not None:
        for _ in range(20):
            bad = _inside_mask(cloud.shape, ghost)
            if not bad.any():
                break
            if not adaptive:
                raise GeometryError(f"{int(bad.sum())} ghost points fall inside the domain")
            offsets[bad] *= 0.5
            ghost = cloud.boundary + offsets[:, None] * cloud.normals
        else:
            raise GeometryError("could not place ghost points outside the domain")
    return replace(cloud, ghost=ghost)


def _inside_mask(shape, x):
    return shape.signed_distance(x) <= 0.0


def knn(cloud_or_points, center_index: int, n: int) -> np.ndarray:
    """Indices of the ``n`` nearest points of the extended set to a point.

    Sorted by distance; the center comes first and ties go to the lower index.
    """
    if isinstance(cloud_or_points, PointCloud):
        pts, tree = cloud_or_points.extended, cloud_or_points.tree
    else:
        pts = np.asarray(cloud_or_points, dtype=np.float64)
        tree = cKDTree(pts)
    return knn_many(pts, tree, np.array([center_index]), n)[0]


def knn_many(pts, tree, centers, n):
    total = len(pts)
    if n > total:
        raise GeometryError(f"requested {n} neighbours but only {total} points exist")
    if n < 1:
        raise GeometryError("n must be at least 1")
    centers = np.asarray(centers, dtype=np.int64)
    k = min(n + 8, total)
    dist, idx = tree.query(pts[centers], k=k)
    dist, idx = np.atleast_2d(dist), np.atleast_2d(idx)
    out = np.empty((len(centers), n), dtype=np.int64)
    for r, c in enumerate(centers):
        d, i = dist[r], idx[r]
        # the tree's order among equal distances is arbitrary; if the cut falls
        # inside a tie (or past the slack), fall back to the full candidate set
        if k < total and d[n - 1] == d[-1]:
            i = np.asarray(tree.query_ball_point(pts[c], d[n - 1] * (1 + 1e-12) + 1e-300))
            d = np.linalg.norm(pts[i] - pts[c], axis=1)
        d = np.where(i == c, -1.0, d)
        order = np.lexsort((i, d))
        out[r] = i[order][:n]
    return out


def write_cloud(path, cloud: PointCloud):
    """Text format: ``d N_i N_b N_g h`` header, then ``x1 x2 flag [nx ny]`` per point."""
    with open(path, "w") as fh:
        fh.write(f"{cloud.dim} {cloud.n_interior} {cloud.n_boundary} {cloud.n_ghost} "
                 f"{cloud.h:.17g}\n")
        for x in cloud.interior:
            fh.write(f"{x[0]:.17g} {x[1]:.17g} i\n")
        for x, nv in zip(cloud.boundary, cloud.normals):
            fh.write(f"{x[0]:.17g} {x[1]:.17g} b {nv[0]:.17g} {nv[1]:.17g}\n")
        for x in cloud.ghost:
            fh.write(f"{x[0]:.17g} {x[1]:.17g} g\n")


def read_cloud(path, shape: DomainShape | None = None) -> PointCloud:
    with open(path) as fh:
        head = fh.readline().split()
        d, n_i, n_b, n_g = (int(t) for t in head[:4])
        h = float(head[4])
        groups = {"i": [], "b": [], "g": []}
        normals = []
        for lineno, line in enumerate(fh, start=2):
            tok = line.split()
            if not tok:
                continue
            flag = tok[d]
            if flag not in groups:
                raise GeometryError(f"{path}:{lineno}: bad point flag {flag!r}")
            groups[flag].append([float(t) for t in tok[:d]])
            if flag == "b":
                normals.append([float(t) for t in tok[d + 1:2 * d + 1]])
    counts = (len(groups["i"]), len(groups["b"]), len(groups["g"]))
    if counts != (n_i, n_b, n_g):
        raise GeometryError(f"{path}: header counts {(n_i, n_b, n_g)} != body {counts}")

    def arr(rows):
        return np.array(rows, dtype=np.float64).reshape(-1, d)

    return PointCloud(arr(groups["i"]), arr(groups["b"]), arr(normals), arr(groups["g"]),
                      h, shape)


def holdout_cloud(shape: DomainShape, n_train: int, seed: int = 0, factor: float = 13.08):
    """Held-out evaluation nodes: a finer cloud (about 3.6x linear refinement)."""
    return generate_nodes(shape, int(round(factor * n_train)), seed=seed + 7919,
                          ghost_factor=None)
