"""Loss functions and training for discretely-trained and vanilla PINNs.

Discrete (``dt``) losses evaluate the network on the extended node set
[interior | boundary | ghost] and apply precomputed RBF-FD matrices; their
weight gradients route the residuals back through the stored transposes.
Vanilla losses take input derivatives from second-order jets instead.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import PointCloud
from .network import (MlpParams, architecture, backward_weights, forward, init_weights,
                      jet_backward, jet_forward, predict)
from .optimizer import Lbfgs, LbfgsConfig, LineSearchError
from .rbf_fd import assemble_matrix
from .sparse import CsrMatrix, spmm, spmv, transpose

log = logging.getLogger(__name__)

DTYPES = {"fp64": np.float64, "float64": np.float64, "fp32": np.float32, "float32": np.float32}


# -- manufactured solutions ---------------------------------------------------

def manufactured_poisson(x):
    """u = 1 + sin(pi x1) cos(pi x2) and its Laplacian."""
    x = np.atleast_2d(x)
    s = np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
    return 1.0 + s, -2.0 * np.pi**2 * s


def manufactured_poisson_grad(x):
    x = np.atleast_2d(x)
    return np.pi * np.stack([np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
                             -np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])], axis=1)


def manufactured_heat(x, t):
    """u = 1 + sin(pi x1) cos(pi x2) sin(pi t), with du/dt and Laplacian."""
    x = np.atleast_2d(x)
    t = np.asarray(t, dtype=np.float64)
    s = np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
    return 1.0 + s * np.sin(np.pi * t), np.pi * s * np.cos(np.pi * t), \
        -2.0 * np.pi**2 * s * np.sin(np.pi * t)


def relative_l2(pred, exact):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    if pred.shape != exact.shape:
        raise ValueError("relative_l2: length mismatch")
    ref = np.linalg.norm(exact)
    if ref == 0.0:
        raise ZeroDivisionError("relative_l2: reference vector has zero norm")
    return float(np.linalg.norm(pred - exact) / ref)


# -- problems -------------------------------------------------------------------

@dataclass
class PoissonProblem:
    cloud: PointCloud
    mode: str                      # "linear" | "nonlinear"
    f: np.ndarray                  # at interior + boundary points
    g: np.ndarray                  # at boundary points
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.mode not in ("linear", "nonlinear"):
            raise ValueError(f"unknown Poisson mode {self.mode!r}")

    @classmethod
    def manufactured(cls, cloud: PointCloud, mode="linear", alpha=1.0, beta=1.0):
        u, lap = manufactured_poisson(cloud.points)
        f = lap - np.exp(u) if mode == "nonlinear" else lap
        ub, _ = manufactured_poisson(cloud.boundary)
        dn = np.sum(manufactured_poisson_grad(cloud.boundary) * cloud.normals, axis=1)
        return cls(cloud, mode, f, alpha * dn + beta * ub, alpha, beta)

    @staticmethod
    def exact(x):
        return manufactured_poisson(x)[0]


@dataclass
class HeatProblem:
    cloud: PointCloud
    n_t: int
    f: np.ndarray                  # (n_t + 1, N)
    g: np.ndarray                  # (n_t + 1, N_b)
    u0: np.ndarray                 # (N,)
    alpha: float = 1.0
    beta: float = 1.0
    t_final: float = 1.0

    @property
    def dt(self):
        return self.t_final / self.n_t

    @property
    def times(self):
        return np.arange(self.n_t + 1) * self.dt

    @classmethod
    def manufactured(cls, cloud: PointCloud, n_t=24, alpha=1.0, beta=1.0, t_final=1.0):
        times = np.arange(n_t + 1) * (t_final / n_t)
        f = np.empty((n_t + 1, cloud.n))
        g = np.empty((n_t + 1, cloud.n_boundary))
        gs = manufactured_poisson_grad(cloud.boundary)
        dn_s = np.sum(gs * cloud.normals, axis=1)
        for k, t in enumerate(times):
            _, ut, lap = manufactured_heat(cloud.points, t)
            f[k] = ut - lap
            ub, _, _ = manufactured_heat(cloud.boundary, t)
            # the gradient of u(., t) is sin(pi t) times the Poisson gradient
            g[k] = alpha * np.sin(np.pi * t) * dn_s + beta * ub
        u0 = manufactured_heat(cloud.points, 0.0)[0]
        return cls(cloud, n_t, f, g, u0, alpha, beta, t_final)

    def exact(self):
        """True solution at the collocation points, shape (n_t + 1, N)."""
        return np.stack([manufactured_heat(self.cloud.points, t)[0] for t in self.times])

    @property
    def n_spacetime(self):
        return (self.n_t + 1) * self.cloud.n


def space_time(points, times):
    """Rows (x, t) for every time slice, slice-major."""
    points = np.asarray(points)
    reps = np.tile(points, (len(times), 1))
    tcol = np.repeat(np.asarray(times, dtype=np.float64), len(points))[:, None]
    return np.hstack([reps, tcol])


# -- losses ----------------------------------------------------------------------

def dt_poisson_loss(params: MlpParams, X_ext, L: CsrMatrix, B: CsrMatrix, f, g,
                    mode="linear", LT=None, BT=None):
    """Mean-square RBF-FD PDE residual plus mean-square Robin residual, and gradient."""
    N, N_b = L.n_rows, B.n_rows
    if X_ext.shape[0] != L.n_cols or B.n_cols != L.n_cols:
        raise ValueError("matrix columns must match the extended node set")
    if len(f) != N or len(g) != N_b:
        raise ValueError("forcing/boundary data do not match matrix rows")
    LT = transpose(L) if LT is None else LT
    BT = transpose(B) if BT is None else BT
    u, cache = forward(params, X_ext)
    r_pde = spmv(L, u) - f
    if mode == "nonlinear":
        eu = np.exp(u[:N])
        r_pde -= eu
    r_bc = spmv(B, u) - g
    loss = float(r_pde @ r_pde) / N + float(r_bc @ r_bc) / N_b
    cot = (2.0 / N) * spmv(LT, r_pde) + (2.0 / N_b) * spmv(BT, r_bc)
    if mode == "nonlinear":
        cot[:N] -= (2.0 / N) * eu * r_pde
    return loss, backward_weights(params, cache, cot)


def vanilla_poisson_loss(params: MlpParams, X_i, X_b, normals, f, g, mode="linear",
                         alpha=1.0, beta=1.0):
    """Jet-based PDE residual at interior points plus Robin residual at boundary points.

    ``f`` may hold values at the interior points only or at interior + boundary
    points (the boundary part is then ignored).
    """
    N_i, N_b = len(X_i), len(X_b)
    f_i = np.asarray(f)[:N_i]
    X = np.vstack([X_i, X_b])
    d = X.shape[1]
    u, u1, u2, cache = jet_forward(params, X, np.eye(d), order=2)
    lap = u2[:N_i].sum(axis=1)
    r_pde = lap - f_i
    if mode == "nonlinear":
        eu = np.exp(u[:N_i])
        r_pde -= eu
    dn = np.sum(u1[N_i:] * normals, axis=1)
    r_bc = alpha * dn + beta * u[N_i:] - g
    loss = float(r_pde @ r_pde) / N_i + float(r_bc @ r_bc) / N_b

    gu = np.zeros_like(u)
    gu1 = np.zeros_like(u1)
    gu2 = np.zeros_like(u2)
    gu2[:N_i] = (2.0 / N_i) * r_pde[:, None]
    if mode == "nonlinear":
        gu[:N_i] = -(2.0 / N_i) * eu * r_pde
    gu1[N_i:] = (2.0 / N_b) * alpha * r_bc[:, None] * normals
    gu[N_i:] = (2.0 / N_b) * beta * r_bc
    return loss, jet_backward(params, cache, gu, gu1, gu2)


def dt_heat_loss(params: MlpParams, X_ext, L: CsrMatrix, B: CsrMatrix, problem: HeatProblem,
                 LT=None, BT=None):
    """Initial-condition, space-time PDE and boundary residuals with RBF-FD in space.

    The time derivative comes from first-order jets along t.
    """
    N, N_b, N_ext = L.n_rows, B.n_rows, L.n_cols
    S = problem.n_t + 1
    if problem.f.shape != (S, N) or problem.g.shape != (S, N_b):
        raise ValueError("heat data do not match the number of time slices")
    LT = transpose(L) if LT is None else LT
    BT = transpose(B) if BT is None else BT
    dtype = params.dtype
    Xt = space_time(X_ext, problem.times)
    e_t = np.zeros((1, Xt.shape[1]))
    e_t[0, -1] = 1.0
    u, u1, _, cache = jet_forward(params, Xt, e_t, order=1)
    U = u.reshape(S, N_ext)
    Ut = u1[:, 0].reshape(S, N_ext)[:, :N]
    UT = np.ascontiguousarray(U.T)
    r_pde = Ut - spmm(L, UT).T - problem.f.astype(dtype)
    r_bc = spmm(B, UT).T - problem.g.astype(dtype)
    r_ic = U[0, :N] - problem.u0.astype(dtype)
    w_pde = 1.0 / (S * N)
    w_bc = 1.0 / (S * N_b)
    loss = float(r_ic @ r_ic) / N + w_pde * float(np.sum(r_pde**2)) + w_bc * float(np.sum(r_bc**2))

    gU = -2.0 * w_pde * spmm(LT, np.ascontiguousarray(r_pde.T)).T
    gU += 2.0 * w_bc * spmm(BT, np.ascontiguousarray(r_bc.T)).T
    gU[0, :N] += (2.0 / N) * r_ic
    gUt = np.zeros((S, N_ext), dtype=dtype)
    gUt[:, :N] = 2.0 * w_pde * r_pde
    grad = jet_backward(params, cache, gu=gU.ravel(), gu1=gUt.reshape(-1, 1))
    return loss, grad


def vanilla_heat_loss(params: MlpParams, X, normals, problem: HeatProblem):
    """Same three terms as :func:`dt_heat_loss` with jet Laplacian and normal derivative.

    ``X`` holds interior then boundary points (no ghosts); the last
    ``len(normals)`` rows are the boundary.
    """
    X = np.asarray(X)
    N, N_b = len(X), len(normals)
    N_i = N - N_b
    S = problem.n_t + 1
    dtype = params.dtype
    Xt = space_time(X, problem.times)
    d = X.shape[1]
    u, u1, u2, cache = jet_forward(params, Xt, np.eye(d + 1), order=2)
    U = u.reshape(S, N)
    G = u1.reshape(S, N, d + 1)
    lap = u2[:, :d].sum(axis=1).reshape(S, N)
    r_pde = G[:, :, d] - lap - problem.f.astype(dtype)
    dn = np.sum(G[:, N_i:, :d] * normals, axis=2)
    r_bc = problem.alpha * dn + problem.beta * U[:, N_i:] - problem.g.astype(dtype)
    r_ic = U[0] - problem.u0.astype(dtype)
    w_pde = 1.0 / (S * N)
    w_bc = 1.0 / (S * N_b)
    loss = float(r_ic @ r_ic) / N + w_pde * float(np.sum(r_pde**2)) + w_bc * float(np.sum(r_bc**2))

    gU = np.zeros((S, N), dtype=dtype)
    gU[0] += (2.0 / N) * r_ic
    gU[:, N_i:] += 2.0 * w_bc * problem.beta * r_bc
    gG = np.zeros((S, N, d + 1), dtype=dtype)
    gG[:, :, d] = 2.0 * w_pde * r_pde
    gG[:, N_i:, :d] = 2.0 * w_bc * problem.alpha * r_bc[..., None] * normals
    gL = np.zeros((S * N, d + 1), dtype=dtype)
    gL[:, :d] = -2.0 * w_pde * r_pde.reshape(-1, 1)
    return loss, jet_backward(params, cache, gU.ravel(), gG.reshape(-1, d + 1), gL)


# -- training --------------------------------------------------------------------

@dataclass
class TrainRecord:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    rel_error: list = field(default_factory=list)
    cum_seconds: list = field(default_factory=list)
    assembly_seconds: float = 0.0
    stop_reason: str = "max_epochs"
    config: dict = field(default_factory=dict)

    def append(self, epoch, loss, err, seconds):
        self.epochs.append(int(epoch))
        self.loss.append(float(loss))
        self.rel_error.append(float(err))
        self.cum_seconds.append(float(seconds))

    @property
    def best_index(self):
        return int(np.nanargmin(self.rel_error))

    @property
    def best_error(self):
        return self.rel_error[self.best_index]

    @property
    def best_epoch(self):
        return self.epochs[self.best_index]

    @property
    def best_time(self):
        """Training seconds needed to reach the best error."""
        return self.cum_seconds[self.best_index]

    @property
    def total_seconds(self):
        return self.cum_seconds[-1] if self.cum_seconds else 0.0

    def summary(self):
        return {
            "best_error": self.best_error,
            "best_epoch": self.best_epoch,
            "best_time": self.best_time,
            "final_error": self.rel_error[-1],
            "final_loss": self.loss[-1],
            "epochs_run": self.epochs[-1],
            "assembly_seconds": self.assembly_seconds,
            "train_seconds": self.total_seconds,
            "total_seconds": self.total_seconds + self.assembly_seconds,
            "stop_reason": self.stop_reason,
            "config": self.config,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "rel_error", "cum_seconds"])
            for row in zip(self.epochs, self.loss, self.rel_error, self.cum_seconds):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def read_csv(cls, path):
        rec = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec.append(int(row["epoch"]), float(row["loss"]), float(row["rel_error"]),
                           float(row["cum_seconds"]))
        return rec

    def write(self, out_dir):
        import os
        os.makedirs(out_dir, exist_ok=True)
        self.write_csv(os.path.join(out_dir, "record.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


@dataclass
class Objective:
    """Callable theta -> (loss, grad) bundling a problem with its operators."""

    problem: object
    mode: str
    params: MlpParams
    L: CsrMatrix | None = None
    B: CsrMatrix | None = None

    def __post_init__(self):
        cloud = self.problem.cloud
        dtype = self.params.dtype
        if self.mode == "dt":
            self.LT, self.BT = transpose(self.L), transpose(self.B)
            self.X_ext = cloud.extended.astype(dtype)
        self.X = cloud.points.astype(dtype)
        self.normals = cloud.normals.astype(dtype)
        if isinstance(self.problem, PoissonProblem):
            self.f = self.problem.f.astype(dtype)
            self.g = self.problem.g.astype(dtype)

    def __call__(self, theta):
        params = self.params.with_theta(theta)
        pr = self.problem
        if isinstance(pr, PoissonProblem):
            if self.mode == "dt":
                return dt_poisson_loss(params, self.X_ext, self.L, self.B, self.f, self.g,
                                       pr.mode, self.LT, self.BT)
            cloud = pr.cloud
            return vanilla_poisson_loss(params, self.X[:cloud.n_interior],
                                        self.X[cloud.n_interior:], self.normals, self.f,
                                        self.g, pr.mode, pr.alpha, pr.beta)
        if self.mode == "dt":
            return dt_heat_loss(params, self.X_ext, self.L, self.B, pr, self.LT, self.BT)
        return vanilla_heat_loss(params, self.X, self.normals, pr)


def build_matrices(cloud, p, alpha=1.0, beta=1.0, dtype=np.float64):
    """Laplacian and Robin matrices plus the wall time spent assembling them."""
    t0 = time.perf_counter()
    L = assemble_matrix(cloud, "laplacian", p, dtype=dtype)
    B = assemble_matrix(cloud, "robin", p, alpha=alpha, beta=beta, dtype=dtype)
    return L, B, time.perf_counter() - t0


class ErrorProbe:
    """Relative l2 error of the network against the manufactured solution."""

    def __init__(self, problem, test_points=None, dtype=np.float64):
        if isinstance(problem, HeatProblem):
            self.X = space_time(problem.cloud.points, problem.times).astype(dtype)
            self.exact = problem.exact().ravel()
        else:
            pts = problem.cloud.points if test_points is None else test_points
            self.X = np.asarray(pts).astype(dtype)
            self.exact = PoissonProblem.exact(pts)

    def __call__(self, params):
        return relative_l2(predict(params, self.X), self.exact)


def train(problem, mode="dt", p=4, depth=4, width=50, lbfgs: LbfgsConfig | None = None,
          seed=0, precision="fp64", test_points=None, matrices=None, epochs=None,
          callback=None, eval_every=1, init_params: MlpParams | None = None) -> TrainRecord:
    """Full-batch L-BFGS training; one optimizer step per epoch.

    Records epoch 0 (the initial network) and then every ``eval_every``
    epochs plus the last one. Assembly time of the RBF-FD matrices and the
    test-error evaluation are kept out of the training clock. ``init_params``
    (e.g. from a checkpoint) replaces the seeded initialization.
    """
    if mode not in ("dt", "vanilla"):
        raise ValueError(f"unknown training mode {mode!r}")
    lbfgs = lbfgs or LbfgsConfig()
    max_epochs = lbfgs.max_epochs if epochs is None else epochs
    dtype = DTYPES[precision]
    cloud = problem.cloud
    d_in = cloud.dim + (1 if isinstance(problem, HeatProblem) else 0)
    if init_params is None:
        params = init_weights(architecture(d_in, depth, width), seed, dtype)
    else:
        if init_params.sizes[0] != d_in:
            raise ValueError(f"checkpoint expects {init_params.sizes[0]} inputs, problem has {d_in}")
        params = init_params.astype(dtype)
        depth, width = init_params.depth, init_params.sizes[1]

    record = TrainRecord(config={
        "pde": type(problem).__name__, "mode": mode, "p": p, "depth": depth, "width": width,
        "seed": seed, "precision": np.dtype(dtype).name, "N": cloud.n,
        "N_interior": cloud.n_interior, "N_boundary": cloud.n_boundary,
        "lbfgs": asdict(lbfgs),
    })
    L = B = None
    if mode == "dt":
        if matrices is None:
            L, B, record.assembly_seconds = build_matrices(cloud, p, problem.alpha,
                                                           problem.beta, dtype)
        else:
            L, B = (m.astype(dtype) for m in matrices[:2])
            record.assembly_seconds = matrices[2] if len(matrices) > 2 else 0.0
    objective = Objective(problem, mode, params, L, B)
    probe = ErrorProbe(problem, test_points, dtype)

    opt = Lbfgs(params.theta, lbfgs)
    t0 = time.perf_counter()
    opt.f, opt.g = opt._evaluate(objective, opt.x)
    clock = time.perf_counter() - t0
    record.append(0, opt.f, probe(params), clock)
    retried = False
    for epoch in range(1, max_epochs + 1):
        t0 = time.perf_counter()
        try:
            theta, loss = opt.step(objective)
        except LineSearchError as exc:
            if retried or not opt.s_hist:
                record.stop_reason = f"line search failed: {exc}"
                break
            # one restart from steepest descent before giving up
            opt.reset_memory()
            retried = True
            try:
                theta, loss = opt.step(objective)
            except LineSearchError as exc2:
                record.stop_reason = f"line search failed: {exc2}"
                break
        else:
            retried = False
        clock += time.perf_counter() - t0
        if opt.converged and opt.epoch < epoch:
            record.stop_reason = "converged"
            break
        last = epoch == max_epochs or opt.converged
        if epoch % eval_every == 0 or last:
            record.append(epoch, loss, probe(params.with_theta(theta)), clock)
            if callback is not None:
                callback(epoch, record, theta)
        if opt.converged:
            record.stop_reason = "converged"
            break
    if record.epochs[-1] != opt.epoch:
        record.append(opt.epoch, opt.f, probe(params.with_theta(opt.x)), clock)
    record.params = params.with_theta(opt.x)
    return record
