"""Scripted studies: operator accuracy/cost versus depth, biharmonic check,
and training sweeps over N, p and mode.

Every study writes its raw per-run data (CSV) below the output directory and
an aggregated ``report.json`` that can be regenerated from those files alone.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from .geometry import DomainShape, generate_nodes, holdout_cloud
from .network import architecture, init_weights, jet_forward, laplacian_jets
from .optimizer import LbfgsConfig
from .pinn import DTYPES, HeatProblem, PoissonProblem, TrainRecord, build_matrices, relative_l2, train
from .rbf_fd import StencilConfig, assemble_matrix
from .sparse import spmv

log = logging.getLogger(__name__)

STUDY_IDS = ("depth", "biharmonic", "linear-poisson", "nonlinear-poisson", "heat", "star",
             "fp32-dt")

_LIST_KEYS = {"n_values": int, "p_values": int, "depths": int, "seeds": int, "modes": str}
_SCALAR_KEYS = {"precision": str, "vanilla_precision": str, "shape": str, "n_t": int,
                "width": int, "depth": int, "repeats": int, "eval_every": int, "node_seed": int,
                "fd_step": float}

_DEFAULTS = {
    "depth": dict(n_values=[5000], p_values=[2, 3, 4, 5], depths=[2, 4, 6, 8],
                  seeds=list(range(15)), repeats=30),
    "biharmonic": dict(n_values=[4977], p_values=[2, 3, 4, 5], depths=[2, 4, 6, 8],
                       seeds=list(range(5)), repeats=10),
    "linear-poisson": dict(n_values=[300, 800, 1663], p_values=[2, 3, 4, 5]),
    "nonlinear-poisson": dict(n_values=[300, 800, 1663], p_values=[3, 4, 5]),
    "heat": dict(n_values=[828], p_values=[2, 3, 4, 5]),
    "star": dict(n_values=[2180], p_values=[4], shape="star"),
    "fp32-dt": dict(n_values=[300, 800, 1663], p_values=[2, 3, 4, 5], precision="fp32",
                    vanilla_precision="fp32"),
}


def read_key_values(path):
    """``key = value`` lines, ``#`` comments; an optional ``[section]`` header is allowed."""
    with open(path) as fh:
        text = fh.read()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[study]\n" + text
    parser.read_string(text)
    merged = {}
    for sec in parser.sections():
        merged.update(parser[sec])
    return merged


@dataclass
class ExperimentConfig:
    study: str
    n_values: list = field(default_factory=lambda: [1663])
    p_values: list = field(default_factory=lambda: [4])
    depths: list = field(default_factory=lambda: [4])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    modes: list = field(default_factory=lambda: ["dt", "vanilla"])
    precision: str = "fp64"
    vanilla_precision: str | None = None
    shape: str = "unit-disk"
    n_t: int = 24
    width: int = 50
    depth: int = 4
    repeats: int = 20
    eval_every: int = 1
    node_seed: int = 0
    fd_step: float = 1e-2
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)

    def __post_init__(self):
        if self.study not in STUDY_IDS:
            raise ValueError(f"unknown study id {self.study!r}")
        if self.vanilla_precision is None:
            self.vanilla_precision = self.precision
        for prec in (self.precision, self.vanilla_precision):
            if prec not in ("fp32", "fp64"):
                raise ValueError(f"precision must be fp32 or fp64, got {prec!r}")
        if any(not 1 <= p <= 8 for p in self.p_values):
            raise ValueError("p values must lie in 1..8")
        if any(n < 50 for n in self.n_values):
            raise ValueError("N values below 50 are not supported")
        if any(s < 1 for s in self.depths) or self.depth < 1 or self.width < 1:
            raise ValueError("network depth and width must be positive")
        if any(m not in ("dt", "vanilla") for m in self.modes):
            raise ValueError("modes must be dt and/or vanilla")
        if self.shape not in ("unit-disk", "star"):
            raise ValueError(f"unknown domain shape {self.shape!r}")
        if self.repeats < 1 or self.eval_every < 1 or self.n_t < 1:
            raise ValueError("repeats, eval_every and n_t must be positive")

    @classmethod
    def defaults(cls, study):
        if study not in STUDY_IDS:
            raise ValueError(f"unknown study id {study!r}")
        return cls(study, **_DEFAULTS[study])

    @classmethod
    def from_mapping(cls, study, mapping):
        """Study defaults overridden by string-valued ``mapping`` entries."""
        base = asdict(cls.defaults(study))
        base.pop("lbfgs")
        # unless the study pins it, vanilla precision follows ``precision``
        base["vanilla_precision"] = _DEFAULTS[study].get("vanilla_precision")
        lb = {}
        for key, raw in mapping.items():
            key = key.strip().lower()
            raw = str(raw).strip()
            if key.startswith("lbfgs."):
                lb[key] = raw
            elif key in _LIST_KEYS:
                base[key] = [_LIST_KEYS[key](v) for v in raw.replace(",", " ").split()]
            elif key in _SCALAR_KEYS:
                base[key] = _SCALAR_KEYS[key](raw)
            else:
                raise KeyError(f"unknown config key {key!r}")
        return cls(lbfgs=LbfgsConfig.from_mapping(lb), **base)

    @classmethod
    def from_file(cls, study, path):
        return cls.from_mapping(study, read_key_values(path))

    @property
    def domain(self):
        return DomainShape.star() if self.shape == "star" else DomainShape.unit_disk()


# -- helpers ------------------------------------------------------------------------

def _best_times(fns, repeats):
    """Minimum wall time of each callable, sampled round-robin after one warm-up call each.

    Interleaving means slow drifts in machine speed affect every callable alike
    instead of whichever happened to run during the slow stretch.
    """
    for fn in fns:
        fn()
    best = [np.inf] * len(fns)
    for _ in range(repeats):
        for i, fn in enumerate(fns):
            t0 = time.perf_counter()
            fn()
            best[i] = min(best[i], time.perf_counter() - t0)
    return best


def _timed_rows(pending, repeats):
    """Replace the callable closing each pending row by its best time.

    Rows of one (method, p) are timed together; ``repeats`` maps a method name
    to its repeat count.
    """
    groups = {}
    for i, row in enumerate(pending):
        groups.setdefault((row[2], row[3]), []).append(i)
    seconds = [0.0] * len(pending)
    for (method, _), idx in groups.items():
        for i, t in zip(idx, _best_times([pending[i][-1] for i in idx], repeats(method))):
            seconds[i] = t
    return [row[:-1] + (t,) for row, t in zip(pending, seconds)]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _stats(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def _write_report(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return report


def coefficient_of_variation(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.std() / v.mean())


# -- operator studies -----------------------------------------------------------------

def depth_study(config: ExperimentConfig, out_dir=None):
    """Laplacian of random-weight networks: fp32 jets and RBF-FD versus fp64 jets.

    Rows of ``depth.csv``: depth, seed, method, p, rel_error, seconds.
    """
    cloud = generate_nodes(config.domain, config.n_values[0], seed=config.node_seed)
    mats = {p: assemble_matrix(cloud, "laplacian", p) for p in config.p_values}
    X, Xe = cloud.points, cloud.extended
    rows = []
    for s in config.depths:
        sizes = architecture(2, s, config.width)
        for seed in config.seeds:
            p64 = init_weights(sizes, seed, np.float64)
            p32 = init_weights(sizes, seed, np.float32)
            ref = laplacian_jets(p64, X)
            u_ext = jet_forward(p64, Xe)[0]
            rows.append((s, seed, "jets-fp64", "", 0.0,
                         partial(laplacian_jets, p64, X)))
            rows.append((s, seed, "jets-fp32", "", relative_l2(laplacian_jets(p32, X), ref),
                         partial(laplacian_jets, p32, X)))
            for p, L in mats.items():
                err = relative_l2(spmv(L, u_ext), ref)
                rows.append((s, seed, "rbf-fd", p, err, partial(spmv, L, u_ext)))
    rows = _timed_rows(rows, lambda method: config.repeats)
    header = ["depth", "seed", "method", "p", "rel_error", "seconds"]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_rows(os.path.join(out_dir, "depth.csv"), header, rows)
    report = aggregate_operator_rows([dict(zip(header, map(str, r))) for r in rows])
    report.update(study=config.study, N=cloud.n, N_extended=cloud.n_extended)
    return _write_report(out_dir, report) if out_dir is not None else report


def aggregate_operator_rows(rows):
    """Seed-averaged error/time per (method, p, depth), plus SpMV depth-independence."""
    groups = {}
    for r in rows:
        key = (r["method"], r["p"], int(r["depth"]))
        groups.setdefault(key, []).append((float(r["rel_error"]), float(r["seconds"])))
    table = []
    for (method, p, s), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]), kv[0][2])):
        err, sec = zip(*vals)
        table.append({"method": method, "p": int(p) if p not in ("", None) else None,
                      "depth": s, "rel_error": _stats(err), "seconds": _stats(sec)})
    summary = {}
    for method, p in sorted({(t["method"], t["p"]) for t in table}, key=str):
        sel = sorted((t for t in table if t["method"] == method and t["p"] == p),
                     key=lambda t: t["depth"])
        times = [t["seconds"]["mean"] for t in sel]
        name = method if p is None else f"{method}-p{p}"
        summary[name] = {
            "depths": [t["depth"] for t in sel],
            "mean_error": [t["rel_error"]["mean"] for t in sel],
            "mean_seconds": times,
            "time_cov": coefficient_of_variation(times),
            "time_strictly_increasing": bool(np.all(np.diff(times) > 0)),
        }
    return {"table": table, "summary": summary}


def fd_biharmonic(params, X, step=1e-2):
    """Biharmonic of the network by 4th-order central differences of the jet Laplacian."""
    X = np.asarray(X, dtype=np.float64)
    coef = {-2: -1.0, -1: 16.0, 0: -30.0, 1: 16.0, 2: -1.0}
    out = np.zeros(len(X))
    centre = laplacian_jets(params, X)
    for axis in range(X.shape[1]):
        acc = coef[0] * centre
        for k in (-2, -1, 1, 2):
            Y = X.copy()
            Y[:, axis] += k * step
            acc = acc + coef[k] * laplacian_jets(params, Y)
        out += acc / (12.0 * step * step)
    return out


def biharmonic_study(config: ExperimentConfig, out_dir=None):
    """RBF-FD biharmonic versus differenced jet Laplacians on random networks."""
    for p in config.p_values:
        if StencilConfig(p, 4).m < 5:
            raise ValueError(f"p={p}: biharmonic stencils need a PHS exponent of at least 5")
    cloud = generate_nodes(config.domain, config.n_values[0], seed=config.node_seed)
    mats = {p: assemble_matrix(cloud, "biharmonic", p) for p in config.p_values}
    X, Xe = cloud.points, cloud.extended
    rows = []
    for s in config.depths:
        sizes = architecture(2, s, config.width)
        for seed in config.seeds:
            params = init_weights(sizes, seed, np.float64)
            ref = fd_biharmonic(params, X, config.fd_step)
            rows.append((s, seed, "jets-fd", "", 0.0,
                         partial(fd_biharmonic, params, X, config.fd_step)))
            u_ext = jet_forward(params, Xe)[0]
            for p, M in mats.items():
                rows.append((s, seed, "rbf-fd", p, relative_l2(spmv(M, u_ext), ref),
                             partial(spmv, M, u_ext)))
    rows = _timed_rows(rows, lambda method: config.repeats if method == "rbf-fd"
                       else max(1, config.repeats // 5))
    header = ["depth", "seed", "method", "p", "rel_error", "seconds"]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_rows(os.path.join(out_dir, "biharmonic.csv"), header, rows)
    report = aggregate_operator_rows([dict(zip(header, map(str, r))) for r in rows])
    report.update(study=config.study, N=cloud.n)
    return _write_report(out_dir, report) if out_dir is not None else report


# -- training sweeps ----------------------------------------------------------------------

def _run_tag(mode, n, p, seed):
    return f"{mode}_N{n}_p{p}_s{seed}" if mode == "dt" else f"{mode}_N{n}_s{seed}"


def run_plan(config: ExperimentConfig):
    """(mode, N, p, seed) tuples of a sweep; vanilla runs do not depend on p."""
    plan = []
    for n in config.n_values:
        for mode in config.modes:
            for p in (config.p_values if mode == "dt" else [None]):
                for seed in config.seeds:
                    plan.append((mode, n, p, seed))
    if not config.p_values:
        plan = [t for t in plan if t[0] != "dt"]
    return plan


def make_problem(config: ExperimentConfig, cloud):
    if config.study == "heat":
        return HeatProblem.manufactured(cloud, config.n_t)
    kind = "nonlinear" if config.study == "nonlinear-poisson" else "linear"
    return PoissonProblem.manufactured(cloud, kind)


def convergence_suite(config: ExperimentConfig, out_dir):
    """Train every (mode, N, p, seed) of the sweep; failures are logged and skipped."""
    runs_dir = os.path.join(out_dir, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    clouds, tests, mats = {}, {}, {}
    failures = []
    for mode, n, p, seed in run_plan(config):
        tag = _run_tag(mode, n, p, seed)
        try:
            if n not in clouds:
                clouds[n] = generate_nodes(config.domain, n, seed=config.node_seed)
                tests[n] = holdout_cloud(config.domain, n, seed=config.node_seed).points
            cloud = clouds[n]
            problem = make_problem(config, cloud)
            prec = config.precision if mode == "dt" else config.vanilla_precision
            matrices = None
            if mode == "dt":
                key = (n, p, prec)
                if key not in mats:
                    mats[key] = build_matrices(cloud, p, dtype=DTYPES[prec])
                matrices = mats[key]
            rec = train(problem, mode, p or 0, depth=config.depth, width=config.width,
                        lbfgs=config.lbfgs, seed=seed, precision=prec,
                        test_points=None if config.study == "heat" else tests[n],
                        matrices=matrices, eval_every=config.eval_every)
            rec.config.update(study=config.study, target_n=n, shape=config.shape)
            rec.write(os.path.join(runs_dir, tag))
            log.info("%s: best error %.3e at epoch %d", tag, rec.best_error, rec.best_epoch)
        except Exception as exc:  # keep the sweep going
            log.warning("%s failed: %s", tag, exc)
            failures.append({"run": tag, "error": f"{type(exc).__name__}: {exc}"})
    report = aggregate_runs(out_dir)
    report["failures"] = failures
    report["study"] = config.study
    return _write_report(out_dir, report)


def aggregate_runs(out_dir):
    """Seed-averaged tables rebuilt from ``runs/*/record.csv`` and ``summary.json``."""
    runs_dir = os.path.join(out_dir, "runs")
    groups = {}
    names = sorted(os.listdir(runs_dir)) if os.path.isdir(runs_dir) else []
    for name in names:
        rec_path = os.path.join(runs_dir, name, "record.csv")
        sum_path = os.path.join(runs_dir, name, "summary.json")
        if not (os.path.exists(rec_path) and os.path.exists(sum_path)):
            continue
        rec = TrainRecord.read_csv(rec_path)
        with open(sum_path) as fh:
            cfg = json.load(fh)["config"]
        key = (cfg["mode"], int(cfg.get("target_n", cfg["N"])), cfg["p"] if cfg["mode"] == "dt" else None)
        groups.setdefault(key, []).append({
            "seed": cfg["seed"], "N": cfg["N"], "best_error": rec.best_error,
            "best_epoch": rec.best_epoch, "best_time": rec.best_time,
            "final_error": rec.rel_error[-1], "epochs_run": rec.epochs[-1],
        })
    table = []
    for (mode, n, p), runs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or 0)):
        table.append({
            "mode": mode, "target_N": n, "N": runs[0]["N"], "p": p,
            "seeds": [r["seed"] for r in runs],
            "best_error": _stats([r["best_error"] for r in runs]),
            "best_epoch": _stats([r["best_epoch"] for r in runs]),
            "best_time": _stats([r["best_time"] for r in runs]),
            "runs": runs,
        })
    speedups = []
    for row in table:
        if row["mode"] != "dt":
            continue
        van = next((t for t in table if t["mode"] == "vanilla" and t["target_N"] == row["target_N"]), None)
        if van is None:
            continue
        speedups.append({
            "target_N": row["target_N"], "p": row["p"],
            "speedup": van["best_time"]["mean"] / row["best_time"]["mean"]
            if row["best_time"]["mean"] else None,
            "error_ratio": row["best_error"]["mean"] / van["best_error"]["mean"],
            "epoch_ratio": row["best_epoch"]["mean"] / van["best_epoch"]["mean"]
            if van["best_epoch"]["mean"] else None,
        })
    return {"table": table, "comparison": speedups}


def run_study(study, config_path=None, out_dir="."):
    config = (ExperimentConfig.from_file(study, config_path) if config_path
              else ExperimentConfig.defaults(study))
    if study == "depth":
        return depth_study(config, out_dir)
    if study == "biharmonic":
        return biharmonic_study(config, out_dir)
    return convergence_suite(config, out_dir)
