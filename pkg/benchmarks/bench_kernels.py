"""Compiled kernels versus the NumPy fallback.

    python benchmarks/bench_kernels.py [--n 1663] [--repeats 20] [--json out.json]

Times each routine in ``dtpinn._kernels`` and its twin in ``dtpinn._fallback``
on inputs sized like a DT-PINN training run, and checks the outputs agree.
"""

import argparse
import json
import time

import numpy as np

from dtpinn import _fallback
from dtpinn.geometry import DomainShape, generate_nodes
from dtpinn.rbf_fd import assemble_matrix

try:
    from dtpinn import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeats):
    fn()
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n):
    cloud = generate_nodes(DomainShape.unit_disk(), n, seed=0)
    L = assemble_matrix(cloud, "laplacian", 4)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(L.n_cols)
    V = np.ascontiguousarray(rng.standard_normal((L.n_cols, 25)))
    K, B, W = 5, cloud.n, 50
    Z = rng.standard_normal((K, B, W))
    T = np.tanh(Z[0])
    G = rng.standard_normal((K, B, W))

    def spmv(mod):
        out = np.empty(L.n_rows)
        mod.csr_spmv(L.row_ptr, L.col_idx, L.values, v, out)
        return out

    def spmm(mod):
        out = np.empty((L.n_rows, V.shape[1]))
        mod.csr_spmm(L.row_ptr, L.col_idx, L.values, V, out)
        return out

    def tanh_fwd(mod):
        A = np.empty_like(Z)
        mod.jet_tanh_forward(Z, 2, 2, A, T)
        return A

    def tanh_bwd(mod):
        out = np.empty_like(G)
        mod.jet_tanh_backward(G, Z, T, 2, 2, out)
        return out

    seeds = np.array([[np.cos(a), np.sin(a)] for a in np.linspace(0, 2 * np.pi, 120, endpoint=False)])
    uni = np.random.default_rng(1).random(400_000)

    def disk(mod):
        pts, npts, _ = mod.poisson_disk(seeds, 0.04, 0.0, 5, 0.01, 30, uni, 4000)
        return np.asarray(pts)[:npts]

    return {"csr_spmv": spmv, "csr_spmm(25 rhs)": spmm, "jet_tanh_forward": tanh_fwd,
            "jet_tanh_backward": tanh_bwd, "poisson_disk": disk}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1663)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rows = []
    print(f"{'kernel':<20} {'cython [ms]':>12} {'numpy [ms]':>12} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases(args.n).items():
        diff = float(np.max(np.abs(fn(_kernels) - fn(_fallback))))
        reps = max(1, args.repeats // 10) if name == "poisson_disk" else args.repeats
        tc = best_of(lambda: fn(_kernels), reps)
        tp = best_of(lambda: fn(_fallback), reps)
        rows.append({"kernel": name, "compiled_s": tc, "fallback_s": tp,
                     "speedup": tp / tc, "max_abs_diff": diff})
        print(f"{name:<20} {tc * 1e3:12.3f} {tp * 1e3:12.3f} {tp / tc:8.1f} {diff:11.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
