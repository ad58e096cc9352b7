"""Command-line entry point: ``dtpinn {nodes,weights,train,study}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from .experiments import STUDY_IDS, read_key_values, run_study
from .geometry import DomainShape, generate_nodes, holdout_cloud, read_cloud, write_cloud
from .network import read_checkpoint, write_checkpoint
from .optimizer import LbfgsConfig
from .pinn import HeatProblem, PoissonProblem, train
from .rbf_fd import assemble_matrix
from .sparse import write_matrix

PDES = ("linear-poisson", "nonlinear-poisson", "heat")


def _shape(name):
    return DomainShape.star() if name == "star" else DomainShape.unit_disk()


def _load_lbfgs(path, overrides):
    cfg = {}
    if path:
        cfg = {k: v for k, v in read_key_values(path).items() if k.startswith("lbfgs.")}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return LbfgsConfig.from_mapping(cfg)


def cmd_nodes(args):
    cloud = generate_nodes(_shape(args.shape), args.n, seed=args.seed)
    write_cloud(args.out, cloud)
    print(json.dumps({"N_interior": cloud.n_interior, "N_boundary": cloud.n_boundary,
                      "N_ghost": cloud.n_ghost, "h": cloud.h}))
    return 0


def cmd_weights(args):
    if args.nodes_in:
        cloud = read_cloud(args.nodes_in, shape=_shape(args.shape))
    else:
        cloud = generate_nodes(_shape(args.shape), args.n, seed=args.seed)
    if args.nodes_out:
        write_cloud(args.nodes_out, cloud)
    t0 = time.perf_counter()
    M = assemble_matrix(cloud, args.operator, args.p, alpha=args.alpha, beta=args.beta)
    elapsed = time.perf_counter() - t0
    if args.matrix_dump:
        write_matrix(args.matrix_dump, M)
    print(json.dumps({"operator": args.operator, "p": args.p, "rows": M.n_rows,
                      "cols": M.n_cols, "nnz": M.nnz, "N_interior": cloud.n_interior,
                      "N_boundary": cloud.n_boundary, "assembly_seconds": elapsed}))
    return 0


def cmd_train(args):
    shape = _shape(args.shape)
    if args.nodes_in:
        cloud = read_cloud(args.nodes_in, shape=shape)
    else:
        cloud = generate_nodes(shape, args.n, seed=args.node_seed)
    if args.pde == "heat":
        problem = HeatProblem.manufactured(cloud, args.nt)
        test = None
    else:
        problem = PoissonProblem.manufactured(cloud, args.pde.split("-")[0])
        test = holdout_cloud(shape, cloud.n, seed=args.node_seed).points
    lbfgs = _load_lbfgs(args.config, {"lbfgs.lr": args.lr, "lbfgs.max_epochs": args.epochs,
                                      "lbfgs.history": args.history})
    init = read_checkpoint(args.checkpoint_in) if args.checkpoint_in else None
    rec = train(problem, args.mode, args.p, depth=args.depth, width=args.width, lbfgs=lbfgs,
                seed=args.seed, precision=args.precision, test_points=test,
                eval_every=args.eval_every, init_params=init)
    rec.config.update(pde=args.pde, target_n=args.n, shape=args.shape)
    rec.write(args.out)
    if args.checkpoint_out:
        write_checkpoint(args.checkpoint_out, rec.params)
    s = rec.summary()
    print(json.dumps({k: s[k] for k in ("best_error", "best_epoch", "epochs_run",
                                         "assembly_seconds", "total_seconds", "stop_reason")}))
    return 0


def cmd_study(args):
    report = run_study(args.id, args.config, args.out)
    print(json.dumps({"study": args.id, "report": os.path.join(args.out, "report.json"),
                      "failures": len(report.get("failures", []))}))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="dtpinn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nodes", help="generate a point cloud and write it to a text file")
    p.add_argument("--n", type=int, default=1663)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=("unit-disk", "star"), default="unit-disk")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nodes)

    p = sub.add_parser("weights", help="assemble an RBF-FD differentiation matrix")
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--operator", choices=("laplacian", "robin", "biharmonic"), default="laplacian")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--nodes-in", help="point-cloud file; generated from --n/--seed if omitted")
    p.add_argument("--nodes-out", help="write the point cloud used")
    p.add_argument("--n", type=int, default=1663)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=("unit-disk", "star"), default="unit-disk")
    p.add_argument("--matrix-dump", help="write the matrix as 'row col value' triplets")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("train", help="train a DT or vanilla PINN on a manufactured problem")
    p.add_argument("--pde", choices=PDES, default="linear-poisson")
    p.add_argument("--mode", choices=("dt", "vanilla"), default="dt")
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--precision", choices=("fp32", "fp64"), default="fp64")
    p.add_argument("--n", type=int, default=1663)
    p.add_argument("--seed", type=int, default=0, help="network initialization seed")
    p.add_argument("--node-seed", type=int, default=0)
    p.add_argument("--nodes-in")
    p.add_argument("--shape", choices=("unit-disk", "star"), default="unit-disk")
    p.add_argument("--nt", type=int, default=24, help="time steps (heat only)")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--width", type=int, default=50)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--history", type=int)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--config", help="key = value file with lbfgs.* settings")
    p.add_argument("--checkpoint-in")
    p.add_argument("--checkpoint-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("study", help="run a scripted study and write report.json")
    p.add_argument("--id", choices=STUDY_IDS, required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"dtpinn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
