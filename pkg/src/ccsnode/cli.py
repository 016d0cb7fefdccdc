"""Command-line surface: certification, solves, experiments and sweeps.

Exit codes are a stable contract: 0 success (or certified convergent),
2 certified non-convergent, 1 any error.  Every run emits its resolved
configuration so results are reproducible from the report alone.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .ccs import ccs_report, example_methods, nesterov_method
from .datasets import load_mnist_dir, subsample, toy_exact, toy_ivp
from .errors import CcsNodeError
from .lmm import method_from_json
from .solvers import SolverConfig, integrate, trace_to_csv
from .training import (
    AdamConfig,
    SgdConfig,
    TrainConfig,
    empirical_order,
    toy_solver_config,
    train_classifier,
    train_toy,
)

DATA_DIR_ENV = "CCSNODE_DATA_DIR"


def _fmt(x):
    """Table cell: finite numbers as text, anything else as '-'."""
    if isinstance(x, float) and not np.isfinite(x):
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _emit_report(config, results, outputs, path=None):
    report = {
        "config": config,
        "results": results,
        "provenance": {
            "version": __version__,
            "seed": config.get("seed"),
            "wall_clock_s": results.get("wall_clock_s"),
        },
        "output_paths": outputs,
    }
    text = json.dumps(report, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return report


def _solver_config(args, for_toy=False):
    kind = args.solver
    if kind == "nesterov":
        if args.lipschitz is not None:
            return SolverConfig(kind="nesterov", L=args.lipschitz, beta=args.beta)
        return SolverConfig(kind="nesterov", h=args.h, beta=args.beta)
    if kind in ("euler", "rk4", "ab4"):
        return SolverConfig(kind=kind, h=args.h)
    if kind in example_methods():
        return toy_solver_config(kind, args.h)
    # treat as a path to a method spec file
    return SolverConfig(kind="lmm", h=args.h, method=method_from_json(kind))


def cmd_analyze(args) -> int:
    if args.method in example_methods():
        m = example_methods()[args.method]
    elif args.method.startswith("nesterov:"):
        m, _ = nesterov_method(float(args.method.split(":", 1)[1]))
    else:
        m = method_from_json(args.method)
    report = ccs_report(m)
    if args.json:
        print(report.to_json())
    else:
        print(f"method       : {report.method_name}")
        print(f"consistent   : {report.consistent}   "
              f"(a(1)={_fmt(report.a_at_1)}, a'(1)={_fmt(report.a_prime_at_1)}, "
              f"b(1)={_fmt(report.b_at_1)})")
        print(f"zero-stable  : {report.zero_stable}")
        print(f"convergent   : {report.convergent}")
        for r in report.roots:
            print(f"  root {r.value:.6g}  modulus={r.modulus:.6g}  mult={r.multiplicity}")
        for v in report.violations:
            print(f"  violation: {v}")
    return 0 if report.convergent else 2


def cmd_solve(args) -> int:
    if args.ivp != "toy":
        raise CcsNodeError(f"unknown IVP {args.ivp!r} (only 'toy' is built in)")
    ivp = toy_ivp()
    cfg = _solver_config(args)
    trace = integrate(cfg, ivp)
    if args.out:
        trace_to_csv(trace, args.out)
    endpoint_err = float("nan")
    if not trace.diverged:
        endpoint_err = float(
            np.max(np.abs(trace.state_values()[-1] - toy_exact(ivp.t1)))
        )
    print(f"steps={len(trace.times) - 1} nfe={trace.nfe} "
          f"diverged={trace.diverged} endpoint_error={_fmt(endpoint_err)}")
    return 0


def _toy_config(args) -> TrainConfig:
    opt = SgdConfig(args.lr, args.momentum) if args.optimizer == "sgd" \
        else AdamConfig(lr=args.lr)
    return TrainConfig(
        grad_mode=args.grad_mode,
        optimizer=opt,
        iterations=args.iters,
        nesterov_beta=args.beta,
        seed=args.seed,
    )


def cmd_train_toy(args) -> int:
    t0 = time.perf_counter()
    cfg = _toy_config(args)
    log = train_toy(args.method, args.h, cfg)
    wall = time.perf_counter() - t0
    if args.out:
        log.to_csv(args.out)
    config = {
        "command": "train-toy", "method": args.method, "h": args.h,
        "iters": args.iters, "seed": args.seed, "grad_mode": args.grad_mode,
        "optimizer": args.optimizer, "lr": args.lr,
    }
    results = {
        "final_mae": log.final_metric,
        "final_loss": log.loss[-1],
        "nfe_forward": log.nfe_forward[-1],
        "nfe_backward": log.nfe_backward[-1],
        "wall_clock_s": wall,
    }
    _emit_report(config, results, [args.out] if args.out else [],
                 path=args.report)
    print(f"method={args.method} h={args.h} final_MAE={_fmt(log.final_metric)}")
    return 0


def cmd_order(args) -> int:
    hs = [float(v) for v in args.hs.split(",")]
    cfg = _solver_config(args)
    ivp = toy_ivp()
    rep = empirical_order(cfg, ivp, toy_exact, hs)
    for h, e in zip(rep.step_sizes, rep.errors):
        print(f"h={h:g} endpoint_error={_fmt(e)}")
    print(f"slope={_fmt(rep.slope)}")
    return 0


def cmd_train_mnist(args) -> int:
    t0 = time.perf_counter()
    data_dir = args.data or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise CcsNodeError(
            f"no data directory: pass --data or set {DATA_DIR_ENV}. "
            "Expected the four MNIST IDX files (train/t10k images+labels)."
        )
    data = subsample(load_mnist_dir(data_dir), args.n_train, args.seed)
    opt = SgdConfig(args.lr, args.momentum) if args.optimizer == "sgd" \
        else AdamConfig(lr=args.lr)
    cfg = TrainConfig(
        solver=_solver_config(args),
        grad_mode=args.grad_mode,
        optimizer=opt,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    log, test_acc = train_classifier(cfg, data)
    wall = time.perf_counter() - t0
    if args.out:
        log.to_csv(args.out)
    config = {
        "command": "train-mnist", "data": data_dir, "n_train": args.n_train,
        "solver": args.solver, "h": args.h, "beta": args.beta,
        "epochs": args.epochs, "batch_size": args.batch_size,
        "optimizer": args.optimizer, "lr": args.lr,
        "momentum": args.momentum, "seed": args.seed,
        "grad_mode": args.grad_mode,
    }
    results = {
        "test_accuracy": test_acc,
        "final_train_loss": log.loss[-1],
        "initial_train_loss": log.loss[0],
        "nfe_forward": log.nfe_forward[-1],
        "nfe_backward": log.nfe_backward[-1],
        "wall_clock_s": wall,
    }
    _emit_report(config, results, [args.out] if args.out else [], path=args.report)
    print(f"test_accuracy={_fmt(float(test_acc))}")
    return 0


def _run_sweep_cell(cell):
    """One grid cell of a sweep; module-level so worker processes can pickle it."""
    method = cell.get("method", "euler")
    h = float(cell.get("h", 0.1))
    cfg = TrainConfig(
        iterations=int(cell.get("iters", 2000)),
        seed=int(cell.get("seed", 0)),
        nesterov_beta=float(cell.get("beta", 0.5)),
    )
    log = train_toy(method, h, cfg)
    return {
        "config": cell,
        "final_mae": log.final_metric,
        "final_loss": log.loss[-1],
        "nfe_forward": log.nfe_forward[-1],
    }


def cmd_sweep(args) -> int:
    with open(args.grid) as fh:
        grid = json.load(fh)
    axes = grid["grid"]
    keys = sorted(axes)
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]
    jobs = args.jobs or os.cpu_count() or 1
    t0 = time.perf_counter()
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_sweep_cell, cells))
    else:
        rows = [_run_sweep_cell(c) for c in cells]
    report = {}
    for row in rows:
        key = hashlib.sha256(
            json.dumps(row["config"], sort_keys=True).encode()
        ).hexdigest()[:16]
        report[key] = row
    out = {
        "grid_file": args.grid,
        "wall_clock_s": time.perf_counter() - t0,
        "runs": report,
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    print(f"{len(rows)} runs -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccsnode")
    sub = p.add_subparsers(dest="command", required=True)

    def add_solver_flags(sp, default_h=0.1):
        sp.add_argument("--solver", default="euler",
                        help="euler|rk4|ab4|nesterov|ex1|ex2|ex3|<method.json>")
        sp.add_argument("--h", type=float, default=default_h)
        sp.add_argument("--beta", type=float, default=0.5)
        sp.add_argument("--lipschitz", type=float, default=None)

    sp = sub.add_parser("analyze", help="certify a method against CCS conditions")
    sp.add_argument("--method", required=True,
                    help="ex1|ex2|ex3|nesterov:<beta>|<method.json>")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("solve", help="integrate an IVP and export the trace")
    sp.add_argument("--ivp", default="toy")
    add_solver_flags(sp)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("train-toy", help="toy IVP-fitting experiment")
    sp.add_argument("--method", required=True,
                    help="ex1|ex2|ex3|euler|rk4|ab4|nesterov")
    sp.add_argument("--h", type=float, required=True)
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--beta", type=float, default=0.5)
    sp.add_argument("--grad-mode", dest="grad_mode", default="unrolled",
                    choices=["unrolled", "adjoint"])
    sp.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--out", default=None)
    sp.add_argument("--report", default=None)
    sp.set_defaults(fn=cmd_train_toy)

    sp = sub.add_parser("order", help="empirical convergence order on the toy IVP")
    add_solver_flags(sp)
    sp.add_argument("--hs", default="0.1,0.05,0.025,0.0125")
    sp.set_defaults(fn=cmd_order)

    sp = sub.add_parser("train-mnist", help="desk-scale MNIST classification")
    sp.add_argument("--data", default=None)
    sp.add_argument("--n-train", dest="n_train", type=int, default=3000)
    add_solver_flags(sp)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=128)
    sp.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grad-mode", dest="grad_mode", default="unrolled",
                    choices=["unrolled", "adjoint"])
    sp.add_argument("--out", default=None)
    sp.add_argument("--report", default=None)
    sp.set_defaults(fn=cmd_train_mnist)

    sp = sub.add_parser("sweep", help="run a declarative JSON grid of toy runs")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=None)
    sp.set_defaults(fn=cmd_sweep)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # training commands: the natural default lr differs per optimizer
    if args.command in ("train-toy", "train-mnist") and getattr(args, "lr", None) is None:
        args.lr = 0.1 if args.optimizer == "sgd" else 1e-3
    try:
        return args.fn(args)
    except CcsNodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
