"""Command-line entry point.

Subcommands: ``solve`` (transport solver on a CSV cost matrix), ``gradcheck``
(oracle battery), ``synthetic`` (token experiment), ``eval`` (retrieval
metrics on embeddings + labels CSVs).  Structured results go to stdout or
--output as JSON/CSV; stderr carries human logs only.  Exit codes: 0 success,
1 check failure, 2 usage/configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, DataFormatError, GspoolError, NumericalFailure
from .gradcheck import run_battery
from .linalg import read_matrix_csv, read_vector_csv
from .metrics import evaluate
from .synthetic import SyntheticConfig, export_epoch_csv, export_geometry, train
from .transport import (TransportConfig, lp_oracle, smoothed_objective, solve_forward,
                        transport_cost)


def _dump_json(obj, output: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if output:
        with open(output, "w", encoding="ascii") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None


def cmd_solve(args) -> int:
    c = read_matrix_csv(args.cost_csv)
    cfg = TransportConfig(mu=args.mu, epsilon=args.epsilon,
                          max_iters=args.iters, tol=args.tol)
    sol = solve_forward(c, cfg)
    out = {
        "mu": args.mu,
        "epsilon": args.epsilon,
        "iters_run": sol.iters_run,
        "t": _finite_or_none(sol.t),
        "rho": sol.rho.tolist(),
        "plan": sol.plan.tolist(),
        "pooling_weights": sol.pooling_weights.tolist(),
        "transport_cost": transport_cost(c, sol),
        "objective_entropic": smoothed_objective(c, sol, args.epsilon),
    }
    if args.oracle:
        lp_obj, _, _ = lp_oracle(c, args.mu)
        out["lp_objective"] = lp_obj
        out["objective_gap"] = out["transport_cost"] - lp_obj
    _dump_json(out, args.output)
    return 0


def cmd_gradcheck(args) -> int:
    sizes = []
    for tok in args.sizes.split(","):
        try:
            m, n = tok.lower().split("x")
            sizes.append((int(m), int(n)))
        except ValueError:
            raise ConfigError(f"--sizes: expected MxN[,MxN...], got {tok!r}") from None
    rows = run_battery(seed=args.seed, sizes=tuple(sizes),
                       tolerance_scale=args.tolerance)
    ok = all(r["passed"] for r in rows)
    _dump_json({"seed": args.seed, "checks": rows, "all_passed": ok}, args.output)
    return 0 if ok else 1


def cmd_synthetic(args) -> int:
    with open(args.config_json, "r", encoding="ascii") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config_json}: {exc}") from None
    cfg = SyntheticConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    report = train(cfg)

    os.makedirs(args.output, exist_ok=True)
    _dump_json(report.to_json_dict(), os.path.join(args.output, "report.json"))
    export_epoch_csv(report, os.path.join(args.output, "epochs.csv"))
    export_geometry(report, os.path.join(args.output, "geometry.csv"))
    if not args.no_figures:
        from .figures import save_curves_figure, save_geometry_figure
        save_curves_figure(report, os.path.join(args.output, "curves.png"))
        save_geometry_figure(report, os.path.join(args.output, "geometry.png"))
    print(f"pooling={cfg.pooling} zsr={cfg.zsr_enabled} seed={cfg.seed}: "
          f"best MAP@R {report.best_map_at_r:.4f} at epoch {report.best_epoch} "
          f"({len(report.epochs)} epochs, {report.wall_clock_sec:.1f}s)",
          file=sys.stderr)
    return 0 if report.status == "completed" else 3


def cmd_eval(args) -> int:
    emb = read_matrix_csv(args.embeddings_csv)
    labels = read_vector_csv(args.labels_csv)
    if not np.allclose(labels, np.rint(labels)):
        raise DataFormatError(f"{args.labels_csv}: labels must be integers")
    rep = evaluate(emb, labels.astype(np.int64))
    _dump_json({
        "p_at_1": rep.p_at_1,
        "p_at_r": rep.p_at_r,
        "map_at_r": rep.map_at_r,
        "n_queries": rep.n_queries,
        "n_skipped": rep.n_skipped,
    }, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gspool",
        description="Transport-based sum pooling: solver, gradient checks, "
                    "synthetic study and retrieval metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one transport instance from a cost CSV")
    p.add_argument("cost_csv")
    p.add_argument("--mu", type=float, default=0.3)
    p.add_argument("--epsilon", type=float, default=5.0)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--oracle", action="store_true",
                   help="also run the exact LP and report the objective gap")
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("gradcheck", help="run the gradient oracle battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="3x5,1x1,8x16",
                   help="transport instance sizes, MxN comma-separated")
    p.add_argument("--tolerance", type=float, default=1.0,
                   help="scale on the built-in tolerances (see docs)")
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synthetic", help="train the synthetic token benchmark")
    p.add_argument("config_json")
    p.add_argument("--output", default=".")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_synthetic)

    p = sub.add_parser("eval", help="retrieval metrics for an embedding CSV")
    p.add_argument("embeddings_csv")
    p.add_argument("labels_csv")
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except GspoolError as exc:  # any stragglers in the hierarchy
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
