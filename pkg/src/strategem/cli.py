"""Command-line entry point: plan, simulate, sweep, verify, report.

Exit codes: 0 success, 1 validation error, 2 only infeasible results,
3 internal invariant violation.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .cluster import parse_cluster
from .config import load_config
from .costmodel import CostParams
from .errors import InfeasiblePlanError, InvariantViolation, StrategemError, ValidationError
from .experiments import plan_for, run_mode, sweep
from .outputs import (
    SWEEP_COLUMNS,
    load_document,
    metrics_document,
    plan_document,
    sweep_document,
    validate_document,
    write_csv,
    write_json,
)
from .reftrainer import verify_suite
from .simulator import MODES
from .workload import resolve_model

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("strategem")


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list is empty")
    return values


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _global_flags(suppress):
    """Global flags; subcommand copies use SUPPRESS so they never overwrite values given earlier."""
    p = argparse.ArgumentParser(add_help=False)

    def default(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--config", default=default("paper_resnet"),
                   help="experiment JSON path, or a shipped name (paper_resnet, paper_vit)")
    p.add_argument("--seed", type=_seed, default=default(None), help="run seed (default: first seed in config)")
    p.add_argument("--out-dir", default=default("."), help="directory for output files")
    p.add_argument("--jobs", type=int, default=default(1), help="parallel sweep points")
    p.add_argument("--model", default=default(None), help="override workload: resnet50, vit_b16 or file:<path>")
    p.add_argument("--cluster", default=default(None), help="override cluster: file:<path> or k=8,mem=32,...")
    p.add_argument("--params", default=default(None), help="override cost parameters from a JSON file")
    p.add_argument("--solver", choices=["auto", "exact", "dp"], default=default(None))
    return p


def build_parser():
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="strategem", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="solve the strategy assignment")
    p.add_argument("--k", type=int, default=None, help="override the device count")
    p.add_argument("--out", default="plan.json")

    p = sub.add_parser("simulate", parents=[common], help="simulate a full training run")
    p.add_argument("--mode", choices=MODES, default="adaptive")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--trace", default=None, help="write the event trace CSV here")
    p.add_argument("--metrics", default=None, help="metrics JSON (default metrics_<mode>.json)")

    p = sub.add_parser("sweep", parents=[common], help="speedup vs device count for every mode")
    p.add_argument("--k-values", type=_int_list, default=None, help="e.g. 1,2,4,8 (default from config)")
    p.add_argument("--modes", default=None, help="comma-separated subset of modes")
    p.add_argument("--csv", default="sweep.csv")

    p = sub.add_parser("verify", parents=[common], help="check DP/MP update equivalence on a toy model")
    p.add_argument("--shards", type=_int_list, default=[1, 2, 4])
    p.add_argument("--steps", type=int, default=100)

    p = sub.add_parser("report", parents=[common], help="summarize metrics files")
    p.add_argument("metrics_files", nargs="*")
    p.add_argument("--plan", default=None, help="plan JSON for the strategy listing")
    return parser


def _load(args):
    cfg = load_config(args.config)
    changes = {}
    if args.model:
        changes["graph"] = resolve_model(args.model)
    if args.cluster:
        changes["cluster"] = parse_cluster(args.cluster)
    if args.params:
        path = Path(args.params)
        if not path.exists():
            raise ValidationError(f"params file not found: {path}")
        changes["params"] = CostParams.from_dict(json.loads(path.read_text()))
    if args.solver:
        changes["sim"] = replace(cfg.sim, solver=args.solver)
    return replace(cfg, **changes) if changes else cfg


def _out(args, name):
    path = Path(name)
    return path if path.is_absolute() else Path(args.out_dir) / path


def _fmt_table(headers, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h)) for i, h in enumerate(headers)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(headers, widths))]
    lines += ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def cmd_plan(args):
    cfg = _load(args)
    plan = plan_for(cfg, args.k)
    doc = plan_document(plan, cfg.graph, cfg.name)
    validate_document(doc, "plan")
    write_json(_out(args, args.out), doc)
    rows = [(c["id"], c["name"], c["kind"], c["strategy"], f"{c['t_comp_s']:.4g}",
             f"{c['t_act_comm_s'] + c['t_grad_sync_s'] + c['reshard_s']:.4g}", f"{c['mem_bytes'] / 2**30:.3f}")
            for c in doc["components"]]
    print(_fmt_table(["id", "name", "kind", "strategy", "t_comp_s", "t_comm_s", "mem_GiB"], rows))
    print(f"step_time_s={plan.step_time:.6g} mem_per_device_GiB={plan.mem_per_device / 2**30:.3f} "
          f"budget_GiB={plan.mem_budget / 2**30:.3f} feasible={plan.feasible} solver={plan.solver}")
    if not plan.feasible:
        print("no assignment fits the per-device memory budget; showing the least-violating one", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    metrics, trace = run_mode(cfg, args.mode, args.k, seed, record_trace=args.trace is not None)
    doc = metrics_document(metrics, cfg.name, seed)
    validate_document(doc, "metrics")
    write_json(_out(args, args.metrics or f"metrics_{args.mode}.json"), doc)
    if trace is not None:
        trace.to_csv(_out(args, args.trace))
    print(f"mode={metrics.mode} k={metrics.k} total_time_s={metrics.total_time:.6g} "
          f"hours={metrics.total_time / 3600:.3f} comm_fraction={metrics.comm_fraction:.4f} "
          f"peak_mem_GiB={metrics.peak_mem_per_device / 2**30:.3f} replans={len(metrics.replan_events)} "
          f"checkpoints={metrics.checkpoint_count}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load(args)
    modes = args.modes.split(",") if args.modes else None
    for m in modes or ():
        if m not in MODES:
            raise ValidationError(f"unknown mode {m!r}; expected one of {MODES}")
    seed = cfg.seeds[0] if args.seed is None else args.seed
    rows = sweep(cfg, args.k_values, modes, seed, max(1, args.jobs))
    write_csv(_out(args, args.csv), SWEEP_COLUMNS, rows)
    doc = sweep_document(rows, cfg.name, seed)
    validate_document(doc, "sweep")
    write_json(_out(args, Path(args.csv).with_suffix(".json").name), doc)
    table = [(r["mode"], r["k"], r["status"], "" if r["speedup"] is None else f"{r['speedup']:.3f}",
              "" if r["efficiency"] is None else f"{r['efficiency']:.3f}") for r in rows]
    print(_fmt_table(["mode", "k", "status", "speedup", "efficiency"], table))
    if all(r["status"] != "ok" for r in rows if r["k"] > 1 or r["mode"] == "single"):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_verify(args):
    if args.steps < 0:
        raise ValidationError("--steps must be >= 0")
    seed = 0 if args.seed is None else args.seed
    rows = verify_suite(seed=seed, shards=args.shards, steps=args.steps)
    print(_fmt_table(["check", "value", "tolerance", "result"],
                     [(n, f"{v:.3g}", f"{t:.0e}", "pass" if ok else "FAIL") for n, v, t, ok in rows]))
    if not all(ok for *_, ok in rows):
        raise InvariantViolation("strategy equivalence check failed")
    return EXIT_OK


def cmd_report(args):
    if not args.metrics_files:
        raise ValidationError("report needs at least one metrics file")
    docs = []
    for path in args.metrics_files:
        doc = load_document(path)
        if doc["kind"] != "metrics":
            raise ValidationError(f"{path}: field 'kind' is {doc['kind']!r}, expected 'metrics'")
        docs.append(doc)
    single = next((d for d in docs if d["mode"] == "single"), None)
    summary, shares = [], []
    for d in docs:
        busy = d["compute_time_s"] + d["comm_time_s"]
        row = {"mode": d["mode"], "k": d["k"], "time_h": d["total_time_s"] / 3600,
               "speedup": single["total_time_s"] / d["total_time_s"] if single else None,
               "peak_mem_gb": d["peak_mem_bytes"] / 2**30, "comm_pct": 100 * d["comm_fraction"]}
        summary.append(row)
        shares.append({"mode": d["mode"], "compute_share": d["compute_time_s"] / busy if busy else 0.0,
                       "comm_share": d["comm_time_s"] / busy if busy else 0.0})
    write_csv(_out(args, "summary.csv"), list(summary[0]), summary)
    write_csv(_out(args, "shares.csv"), ["mode", "compute_share", "comm_share"], shares)
    print(_fmt_table(["mode", "K", "time_h", "speedup", "peak_mem_GB", "comm_%"],
                     [(r["mode"], r["k"], f"{r['time_h']:.2f}", "" if r["speedup"] is None else f"{r['speedup']:.2f}",
                       f"{r['peak_mem_gb']:.3f}", f"{r['comm_pct']:.1f}") for r in summary]))
    if args.plan:
        plan = load_document(args.plan)
        if plan["kind"] != "plan":
            raise ValidationError(f"{args.plan}: field 'kind' is {plan['kind']!r}, expected 'plan'")
        listing = [{"id": c["id"], "name": c["name"], "kind": c["kind"], "strategy": c["strategy"]}
                   for c in plan["components"]]
        write_csv(_out(args, "strategies.csv"), ["id", "name", "kind", "strategy"], listing)
        print()
        print(_fmt_table(["id", "name", "kind", "strategy"], [tuple(r.values()) for r in listing]))
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "simulate": cmd_simulate, "sweep": cmd_sweep, "verify": cmd_verify,
            "report": cmd_report}


def main(argv=None):
    level = os.environ.get("STRATEGEM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InfeasiblePlanError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValidationError, StrategemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
