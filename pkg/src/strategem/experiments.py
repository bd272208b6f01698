"""Runs built from an ExperimentConfig: plans, single simulations, K sweeps, summaries."""

import logging
from concurrent.futures import ProcessPoolExecutor

from .errors import InfeasiblePlanError, ValidationError
from .planner import make_plan, solve
from .simulator import run

log = logging.getLogger(__name__)


def plan_for(cfg, k=None, compute_scale=None):
    cluster = cfg.cluster if k is None else cfg.cluster.with_k(k)
    plan = solve(cfg.graph, cluster, cfg.schedule, cfg.params, cfg.sim.solver, cfg.sim.mem_buckets, compute_scale)
    return plan


def run_mode(cfg, mode, k=None, seed=None, record_trace=False):
    cluster = cfg.cluster if k is None else cfg.cluster.with_k(k)
    seed = cfg.seeds[0] if seed is None else seed
    return run(cfg.graph, cluster, cfg.schedule, mode, cfg.drift, cfg.params, seed, cfg.sim, record_trace)


def _sweep_point(args):
    cfg, mode, k, seed = args
    try:
        metrics, _ = run_mode(cfg, mode, k, seed)
        return {"mode": mode, "k": k, "status": "ok", "metrics": metrics.to_dict()}
    except InfeasiblePlanError as exc:
        return {"mode": mode, "k": k, "status": "infeasible", "error": str(exc)}
    except ValidationError as exc:
        return {"mode": mode, "k": k, "status": "unsupported", "error": str(exc)}


def sweep(cfg, k_values=None, modes=None, seed=None, jobs=1):
    """Every (mode, K) point; speedup is relative to the single-device run.

    Infeasible or unsupported points (HP on a prime K) are kept as rows
    without timings; the sweep continues past them.
    """
    k_values = list(cfg.k_values if k_values is None else k_values)
    modes = list(cfg.modes if modes is None else modes)
    if not k_values or any(k < 1 for k in k_values):
        raise ValidationError("k_values must be non-empty and each >= 1")
    seed = cfg.seeds[0] if seed is None else seed
    points = [(cfg, "single", 1, seed)]
    points += [(cfg, m, k, seed) for k in k_values for m in modes if m != "single"]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, points))
    else:
        results = [_sweep_point(p) for p in points]

    base = results[0]
    if base["status"] != "ok":
        raise InfeasiblePlanError(f"single-device baseline is infeasible: {base['error']}",
                                  float("nan"), float("nan"))
    t1 = base["metrics"]["total_time_s"]
    rows = []
    for k in k_values:
        if "single" in modes:
            rows.append(_row("single", k, base, t1, speedup_k=1))
        for r in results[1:]:
            if r["k"] == k:
                rows.append(_row(r["mode"], k, r, t1, speedup_k=k))
    return rows


def _row(mode, k, result, t1, speedup_k):
    row = {"mode": mode, "k": k, "status": result["status"], "total_time_s": None, "speedup": None,
           "efficiency": None, "comm_fraction": None, "peak_mem_bytes": None}
    if result["status"] == "ok":
        m = result["metrics"]
        speedup = t1 / m["total_time_s"]
        row.update(total_time_s=m["total_time_s"], speedup=speedup, efficiency=speedup / speedup_k,
                   comm_fraction=m["comm_fraction"], peak_mem_bytes=m["peak_mem_bytes"])
    return row


def compare_modes(cfg, seed=None, modes=None):
    """All modes at the config's K plus the single-device baseline; returns {mode: SimMetrics}."""
    modes = list(cfg.modes if modes is None else modes)
    out = {}
    for mode in modes:
        out[mode], _ = run_mode(cfg, mode, seed=seed)
    return out


def speedups(results):
    t1 = results["single"].total_time
    return {m: t1 / r.total_time for m, r in results.items()}


def recompute_plan(cfg, labels, k=None):
    """Rebuild a Plan from strategy labels (as stored in plan files)."""
    from .costmodel import Strategy

    cluster = cfg.cluster if k is None else cfg.cluster.with_k(k)
    assignment = [Strategy.from_label(label, cluster.k) for label in labels]
    return make_plan(assignment, cfg.graph, cluster, cfg.schedule, cfg.params, "given")
