"""Versioned JSON/CSV documents written by the CLI, and their validators."""

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from . import __version__
from .cluster import UNITS_HEADER
from .errors import ValidationError

SCHEMA_VERSION = 1

PLAN_FIELDS = {"schema_version": int, "kind": str, "config": str, "k": int, "solver": str, "feasible": bool,
               "step_time_s": float, "mem_per_device_bytes": float, "mem_budget_bytes": float,
               "comm_fraction": float, "hash": str, "components": list}
PLAN_COMPONENT_FIELDS = {"id": int, "name": str, "kind": str, "strategy": str, "t_comp_s": float,
                         "t_act_comm_s": float, "t_grad_sync_s": float, "reshard_s": float, "mem_bytes": float}
METRICS_FIELDS = {"schema_version": int, "kind": str, "config": str, "mode": str, "k": int, "seed": int,
                  "total_time_s": float, "throughput_samples_per_s": float, "comm_fraction": float,
                  "peak_mem_bytes": float, "replan_events": list, "checkpoint_count": int,
                  "compute_time_s": float, "comm_time_s": float, "overhead_time_s": float, "plan": list}
SWEEP_FIELDS = {"schema_version": int, "kind": str, "config": str, "rows": list}
SWEEP_COLUMNS = ["mode", "k", "status", "total_time_s", "speedup", "efficiency", "comm_fraction", "peak_mem_bytes"]


def provenance(config_name, seed=None):
    return {"tool": "strategem", "version": __version__, "config": config_name, "seed": seed,
            "units": UNITS_HEADER}


def atomic_write_text(path, text):
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def write_csv(path, columns, rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in columns})
    atomic_write_text(path, buf.getvalue())


def plan_document(plan, graph, config_name):
    comps = []
    for i, (c, s, est) in enumerate(zip(graph, plan.assignment, plan.per_component)):
        comps.append({"id": i, "name": c.name, "kind": c.kind.value, "strategy": s.label,
                      "t_comp_s": est.t_comp, "t_act_comm_s": est.t_act_comm, "t_grad_sync_s": est.t_grad_sync,
                      "reshard_s": plan.reshard[i], "mem_bytes": est.mem_per_device})
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "plan",
        "provenance": provenance(config_name),
        "config": config_name,
        "k": plan.assignment[0].devices,
        "solver": plan.solver,
        "feasible": plan.feasible,
        "step_time_s": plan.step_time,
        "mem_per_device_bytes": plan.mem_per_device,
        "mem_budget_bytes": plan.mem_budget,
        "comm_fraction": plan.comm_time / plan.step_time if plan.step_time > 0 else 0.0,
        "hash": plan.hash,
        "components": comps,
    }


def metrics_document(metrics, config_name, seed):
    doc = metrics.to_dict()
    doc.update(kind="metrics", config=config_name, seed=seed, provenance=provenance(config_name, seed))
    return doc


def sweep_document(rows, config_name, seed):
    return {"schema_version": SCHEMA_VERSION, "kind": "sweep", "config": config_name,
            "provenance": provenance(config_name, seed), "rows": rows}


def _check_fields(doc, fields, what):
    if not isinstance(doc, dict):
        raise ValidationError(f"{what}: expected a JSON object")
    for name, typ in fields.items():
        if name not in doc:
            raise ValidationError(f"{what}: missing field {name!r}")
        value = doc[name]
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) if typ is float else isinstance(value, typ)
        if typ is int and isinstance(value, bool):
            ok = False
        if not ok:
            raise ValidationError(f"{what}: field {name!r} should be {typ.__name__}, got {type(value).__name__}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(f"{what}: field 'schema_version' is {doc['schema_version']}, expected {SCHEMA_VERSION}")


def validate_document(doc, what="document"):
    """Check a plan, metrics or sweep document; returns its kind."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValidationError(f"{what}: missing field 'kind'")
    kind = doc["kind"]
    if kind == "plan":
        _check_fields(doc, PLAN_FIELDS, what)
        for i, c in enumerate(doc["components"]):
            _check_fields({"schema_version": SCHEMA_VERSION, **c}, {"schema_version": int, **PLAN_COMPONENT_FIELDS},
                          f"{what} components[{i}]")
    elif kind == "metrics":
        _check_fields(doc, METRICS_FIELDS, what)
    elif kind == "sweep":
        _check_fields(doc, SWEEP_FIELDS, what)
        for i, row in enumerate(doc["rows"]):
            missing = [c for c in SWEEP_COLUMNS if c not in row]
            if missing:
                raise ValidationError(f"{what} rows[{i}]: missing field {missing[0]!r}")
    else:
        raise ValidationError(f"{what}: unknown kind {kind!r}")
    return kind


def load_document(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    validate_document(doc, str(path))
    return doc
