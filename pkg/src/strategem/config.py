"""Experiment configuration files.

An experiment file is JSON with these top-level fields (all but ``workload``
and ``cluster`` optional)::

    schema_version  1
    name            label used in outputs
    workload        "resnet50" | "vit_b16" | "file:<path>" | {"generator": ..., ...} | inline spec
    cluster         {"k", "mem_gb", "throughput_tflops", "bandwidth_gbps", "latency_us"} | "file:<path>"
    schedule        {"dataset_size", "global_batch", "epochs", "bytes_per_element"}
    cost_params     CostParams fields
    drift           {"sigma_noise", "sigma_drift", "seed", "scripted": [[epoch, component, factor], ...]}
    simulation      {"profile_cost_s", "checkpoint_cost_s", "tau", "replan_policy", "profile_samples"}
    solver          "auto" | "exact" | "dp"
    mem_buckets     memory buckets for the DP solver
    modes           subset of single, dp, mp, hp, adaptive
    seeds           list of run seeds
    k_values        device counts for sweeps
    fitted          free-form notes on which constants were fitted and how

Relative file references resolve against the config file's directory.
"""

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .cluster import parse_cluster
from .costmodel import CostParams
from .errors import ValidationError
from .planner import DEFAULT_MEM_BUCKETS
from .simulator import MODES, DriftModel, SimConfig
from .workload import TrainingSchedule, resolve_model

SCHEMA_VERSION = 1

_TOP = {"schema_version", "name", "description", "workload", "cluster", "schedule", "cost_params", "drift",
        "simulation", "solver", "mem_buckets", "modes", "seeds", "k_values", "fitted"}
_SIM = {"profile_cost_s", "checkpoint_cost_s", "tau", "replan_policy", "profile_samples"}
_DRIFT = {"sigma_noise", "sigma_drift", "seed", "scripted"}
_SCHEDULE = {"dataset_size", "global_batch", "epochs", "bytes_per_element"}

SHIPPED = ("paper_resnet", "paper_vit")


@dataclass
class ExperimentConfig:
    name: str
    graph: object
    cluster: object
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    params: CostParams = field(default_factory=CostParams)
    drift: DriftModel = field(default_factory=DriftModel)
    sim: SimConfig = field(default_factory=SimConfig)
    modes: tuple = MODES
    seeds: tuple = (0,)
    k_values: tuple = (1, 2, 4, 8)
    raw: dict = field(default_factory=dict)

    def with_k(self, k):
        return replace(self, cluster=self.cluster.with_k(k))

    def with_drift(self, **changes):
        return replace(self, drift=replace(self.drift, **changes))

    def with_sim(self, **changes):
        return replace(self, sim=replace(self.sim, **changes))


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ValidationError(f"{section} must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"unknown {section} fields: {sorted(unknown)}")


def config_from_dict(data, base_dir=None):
    _check_keys("config", data, _TOP)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"config schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    for key in ("workload", "cluster"):
        if key not in data:
            raise ValidationError(f"config is missing {key!r}")
    base = Path(base_dir) if base_dir is not None else None

    graph = resolve_model(data["workload"], base)
    cluster = parse_cluster(data["cluster"], base)

    sched = data.get("schedule", {})
    _check_keys("schedule", sched, _SCHEDULE)
    schedule = TrainingSchedule(**sched)

    params = CostParams.from_dict(data.get("cost_params", {}))

    drift_raw = dict(data.get("drift", {}))
    _check_keys("drift", drift_raw, _DRIFT)
    drift = DriftModel(**{**drift_raw, "scripted": tuple(tuple(s) for s in drift_raw.get("scripted", ()))})

    sim_raw = data.get("simulation", {})
    _check_keys("simulation", sim_raw, _SIM)
    sim = SimConfig(**sim_raw, solver=data.get("solver", "auto"),
                    mem_buckets=data.get("mem_buckets", DEFAULT_MEM_BUCKETS))
    if sim.solver not in ("auto", "exact", "dp"):
        raise ValidationError(f"unknown solver {sim.solver!r}")

    modes = tuple(data.get("modes", MODES))
    for m in modes:
        if m not in MODES:
            raise ValidationError(f"unknown mode {m!r}; expected one of {MODES}")
    seeds = tuple(int(s) for s in data.get("seeds", [0]))
    if not seeds or any(s < 0 for s in seeds):
        raise ValidationError("seeds must be a non-empty list of non-negative integers")
    k_values = tuple(data.get("k_values", [1, 2, 4, 8]))
    if not k_values or any(not isinstance(k, int) or k < 1 for k in k_values):
        raise ValidationError("k_values must be a non-empty list of positive integers")

    return ExperimentConfig(str(data.get("name", graph.name)), graph, cluster, schedule, params, drift, sim,
                            modes, seeds, k_values, data)


def shipped_config_path(name):
    return resources.files("strategem") / "configs" / f"{name}.json"


def load_config(ref):
    """Load a config from a path, or by shipped name (``paper_resnet``, ``paper_vit``)."""
    ref = str(ref)
    if ref in SHIPPED:
        path = shipped_config_path(ref)
        data = json.loads(path.read_text())
        return config_from_dict(data, Path(str(path)).parent)
    path = Path(ref)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)
