"""Random planning instances shared by planner and acceptance tests."""

import numpy as np

from strategem.cluster import uniform_cluster
from strategem.costmodel import CostParams, estimate, plan_overhead_bytes, strategy_choices
from strategem.workload import Component, Kind, ModelGraph, TrainingSchedule

KINDS = list(Kind)


def random_instance(seed, max_layers=8, ks=(2, 4, 8)):
    """(graph, cluster, schedule, params) with a memory budget drawn around the feasible range.

    Roughly one instance in ten gets a budget below the smallest possible
    footprint; many others sit just above it, where memory binds.
    """
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, max_layers + 1))
    k = int(rng.choice(ks))
    comps = []
    for i in range(L):
        fwd = float(10 ** rng.uniform(6, 10))
        comps.append(Component(i, KINDS[int(rng.integers(len(KINDS)))], fwd, fwd * float(rng.uniform(1.5, 2.5)),
                               int(10 ** rng.uniform(3, 8)), int(10 ** rng.uniform(3, 7))))
    graph = ModelGraph(tuple(comps))
    schedule = TrainingSchedule(global_batch=int(rng.choice([8, 32, 64, 256])))
    params = CostParams(
        mp_efficiency=float(rng.uniform(0.5, 1.0)),
        comm_rounds_mp=float(rng.uniform(0.5, 6)),
        reshard_factor=float(rng.choice([0.0, rng.uniform(0.1, 2.0)])),
        dp_overhead_bytes=float(rng.choice([0.0, 10 ** rng.uniform(5, 8)])),
    )
    bw = float(10 ** rng.uniform(0, 2.5))
    lat = float(10 ** rng.uniform(-1, 2))
    big = uniform_cluster(k, 1e6, 15, bw, lat)
    lo, hi = footprint_range(graph, big, schedule, params)
    u = rng.uniform(-0.15, 1.2)
    budget = lo + u * (hi - lo) if hi > lo else lo * (1 + u)
    budget = max(budget, 1.0)
    cluster = uniform_cluster(k, budget / 2**30, 15, bw, lat)
    return graph, cluster, schedule, params


def footprint_range(graph, cluster, schedule, params):
    """Loose bounds: smallest per-component memory (no shared overhead) and largest assignment memory."""
    choices = strategy_choices(cluster.k)
    mems = np.array([[estimate(c, s, cluster, schedule, params).mem_per_device for s in choices] for c in graph])
    lo = mems.min(axis=1).sum()
    hi = mems.max(axis=1).sum() + plan_overhead_bytes(choices, params)
    return float(lo), float(hi)
