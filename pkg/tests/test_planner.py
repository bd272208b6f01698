import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force
from planner_instances import random_instance
from strategem.cluster import Cluster, Device, GIB, uniform_cluster
from strategem.costmodel import CostParams, Strategy, estimate, reshard_cost, strategy_choices
from strategem.errors import SearchSpaceTooLarge, ValidationError
from strategem.planner import (
    CostTable,
    dp_on_table,
    exact_on_table,
    make_plan,
    objective,
    solve,
    solve_dp,
    solve_exact,
    uniform_plan,
)
from strategem.workload import Component, Kind, ModelGraph, TrainingSchedule


def toy_table(capacity=math.inf, mem=None):
    """Three components, choices (DP, MP, HP) costing 2, 1, 1.5 each, no re-sharding."""
    choices = [Strategy.dp(4), Strategy.mp(4), Strategy.hp(2, 2)]
    step = np.tile([2.0, 1.0, 1.5], (3, 1))
    mem = np.ones((3, 3)) if mem is None else np.asarray(mem, dtype=float)
    return CostTable(choices, step, mem, np.zeros((3, 3, 3)), np.array([True, False, True]), 0.0, capacity)


def test_toy_all_mp_by_exhaustion():
    table = toy_table()
    values = {a: table.objective(a) for a in itertools.product(range(3), repeat=3)}
    assert len(values) == 27
    best = min(values.values())
    assert best == 3.0
    assert [a for a, v in values.items() if v == best] == [(1, 1, 1)]
    idx, feasible = exact_on_table(table)
    assert list(idx) == [1, 1, 1] and feasible
    assert list(dp_on_table(table)[0]) == [1, 1, 1]


def test_toy_memory_forces_a_choice():
    # MP too big for every component; HP is the next cheapest that fits
    table = toy_table(capacity=3.0, mem=[[1, 5, 1]] * 3)
    assert list(exact_on_table(table)[0]) == [2, 2, 2]
    assert list(dp_on_table(table)[0]) == [2, 2, 2]


def test_toy_infeasible():
    table = toy_table(capacity=1.0)
    assert exact_on_table(table)[1] is False
    assert dp_on_table(table)[1] is False


def one_component(flops=1e9, params=1000, act=100):
    return ModelGraph((Component(0, Kind.MLP, flops, 2 * flops, params, act),))


def test_single_device_all_tags_equal():
    g = one_component()
    cluster = uniform_cluster(1)
    sched = TrainingSchedule(global_batch=16)
    p = CostParams()
    values = {objective([s], g, cluster, sched, p) for s in (Strategy.dp(1), Strategy.hp(1, 1))}
    assert len(values) == 1
    assert values.pop() == pytest.approx(3e9 * 16 / 15e12)


def test_forced_strategy_under_memory():
    # large parameter state: only splitting parameters fits
    g = one_component(params=10**9, act=10)
    sched = TrainingSchedule(global_batch=8)
    cluster = uniform_cluster(8, mem_gb=4)
    plan = solve_exact(g, cluster, sched, CostParams())
    assert plan.feasible
    assert plan.assignment[0].mp_degree >= 4


def test_everything_violates_memory():
    g = one_component(params=10**10)
    cluster = uniform_cluster(2, mem_gb=1)
    for plan in (solve_exact(g, cluster, TrainingSchedule(), CostParams()),
                 solve_dp(g, cluster, TrainingSchedule(), CostParams())):
        assert not plan.feasible
        assert plan.mem_per_device > plan.mem_budget


def test_exact_refuses_large_space():
    g = ModelGraph(tuple(Component(i, Kind.MLP, 1e9, 2e9, 10, 10) for i in range(13)))
    with pytest.raises(SearchSpaceTooLarge):
        solve_exact(g, uniform_cluster(8), TrainingSchedule(), CostParams())
    assert solve(g, uniform_cluster(8), TrainingSchedule(), CostParams()).solver == "dp"


def test_dp_bucket_minimum():
    with pytest.raises(ValidationError):
        dp_on_table(toy_table(capacity=3.0), mem_buckets=8)


def test_uniform_hp_prime_k():
    with pytest.raises(ValidationError):
        uniform_plan("HP", one_component(), uniform_cluster(7), TrainingSchedule(), CostParams())


def test_uniform_dp_single_is_baseline():
    g = one_component()
    sched = TrainingSchedule(global_batch=32)
    plan = uniform_plan("DP", g, uniform_cluster(1), sched, CostParams())
    assert plan.step_time == pytest.approx(3e9 * 32 / 15e12)
    assert plan.comm_time == 0


def test_heterogeneous_rejected():
    cluster = Cluster((Device(0, GIB, 1e12), Device(1, 2 * GIB, 1e12)), 1e9, 0.0)
    with pytest.raises(ValidationError):
        solve(one_component(), cluster, TrainingSchedule(), CostParams())


def test_length_mismatch():
    with pytest.raises(ValidationError):
        objective([Strategy.dp(2)] * 2, one_component(), uniform_cluster(2), TrainingSchedule(), CostParams())


def test_separable_without_resharding():
    graph, cluster, sched, _ = random_instance(3)
    params = CostParams(reshard_factor=0.0)
    assignment = [strategy_choices(cluster.k)[i % 2] for i in range(len(graph))]
    expected = math.fsum(estimate(c, s, cluster, sched, params).total for c, s in zip(graph, assignment))
    assert objective(assignment, graph, cluster, sched, params) == pytest.approx(expected, rel=1e-12)


def _oracle_for(graph, cluster, sched, params):
    choices = strategy_choices(cluster.k)
    est = [[estimate(c, s, cluster, sched, params) for s in choices] for c in graph]
    resh = [[[reshard_cost(a, b, c, cluster, sched, params) for b in choices] for a in choices] for c in graph]
    overhead = params.dp_overhead_bytes

    def step_of(a):
        total = sum(est[i][j].t_comp + est[i][j].t_comm for i, j in enumerate(a))
        return total + sum(resh[i][a[i - 1]][a[i]] for i in range(1, len(a)))

    def mem_of(a):
        extra = overhead if any(choices[j].dp_degree > 1 for j in a) else 0.0
        return sum(est[i][j].mem_per_device for i, j in enumerate(a)) + extra

    return [len(choices)] * len(graph), step_of, mem_of


@pytest.mark.parametrize("seed", range(40))
def test_exact_matches_brute_force(seed):
    graph, cluster, sched, params = random_instance(seed, max_layers=5, ks=(2, 4))
    n_choices, step_of, mem_of = _oracle_for(graph, cluster, sched, params)
    best, best_a = brute_force(n_choices, step_of, mem_of, cluster.min_mem)
    plan = solve_exact(graph, cluster, sched, params)
    if best_a is None:
        assert not plan.feasible
    else:
        assert plan.feasible
        assert plan.step_time == pytest.approx(best, rel=1e-9)


@pytest.mark.parametrize("seed", range(60))
def test_dp_close_to_exact_and_admissible(seed):
    graph, cluster, sched, params = random_instance(1000 + seed)
    exact = solve_exact(graph, cluster, sched, params)
    dp = solve_dp(graph, cluster, sched, params, mem_buckets=4096)
    assert dp.feasible == exact.feasible
    if dp.feasible:
        assert dp.mem_per_device <= cluster.min_mem
        assert dp.step_time <= exact.step_time * 1.01


def test_dp_unconstrained_equals_exact():
    for seed in range(20):
        graph, cluster, sched, params = random_instance(2000 + seed)
        cluster = uniform_cluster(cluster.k, 1e6, 15, cluster.link_bandwidth / 1e9, cluster.link_latency / 1e-6)
        exact = solve_exact(graph, cluster, sched, params)
        dp = solve_dp(graph, cluster, sched, params)
        assert dp.labels == exact.labels


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_dominance_over_uniform_plans(seed):
    graph, cluster, sched, params = random_instance(seed)
    best = solve(graph, cluster, sched, params)
    for tag in ("DP", "MP", "HP"):
        if tag == "HP" and cluster.k == 2:
            continue
        u = uniform_plan(tag, graph, cluster, sched, params)
        if u.feasible:
            assert best.feasible
            assert best.step_time <= u.step_time


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_plan_self_consistency(seed):
    graph, cluster, sched, params = random_instance(seed)
    plan = solve(graph, cluster, sched, params)
    assert plan.recompute_step_time() == pytest.approx(plan.step_time, rel=1e-9)
    assert objective(plan.assignment, graph, cluster, sched, params) == pytest.approx(plan.step_time, rel=1e-9)
    assert plan.feasible == (plan.mem_per_device <= cluster.min_mem)
    again = solve(graph, cluster, sched, params)
    assert again.labels == plan.labels


def test_make_plan_hash_stable():
    g = one_component()
    c = uniform_cluster(4)
    a = make_plan([Strategy.hp(2, 2)], g, c, TrainingSchedule(), CostParams())
    b = make_plan([Strategy.hp(2, 2)], g, c, TrainingSchedule(), CostParams())
    assert a.hash == b.hash and a.labels == ["HP(2x2)"]
