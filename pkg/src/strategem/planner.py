"""Strategy assignment under a per-device memory budget.

The objective is the per-step time of the slowest participating device,
summed over components, plus boundary re-sharding. Devices are homogeneous
and every strategy spans all K devices, so each device carries the same load
and the per-component maximum is the common per-device value.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .costmodel import (
    Strategy,
    estimate,
    hp_factorizations,
    plan_overhead_bytes,
    reshard_cost,
    strategy_choices,
    validate_strategy,
)
from .errors import SearchSpaceTooLarge, ValidationError

EXACT_LIMIT = 10**7
DEFAULT_MEM_BUCKETS = 4096


@dataclass(frozen=True)
class Plan:
    assignment: tuple
    step_time: float
    per_component: tuple
    reshard: tuple
    mem_per_device: float
    feasible: bool
    mem_budget: float
    solver: str = ""

    @property
    def comm_time(self):
        return math.fsum([e.t_comm for e in self.per_component] + list(self.reshard))

    @property
    def comp_time(self):
        return math.fsum(e.t_comp for e in self.per_component)

    @property
    def labels(self):
        return [s.label for s in self.assignment]

    @property
    def hash(self):
        return hashlib.sha1("|".join(self.labels).encode()).hexdigest()[:12]

    def recompute_step_time(self):
        return math.fsum([e.t_comp + e.t_comm for e in self.per_component] + list(self.reshard))


@dataclass
class CostTable:
    """Dense costs for every (component, candidate strategy) pair.

    ``reshard[i, a, b]`` is the boundary cost into component ``i`` when
    component ``i - 1`` uses choice ``a`` and ``i`` uses ``b``; row 0 is zero.
    """

    choices: list
    step: np.ndarray
    mem: np.ndarray
    reshard: np.ndarray
    uses_dp: np.ndarray
    overhead: float
    capacity: float

    @property
    def n_components(self):
        return self.step.shape[0]

    @property
    def n_choices(self):
        return self.step.shape[1]

    def objective(self, idx):
        idx = list(idx)
        total = sum(self.step[i, s] for i, s in enumerate(idx))
        total += sum(self.reshard[i, idx[i - 1], idx[i]] for i in range(1, len(idx)))
        return float(total)

    def memory(self, idx):
        idx = list(idx)
        extra = self.overhead if any(self.uses_dp[s] for s in idx) else 0.0
        return float(sum(self.mem[i, s] for i, s in enumerate(idx)) + extra)


def _check_cluster(cluster):
    if not cluster.homogeneous:
        raise ValidationError("heterogeneous clusters are not supported by the planner")


def build_table(graph, cluster, schedule, params, compute_scale=None, choices=None):
    _check_cluster(cluster)
    choices = list(choices) if choices is not None else strategy_choices(cluster.k)
    for s in choices:
        validate_strategy(s, cluster.k)
    L, S = len(graph), len(choices)
    scale = np.ones(L) if compute_scale is None else np.asarray(compute_scale, dtype=float)
    step = np.zeros((L, S))
    mem = np.zeros((L, S))
    reshard = np.zeros((L, S, S))
    for i, comp in enumerate(graph):
        for j, s in enumerate(choices):
            est = estimate(comp, s, cluster, schedule, params, scale[i])
            step[i, j] = est.t_comp + est.t_comm
            mem[i, j] = est.mem_per_device
        if i > 0:
            for a, sa in enumerate(choices):
                for b, sb in enumerate(choices):
                    reshard[i, a, b] = reshard_cost(sa, sb, comp, cluster, schedule, params)
    uses_dp = np.array([s.dp_degree > 1 for s in choices])
    return CostTable(choices, step, mem, reshard, uses_dp, params.dp_overhead_bytes, cluster.min_mem)


def make_plan(assignment, graph, cluster, schedule, params, solver="", compute_scale=None):
    """Evaluate a complete assignment into a Plan."""
    assignment = tuple(assignment)
    if len(assignment) != len(graph):
        raise ValidationError(f"assignment has {len(assignment)} strategies for {len(graph)} components")
    scale = [1.0] * len(graph) if compute_scale is None else list(compute_scale)
    per = tuple(estimate(c, s, cluster, schedule, params, scale[i]) for i, (c, s) in enumerate(zip(graph, assignment)))
    resh = [0.0]
    for i in range(1, len(graph)):
        resh.append(reshard_cost(assignment[i - 1], assignment[i], graph[i], cluster, schedule, params))
    mem = math.fsum([e.mem_per_device for e in per]) + plan_overhead_bytes(assignment, params)
    step = math.fsum([e.t_comp + e.t_comm for e in per] + resh)
    budget = cluster.min_mem
    return Plan(assignment, step, per, tuple(resh), mem, mem <= budget, budget, solver)


def objective(assignment, graph, cluster, schedule, params, compute_scale=None):
    """Sum over components of max-over-devices (t_comp + t_comm), plus re-sharding."""
    _check_cluster(cluster)
    assignment = tuple(assignment)
    if len(assignment) != len(graph):
        raise ValidationError(f"assignment has {len(assignment)} strategies for {len(graph)} components")
    scale = [1.0] * len(graph) if compute_scale is None else list(compute_scale)
    terms = []
    for i, (comp, s) in enumerate(zip(graph, assignment)):
        est = estimate(comp, s, cluster, schedule, params, scale[i])
        per_device = [est.t_comp + est.t_comm for _ in range(s.devices)]
        terms.append(max(per_device))
        if i > 0:
            terms.append(reshard_cost(assignment[i - 1], s, comp, cluster, schedule, params))
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# solvers on a CostTable; they return choice indices


def exact_on_table(table, limit=EXACT_LIMIT, chunk=1 << 16):
    """Exhaustive enumeration. Returns (indices, feasible).

    Ties resolve to the lexicographically smallest index vector.
    """
    L, S = table.n_components, table.n_choices
    total = S**L
    if total > limit:
        raise SearchSpaceTooLarge(
            f"{S}^{L} = {total} assignments exceeds the exhaustive limit {limit}; use solve_dp"
        )
    powers = S ** np.arange(L - 1, -1, -1, dtype=np.int64)
    rows = np.arange(L)
    best = None  # (obj, code)
    fallback = None  # (mem, obj, code) for the least-violating plan
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk), dtype=np.int64)
        digits = (codes[:, None] // powers[None, :]) % S
        obj = table.step[rows, digits].sum(axis=1)
        if L > 1:
            obj = obj + table.reshard[rows[1:], digits[:, :-1], digits[:, 1:]].sum(axis=1)
        mem = table.mem[rows, digits].sum(axis=1)
        mem = mem + np.where(table.uses_dp[digits].any(axis=1), table.overhead, 0.0)
        feasible = mem <= table.capacity
        if feasible.any():
            masked = np.where(feasible, obj, np.inf)
            j = int(np.argmin(masked))
            if best is None or masked[j] < best[0]:
                best = (float(masked[j]), int(codes[j]))
        elif best is None:
            order = np.lexsort((obj, mem))
            j = int(order[0])
            if fallback is None or (mem[j], obj[j]) < fallback[:2]:
                fallback = (float(mem[j]), float(obj[j]), int(codes[j]))
    code, feasible = (best[1], True) if best is not None else (fallback[2], False)
    digits = [(code // int(p)) % S for p in powers]
    return digits, feasible


def _viterbi(table, allowed):
    L, S = table.n_components, table.n_choices
    cost = np.where(allowed, table.step[0], np.inf)
    parents = []
    for i in range(1, L):
        cand = cost[:, None] + table.reshard[i]
        arg = np.argmin(cand, axis=0)
        best = cand[arg, np.arange(S)]
        cost = np.where(allowed, best + table.step[i], np.inf)
        parents.append(arg)
    s = int(np.argmin(cost))
    idx = [s]
    for arg in reversed(parents):
        s = int(arg[s])
        idx.append(s)
    return idx[::-1], float(np.min(cost))


def _bucket_weights(mem, budget, n_buckets, optimistic=False):
    bucket = budget / n_buckets
    if optimistic:
        return np.floor(mem / bucket).astype(np.int64)
    w = np.ceil(mem / bucket).astype(np.int64)
    # guard against floating division rounding a weight down
    short = w * bucket < mem
    while short.any():
        w = w + short
        short = w * bucket < mem
    return w


def _layered_dp(table, allowed, budget, n_buckets, optimistic=False):
    """DP over (component, choice, buckets used); None if nothing fits."""
    if budget <= 0:
        return None
    L, S = table.n_components, table.n_choices
    B = n_buckets
    w = _bucket_weights(table.mem, budget, B, optimistic)
    fits = allowed[None, :] & (w <= B)
    inf = np.inf
    cost = np.full((S, B + 1), inf)
    for s in range(S):
        if fits[0, s]:
            cost[s, w[0, s]] = table.step[0, s]
    parents = []
    for i in range(1, L):
        new = np.full((S, B + 1), inf)
        par = np.zeros((S, B + 1), dtype=np.int16)
        for s2 in range(S):
            if not fits[i, s2]:
                continue
            cand = cost + table.reshard[i][:, s2][:, None]
            arg = np.argmin(cand, axis=0)
            best = cand[arg, np.arange(B + 1)]
            shift = w[i, s2]
            new[s2, shift:] = best[: B + 1 - shift] + table.step[i, s2]
            par[s2, shift:] = arg[: B + 1 - shift]
        cost = new
        parents.append(par)
    flat = int(np.argmin(cost))
    if not np.isfinite(cost.flat[flat]):
        return None
    s, b = divmod(flat, B + 1)
    idx = [s]
    for i in range(L - 1, 0, -1):
        prev = int(parents[i - 1][s, b])
        b -= w[i, s]
        s = prev
        idx.append(s)
    return idx[::-1], float(cost.flat[flat])


def dp_on_table(table, mem_buckets=DEFAULT_MEM_BUCKETS):
    """Resource-constrained shortest path over the layered strategy graph.

    Memory is discretized into ``mem_buckets`` levels of the budget and each
    component's consumption is rounded up, so a plan reported feasible always
    fits. Returns (indices, feasible).
    """
    if mem_buckets < 16:
        raise ValidationError("mem_buckets must be >= 16")
    S = table.n_choices
    everything = np.ones(S, dtype=bool)
    worst = table.mem.max(axis=1).sum() + table.overhead
    if not math.isfinite(table.capacity) or worst <= table.capacity:
        idx, _ = _viterbi(table, everything)
        return idx, True

    # Upward rounding is admissible; the downward pass can recover plans that
    # fit only to within rounding, and is kept only if it passes the exact check.
    passes = []
    no_dp = ~table.uses_dp
    if table.overhead > 0 and no_dp.any():
        passes.append((no_dp, table.capacity))
        passes.append((everything, table.capacity - table.overhead))
    else:
        passes.append((everything, table.capacity))
    candidates = []
    for allowed, budget in passes:
        for optimistic in (False, True):
            found = _layered_dp(table, allowed, budget, mem_buckets, optimistic)
            if found and table.memory(found[0]) <= table.capacity:
                candidates.append((table.objective(found[0]), found[0]))
    if candidates:
        _, idx = min(candidates, key=lambda c: (c[0], c[1]))
        return idx, True
    return _least_violating(table), False


def _least_violating(table):
    options = []
    no_dp = ~table.uses_dp
    if no_dp.any():
        masked = np.where(no_dp[None, :], table.mem, np.inf)
        options.append([int(np.argmin(row)) for row in masked])
    options.append([int(np.argmin(row)) for row in table.mem])
    return min(options, key=lambda idx: (table.memory(idx), table.objective(idx), idx))


# ---------------------------------------------------------------------------
# public solvers


def solve_exact(graph, cluster, schedule, params, compute_scale=None, limit=EXACT_LIMIT):
    table = build_table(graph, cluster, schedule, params, compute_scale)
    idx, _ = exact_on_table(table, limit)
    return make_plan([table.choices[j] for j in idx], graph, cluster, schedule, params, "exact", compute_scale)


def solve_dp(graph, cluster, schedule, params, mem_buckets=DEFAULT_MEM_BUCKETS, compute_scale=None):
    table = build_table(graph, cluster, schedule, params, compute_scale)
    idx, _ = dp_on_table(table, mem_buckets)
    return make_plan([table.choices[j] for j in idx], graph, cluster, schedule, params, "dp", compute_scale)


def solve(graph, cluster, schedule, params, solver="auto", mem_buckets=DEFAULT_MEM_BUCKETS, compute_scale=None):
    """``auto`` enumerates exhaustively when the search space allows, else uses the DP."""
    if solver == "exact":
        return solve_exact(graph, cluster, schedule, params, compute_scale)
    if solver == "dp":
        return solve_dp(graph, cluster, schedule, params, mem_buckets, compute_scale)
    if solver != "auto":
        raise ValidationError(f"unknown solver {solver!r}")
    if len(strategy_choices(cluster.k)) ** len(graph) <= EXACT_LIMIT:
        return solve_exact(graph, cluster, schedule, params, compute_scale)
    return solve_dp(graph, cluster, schedule, params, mem_buckets, compute_scale)


def uniform_strategies(tag, k):
    """Candidate uniform strategies for a tag (several for HP factorizations)."""
    if tag == "DP":
        return [Strategy.dp(k)]
    if tag == "MP":
        return [Strategy.mp(k)]
    if tag == "HP":
        if k == 1:
            return [Strategy.hp(1, 1)]
        pairs = hp_factorizations(k)
        if not pairs:
            raise ValidationError(f"HP needs a factorization K = d*m with d, m > 1; K={k} has none")
        return [Strategy.hp(d, m) for d, m in pairs]
    raise ValidationError(f"unknown strategy tag {tag!r}")


def uniform_plan(tag, graph, cluster, schedule, params, compute_scale=None):
    """Same strategy for every component; HP picks its cheapest factorization (ties: larger d)."""
    _check_cluster(cluster)
    best = None
    for s in uniform_strategies(tag, cluster.k):
        plan = make_plan([s] * len(graph), graph, cluster, schedule, params, f"uniform-{tag}", compute_scale)
        if best is None or plan.step_time <= best.step_time:
            best = plan
    return best
