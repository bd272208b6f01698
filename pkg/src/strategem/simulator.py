"""Discrete-event execution of profiled, strategy-optimized training.

Every mode runs the same loop so fixed overheads are identical across modes:
an initial profiling phase, then per epoch the mini-batch events, a
checkpoint when the synthetic validation metric improves, and cheap
epoch-level cost tracking. Only the adaptive mode re-profiles and re-solves
when tracking shows a significant change. With ``replan_policy =
"every_epoch"`` every mode pays a full profile at the start of each epoch and
the adaptive mode re-solves each time.

Event durations come from the analytic cost model with the true (drifted)
compute costs; measurement noise only affects what the planner and the
re-plan trigger see.
"""

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .costmodel import CostParams, Strategy
from .errors import InfeasiblePlanError, ValidationError
from .outputs import atomic_write_text
from .planner import DEFAULT_MEM_BUCKETS, make_plan, solve, uniform_plan
from .rng import Xoshiro256, splitmix64_mix

MODES = ("single", "dp", "mp", "hp", "adaptive")

EVENT_TYPES = ("profile", "forward", "backward", "act_comm", "grad_sync", "reshard", "update", "checkpoint")
PROFILE, FORWARD, BACKWARD, ACT_COMM, GRAD_SYNC, RESHARD, UPDATE, CHECKPOINT = range(len(EVENT_TYPES))
COMPUTE_EVENTS = (FORWARD, BACKWARD)
COMM_EVENTS = (ACT_COMM, GRAD_SYNC, RESHARD)
OVERHEAD_EVENTS = (PROFILE, CHECKPOINT)


@dataclass(frozen=True)
class DriftModel:
    """Measurement noise and true-cost drift.

    ``scripted`` holds ``(epoch, component, factor)`` steps applied to the
    true compute cost at the start of that epoch.
    """

    sigma_noise: float = 0.05
    sigma_drift: float = 0.0
    seed: int = 0
    scripted: tuple = ()

    def __post_init__(self):
        if self.sigma_noise < 0 or self.sigma_drift < 0:
            raise ValidationError("drift sigmas must be >= 0")
        steps = []
        for item in self.scripted:
            epoch, comp, factor = item
            if factor <= 0:
                raise ValidationError("scripted drift factors must be positive")
            steps.append((int(epoch), int(comp), float(factor)))
        object.__setattr__(self, "scripted", tuple(steps))


@dataclass(frozen=True)
class SimConfig:
    profile_cost_s: float = 0.5
    checkpoint_cost_s: float = 2.0
    tau: float = 0.2
    replan_policy: str = "trigger"
    profile_samples: int = 16
    solver: str = "auto"
    mem_buckets: int = DEFAULT_MEM_BUCKETS

    def __post_init__(self):
        if self.replan_policy not in ("trigger", "every_epoch"):
            raise ValidationError(f"unknown replan_policy {self.replan_policy!r}")
        if self.profile_cost_s < 0 or self.checkpoint_cost_s < 0:
            raise ValidationError("overhead costs must be >= 0")
        if self.tau < 0:
            raise ValidationError("tau must be >= 0")
        if self.profile_samples < 1:
            raise ValidationError("profile_samples must be >= 1")


@dataclass(frozen=True)
class ProfiledCosts:
    t_comp: tuple
    comm_ratio: float
    epoch: int


def _stream(seed, purpose, index):
    return Xoshiro256.stream(seed, purpose, index & ((1 << 64) - 1))


def profile(graph, cluster, plan, drift, epoch, *, true_scale=None, samples=1, purpose="profile", seed=None):
    """Noisy measurement of per-component compute time under ``plan``.

    Each measurement is the true time times ``exp(N(0, sigma_noise^2))``;
    with ``samples > 1`` the reported value is the mean of that many draws.
    Communication is measured the same way in aggregate to form the ratio.
    """
    if len(plan.per_component) != len(graph):
        raise ValidationError("plan does not match the graph")
    scale = [1.0] * len(graph) if true_scale is None else list(true_scale)
    rng = _stream(drift.seed if seed is None else seed, purpose, epoch)
    sigma = drift.sigma_noise
    measured = []
    for est, s in zip(plan.per_component, scale):
        true = est.t_comp * s
        if sigma == 0:
            measured.append(true)
        else:
            measured.append(true * math.fsum(rng.lognormal_factor(sigma) for _ in range(samples)) / samples)
    comm_true = plan.comm_time
    if sigma == 0:
        comm = comm_true
    else:
        comm = comm_true * math.fsum(rng.lognormal_factor(sigma) for _ in range(samples)) / samples
    comp = math.fsum(measured)
    ratio = comm / comp if comp > 0 else 0.0
    return ProfiledCosts(tuple(measured), ratio, epoch)


def should_replan(baseline, current, tau):
    if len(baseline.t_comp) != len(current.t_comp):
        raise ValidationError("profiles cover different component counts")
    if baseline.comm_ratio > 0:
        if abs(current.comm_ratio - baseline.comm_ratio) / baseline.comm_ratio > tau:
            return True
    elif current.comm_ratio > 0:
        return True
    for b, c in zip(baseline.t_comp, current.t_comp):
        if b > 0 and abs(c - b) / b > tau:
            return True
    return False


@dataclass
class SimMetrics:
    mode: str
    k: int
    total_time: float
    throughput: float
    comm_fraction: float
    peak_mem_per_device: float
    replan_events: list
    checkpoint_count: int
    compute_time: float
    comm_time: float
    overhead_time: float
    profile_time: float
    plan_hash: str
    plan_labels: list
    feasible: bool = True

    def to_dict(self):
        return {
            "schema_version": 1,
            "mode": self.mode,
            "k": self.k,
            "total_time_s": self.total_time,
            "throughput_samples_per_s": self.throughput,
            "comm_fraction": self.comm_fraction,
            "peak_mem_bytes": self.peak_mem_per_device,
            "replan_events": [
                {"epoch": e, "old_plan": old, "new_plan": new} for e, old, new in self.replan_events
            ],
            "checkpoint_count": self.checkpoint_count,
            "compute_time_s": self.compute_time,
            "comm_time_s": self.comm_time,
            "overhead_time_s": self.overhead_time,
            "profile_time_s": self.profile_time,
            "plan_hash": self.plan_hash,
            "plan": self.plan_labels,
            "feasible": self.feasible,
        }


@dataclass
class _Block:
    epoch: int
    durations: np.ndarray
    types: np.ndarray
    comps: np.ndarray
    repeats: int
    batched: bool


class Trace:
    """Event log stored as repeated per-batch templates; materialized on demand."""

    def __init__(self):
        self.blocks = []
        self.idle = 0.0

    def add_event(self, epoch, etype, comp, duration):
        self.blocks.append(_Block(epoch, np.array([duration]), np.array([etype], dtype=np.int8),
                                  np.array([comp], dtype=np.int32), 1, False))

    def add_batches(self, epoch, durations, types, comps, repeats):
        self.blocks.append(_Block(epoch, durations, types, comps, repeats, True))

    def __len__(self):
        return sum(len(b.durations) * b.repeats for b in self.blocks)

    def arrays(self):
        """Columns: t_start, duration, event_type code, component_id, epoch, batch."""
        dur, typ, comp, ep, bat = [], [], [], [], []
        for b in self.blocks:
            n = len(b.durations)
            dur.append(np.tile(b.durations, b.repeats))
            typ.append(np.tile(b.types, b.repeats))
            comp.append(np.tile(b.comps, b.repeats))
            ep.append(np.full(n * b.repeats, b.epoch, dtype=np.int32))
            if b.batched:
                bat.append(np.repeat(np.arange(b.repeats, dtype=np.int32), n))
            else:
                bat.append(np.full(n, -1, dtype=np.int32))
        duration = np.concatenate(dur)
        t_start = np.concatenate([[0.0], np.cumsum(duration)[:-1]])
        return {
            "t_start": t_start,
            "duration": duration,
            "event_type": np.concatenate(typ),
            "component_id": np.concatenate(comp),
            "epoch": np.concatenate(ep),
            "batch": np.concatenate(bat),
        }

    def to_csv(self, path):
        cols = self.arrays()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_start", "duration", "event_type", "component_id", "epoch", "batch"])
        names = EVENT_TYPES
        for t, d, e, c, ep, b in zip(cols["t_start"].tolist(), cols["duration"].tolist(),
                                     cols["event_type"].tolist(), cols["component_id"].tolist(),
                                     cols["epoch"].tolist(), cols["batch"].tolist()):
            writer.writerow([repr(t), repr(d), names[e], c, ep, b])
        atomic_write_text(path, buf.getvalue())


def _batch_template(plan, true_scale, graph):
    """Events of one mini-batch: forward chain, backward chain, update."""
    rows = []
    L = len(graph)
    comp_times = [est.t_comp * s for est, s in zip(plan.per_component, true_scale)]
    for i in range(L):
        if plan.reshard[i] > 0:
            rows.append((RESHARD, i, plan.reshard[i] / 2))
        c = graph[i]
        fwd = comp_times[i] * (c.flops_fwd / c.flops) if c.flops > 0 else 0.0
        rows.append((FORWARD, i, fwd))
        if plan.per_component[i].t_act_comm > 0:
            rows.append((ACT_COMM, i, plan.per_component[i].t_act_comm / 2))
    for i in reversed(range(L)):
        est = plan.per_component[i]
        if est.t_act_comm > 0:
            rows.append((ACT_COMM, i, est.t_act_comm / 2))
        c = graph[i]
        bwd = comp_times[i] * (c.flops_bwd / c.flops) if c.flops > 0 else 0.0
        rows.append((BACKWARD, i, bwd))
        if est.t_grad_sync > 0:
            rows.append((GRAD_SYNC, i, est.t_grad_sync))
        if plan.reshard[i] > 0:
            rows.append((RESHARD, i, plan.reshard[i] / 2))
    rows.append((UPDATE, -1, 0.0))
    types = np.array([r[0] for r in rows], dtype=np.int8)
    comps = np.array([r[1] for r in rows], dtype=np.int32)
    durations = np.array([r[2] for r in rows], dtype=float)
    return durations, types, comps


class _Ledger:
    """Exact (rational) per-category time sums."""

    def __init__(self):
        self.by_type = [Fraction(0)] * len(EVENT_TYPES)

    def add(self, etype, duration, repeats=1):
        self.by_type[etype] += Fraction(duration) * repeats

    def add_template(self, durations, types, repeats):
        sums = [Fraction(0)] * len(EVENT_TYPES)
        for d, t in zip(durations.tolist(), types.tolist()):
            sums[t] += Fraction(d)
        for t, s in enumerate(sums):
            if s:
                self.by_type[t] += s * repeats

    def total(self, kinds=None):
        kinds = range(len(EVENT_TYPES)) if kinds is None else kinds
        return sum((self.by_type[k] for k in kinds), Fraction(0))


def _combined_seed(seed, drift):
    return splitmix64_mix(seed & ((1 << 64) - 1)) ^ (drift.seed & ((1 << 64) - 1))


def _static_plan(mode, graph, cluster, schedule, params):
    if mode == "single":
        return uniform_plan("DP", graph, cluster.with_k(1), schedule, params), cluster.with_k(1)
    return uniform_plan(mode.upper(), graph, cluster, schedule, params), cluster


def _require_feasible(plan, epoch):
    if not plan.feasible:
        raise InfeasiblePlanError(
            f"plan at epoch {epoch} needs {plan.mem_per_device:.6g} bytes/device, "
            f"exceeding the memory budget of {plan.mem_budget:.6g} bytes",
            plan.mem_per_device, plan.mem_budget,
        )


def run(graph, cluster, schedule, mode, drift=None, params=None, seed=0, config=None, record_trace=True):
    """Simulate training; returns (SimMetrics, Trace or None)."""
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    drift = drift or DriftModel()
    params = params or CostParams()
    config = config or SimConfig()
    L = len(graph)
    noise_seed = _combined_seed(seed, drift)
    trace = Trace() if record_trace else None
    ledger = _Ledger()

    def emit(epoch, etype, comp, duration):
        ledger.add(etype, duration)
        if trace is not None:
            trace.add_event(epoch, etype, comp, duration)

    adaptive = mode == "adaptive"
    if adaptive:
        run_cluster = cluster
        probe_plan = make_plan([Strategy.dp(cluster.k)] * L, graph, cluster, schedule, params, "reference")
    else:
        probe_plan, run_cluster = _static_plan(mode, graph, cluster, schedule, params)

    def replan(measured, under_plan):
        scale = [m / est.t_comp if est.t_comp > 0 else 1.0 for m, est in zip(measured.t_comp, under_plan.per_component)]
        chosen = solve(graph, run_cluster, schedule, params, config.solver, config.mem_buckets, compute_scale=scale)
        return make_plan(chosen.assignment, graph, run_cluster, schedule, params, chosen.solver)

    true_scale = [1.0] * L
    emit(-1, PROFILE, -1, config.profile_cost_s)
    measured = profile(graph, run_cluster, probe_plan, drift, 0, true_scale=true_scale,
                       samples=config.profile_samples, purpose="initial", seed=noise_seed)
    plan = replan(measured, probe_plan) if adaptive else probe_plan
    _require_feasible(plan, 0)
    baseline = measured if not adaptive else profile(
        graph, run_cluster, plan, drift, 0, true_scale=true_scale,
        samples=config.profile_samples, purpose="baseline", seed=noise_seed)

    peak_mem = plan.mem_per_device
    replans = []
    checkpoints = 0
    template_cache = {}
    drift_steps = {}
    for epoch, comp, factor in drift.scripted:
        if not 0 <= comp < L:
            raise ValidationError(f"scripted drift names component {comp}, model has {L}")
        drift_steps.setdefault(epoch, []).append((comp, factor))

    bpe = schedule.batches_per_epoch
    for epoch in range(schedule.epochs):
        if drift.sigma_drift > 0 and epoch > 0:
            rng = _stream(noise_seed, "drift", epoch)
            true_scale = [s * rng.lognormal_factor(drift.sigma_drift) for s in true_scale]
        for comp, factor in drift_steps.get(epoch, ()):
            true_scale[comp] *= factor

        if config.replan_policy == "every_epoch" and epoch > 0:
            emit(epoch, PROFILE, -1, config.profile_cost_s)
            if adaptive:
                fresh = profile(graph, run_cluster, plan, drift, epoch, true_scale=true_scale,
                                samples=config.profile_samples, purpose="reprofile", seed=noise_seed)
                new_plan = replan(fresh, plan)
                _require_feasible(new_plan, epoch)
                if new_plan.hash != plan.hash:
                    replans.append((epoch, plan.hash, new_plan.hash))
                plan = new_plan
                peak_mem = max(peak_mem, plan.mem_per_device)

        key = (plan.hash, tuple(true_scale))
        if key not in template_cache:
            template_cache.clear()
            template_cache[key] = _batch_template(plan, true_scale, graph)
        durations, types, comps = template_cache[key]
        ledger.add_template(durations, types, bpe)
        if trace is not None:
            trace.add_batches(epoch, durations, types, comps, bpe)

        improved = _stream(seed, "validation", epoch).random() < 1.0 / (1 + epoch)
        if improved:
            checkpoints += 1
            emit(epoch, CHECKPOINT, -1, config.checkpoint_cost_s)

        if config.replan_policy == "trigger":
            current = profile(graph, run_cluster, plan, drift, epoch, true_scale=true_scale,
                              samples=config.profile_samples, purpose="track", seed=noise_seed)
            if adaptive and should_replan(baseline, current, config.tau):
                emit(epoch, PROFILE, -1, config.profile_cost_s)
                fresh = profile(graph, run_cluster, plan, drift, epoch, true_scale=true_scale,
                                samples=config.profile_samples, purpose="reprofile", seed=noise_seed)
                new_plan = replan(fresh, plan)
                _require_feasible(new_plan, epoch)
                replans.append((epoch, plan.hash, new_plan.hash))
                plan = new_plan
                peak_mem = max(peak_mem, plan.mem_per_device)
                baseline = profile(graph, run_cluster, plan, drift, epoch, true_scale=true_scale,
                                   samples=config.profile_samples, purpose="baseline", seed=noise_seed)

    total = ledger.total()
    comp_t = ledger.total(COMPUTE_EVENTS)
    comm_t = ledger.total(COMM_EVENTS)
    busy = comp_t + comm_t
    total_time = float(total)
    metrics = SimMetrics(
        mode=mode,
        k=run_cluster.k,
        total_time=total_time,
        throughput=schedule.dataset_size * schedule.epochs / total_time,
        comm_fraction=float(comm_t / busy) if busy else 0.0,
        peak_mem_per_device=peak_mem,
        replan_events=replans,
        checkpoint_count=checkpoints,
        compute_time=float(comp_t),
        comm_time=float(comm_t),
        overhead_time=float(ledger.total(OVERHEAD_EVENTS)),
        profile_time=float(ledger.by_type[PROFILE]),
        plan_hash=plan.hash,
        plan_labels=plan.labels,
    )
    return metrics, trace


def closed_form_total(plan, schedule, metrics, config):
    """Noiseless, drift-free total: epochs * batches * step time + fixed overheads."""
    steps = schedule.epochs * schedule.batches_per_epoch
    return steps * plan.step_time + metrics.profile_time + metrics.checkpoint_count * config.checkpoint_cost_s


def adaptive_certificate(adaptive_metrics, adaptive_trace, static_metrics):
    """Slack of the bound: adaptive <= best static + adaptive's own re-planning overheads.

    The overheads are the extra profiling beyond the shared initial profile
    plus the epochs that ran on a stale plan before each trigger fired.
    A negative result means the bound is violated.
    """
    best_static = min(m.total_time for m in static_metrics)
    shared_profile = min(m.profile_time for m in static_metrics)
    extra_profile = adaptive_metrics.profile_time - shared_profile
    stale = 0.0
    if adaptive_metrics.replan_events:
        cols = adaptive_trace.arrays()
        batched = cols["batch"] >= 0
        for epoch, _, _ in adaptive_metrics.replan_events:
            mask = batched & (cols["epoch"] == epoch)
            stale += math.fsum(cols["duration"][mask].tolist())
    return best_static + extra_profile + stale - adaptive_metrics.total_time
