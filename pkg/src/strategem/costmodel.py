"""Per-(component, strategy) cost estimates.

All times are per training step (one global mini-batch). Communication uses
a ring all-reduce alpha-beta model over the cluster's uniform links.
"""

import math
from dataclasses import dataclass, field, asdict

from .errors import ValidationError
from .workload import Kind

TAG_ORDER = {"DP": 0, "MP": 1, "HP": 2}


@dataclass(frozen=True)
class Strategy:
    tag: str
    dp_degree: int
    mp_degree: int

    def __post_init__(self):
        if self.tag not in TAG_ORDER:
            raise ValidationError(f"unknown strategy tag {self.tag!r}")
        if self.dp_degree < 1 or self.mp_degree < 1:
            raise ValidationError("strategy degrees must be >= 1")

    @classmethod
    def dp(cls, k):
        return cls("DP", k, 1)

    @classmethod
    def mp(cls, k):
        return cls("MP", 1, k)

    @classmethod
    def hp(cls, d, m):
        return cls("HP", d, m)

    @property
    def devices(self):
        return self.dp_degree * self.mp_degree

    @property
    def layout(self):
        return (self.dp_degree, self.mp_degree)

    @property
    def sort_key(self):
        return (TAG_ORDER[self.tag], self.dp_degree)

    @property
    def label(self):
        if self.tag == "HP":
            return f"HP({self.dp_degree}x{self.mp_degree})"
        return self.tag

    @classmethod
    def from_label(cls, label, k):
        label = label.strip()
        if label == "DP":
            return cls.dp(k)
        if label == "MP":
            return cls.mp(k)
        if label.startswith("HP(") and label.endswith(")"):
            d, m = label[3:-1].split("x")
            return cls.hp(int(d), int(m))
        raise ValidationError(f"cannot parse strategy label {label!r}")

    def __str__(self):
        return self.label


def validate_strategy(strategy, k):
    d, m = strategy.dp_degree, strategy.mp_degree
    if strategy.tag == "DP":
        ok = d == k and m == 1
    elif strategy.tag == "MP":
        ok = d == 1 and m == k
    else:
        ok = d * m == k and (k == 1 or (d > 1 and m > 1))
    if not ok:
        raise ValidationError(f"strategy {strategy.label} (d={d}, m={m}) is invalid for K={k}")


def hp_factorizations(k):
    """All (d, m) with d*m == k and d, m > 1, by ascending d."""
    return [(d, k // d) for d in range(2, k) if k % d == 0 and k // d > 1]


def strategy_choices(k):
    """Candidate strategies for one component, in tie-break order DP < MP < HP(d asc)."""
    if k == 1:
        return [Strategy.dp(1)]
    return [Strategy.dp(k), Strategy.mp(k)] + [Strategy.hp(d, m) for d, m in hp_factorizations(k)]


@dataclass(frozen=True)
class CostParams:
    """Cost-model constants.

    ``dp_overhead_bytes`` is a fixed per-device buffer (gradient buckets and
    collective workspace) present whenever any component uses d > 1.
    ``saturation_flops`` is the per-device work a kernel needs to keep the
    device busy; smaller per-device work takes as long as this amount (0
    disables the floor). ``kind_overrides`` maps a component kind to
    replacement ``mp_efficiency`` / ``comm_rounds_mp`` values.
    """

    bytes_per_param_state: float = 16.0
    mp_efficiency: float = 0.85
    comm_rounds_mp: float = 4.0
    reshard_factor: float = 1.0
    dp_overhead_bytes: float = 0.0
    saturation_flops: float = 0.0
    kind_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.bytes_per_param_state >= 0:
            raise ValidationError("bytes_per_param_state must be >= 0")
        if not 0 < self.mp_efficiency <= 1:
            raise ValidationError("mp_efficiency must be in (0, 1]")
        if not self.comm_rounds_mp >= 0:
            raise ValidationError("comm_rounds_mp must be >= 0")
        if not self.reshard_factor >= 0:
            raise ValidationError("reshard_factor must be >= 0")
        if not self.dp_overhead_bytes >= 0:
            raise ValidationError("dp_overhead_bytes must be >= 0")
        if not self.saturation_flops >= 0:
            raise ValidationError("saturation_flops must be >= 0")
        normalized = {}
        for kind, override in dict(self.kind_overrides).items():
            kind = Kind.parse(kind)
            unknown = set(override) - {"mp_efficiency", "comm_rounds_mp"}
            if unknown:
                raise ValidationError(f"kind_overrides[{kind.value}]: unknown fields {sorted(unknown)}")
            eff = override.get("mp_efficiency")
            if eff is not None and not 0 < eff <= 1:
                raise ValidationError(f"kind_overrides[{kind.value}].mp_efficiency must be in (0, 1]")
            rounds = override.get("comm_rounds_mp")
            if rounds is not None and not rounds >= 0:
                raise ValidationError(f"kind_overrides[{kind.value}].comm_rounds_mp must be >= 0")
            normalized[kind] = dict(override)
        object.__setattr__(self, "kind_overrides", normalized)

    def mp_efficiency_for(self, kind):
        return self.kind_overrides.get(kind, {}).get("mp_efficiency", self.mp_efficiency)

    def comm_rounds_for(self, kind):
        return self.kind_overrides.get(kind, {}).get("comm_rounds_mp", self.comm_rounds_mp)

    def to_dict(self):
        d = asdict(self)
        d["kind_overrides"] = {k.value: dict(v) for k, v in self.kind_overrides.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise ValidationError(f"unknown cost_params fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class CostEstimate:
    t_comp: float
    t_act_comm: float
    t_grad_sync: float
    mem_per_device: float

    @property
    def t_comm(self):
        return self.t_act_comm + self.t_grad_sync

    @property
    def total(self):
        return self.t_comp + self.t_comm


def allreduce_time(payload, n, cluster):
    """Ring all-reduce: reduce-scatter then all-gather, 2(n-1) steps of payload/n."""
    if n < 1:
        raise ValidationError("all-reduce needs at least one participant")
    if payload < 0:
        raise ValidationError("payload must be non-negative")
    if n == 1:
        return 0.0
    return 2 * (n - 1) / n * payload / cluster.link_bandwidth + 2 * (n - 1) * cluster.link_latency


def estimate(component, strategy, cluster, schedule, params, compute_scale=1.0):
    """Per-step compute time, communication time and per-device memory.

    ``compute_scale`` multiplies the compute time; the simulator uses it to
    carry measured drift into planning.
    """
    validate_strategy(strategy, cluster.k)
    d, m = strategy.dp_degree, strategy.mp_degree
    local_batch = schedule.global_batch / d
    eff = 1.0 if m == 1 else params.mp_efficiency_for(component.kind)

    work = component.flops * local_batch / m
    if params.saturation_flops > 0 and work > 0:
        work = max(work, params.saturation_flops)
    t_comp = work / (cluster.throughput * eff) * compute_scale

    t_act = 0.0
    if m > 1:
        rounds = params.comm_rounds_for(component.kind)
        per_direction = rounds / 2 * allreduce_time(component.activation_bytes_per_sample * local_batch, m, cluster)
        t_act = 2 * per_direction
    t_grad = 0.0
    if d > 1:
        t_grad = allreduce_time(schedule.bytes_per_element * component.param_count / m, d, cluster)

    mem = params.bytes_per_param_state * component.param_count / m + component.activation_bytes_per_sample * local_batch
    return CostEstimate(t_comp, t_act, t_grad, mem)


def reshard_cost(prev, nxt, component, cluster, schedule, params):
    """Layout conversion at the boundary into ``component``, forward plus backward."""
    if prev.layout == nxt.layout or params.reshard_factor == 0:
        return 0.0
    payload = component.activation_bytes_per_sample * schedule.global_batch
    one_way = payload / cluster.link_bandwidth + cluster.link_latency
    return 2 * params.reshard_factor * one_way


def plan_overhead_bytes(assignment, params):
    return params.dp_overhead_bytes if any(s.dp_degree > 1 for s in assignment) else 0.0


def is_finite_estimate(est):
    return all(math.isfinite(x) and x >= 0 for x in (est.t_comp, est.t_act_comm, est.t_grad_sync, est.mem_per_device))
