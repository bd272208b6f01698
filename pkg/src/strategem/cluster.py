"""Device pool and interconnect.

Unit conventions: memory in GiB (``GB = 2**30`` bytes), link bandwidth in
decimal GB/s (``1e9`` bytes/s), throughput in TFLOP/s (``1e12``), latency in
microseconds.
"""

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError

GIB = 2**30
GB_PER_S = 1e9
TFLOPS = 1e12
MICROSECOND = 1e-6

UNITS_HEADER = {
    "mem_capacity": "bytes (input GB = 2**30 bytes)",
    "link_bandwidth": "bytes/s (input GB/s = 1e9 bytes/s)",
    "throughput": "FLOP/s (input TFLOP/s = 1e12)",
    "link_latency": "s (input us = 1e-6 s)",
}


@dataclass(frozen=True)
class Device:
    id: int
    mem_capacity: float
    throughput: float

    def __post_init__(self):
        if not self.mem_capacity > 0:
            raise ValidationError(f"device {self.id}: mem_capacity must be positive")
        if not self.throughput > 0:
            raise ValidationError(f"device {self.id}: throughput must be positive")


@dataclass(frozen=True)
class Cluster:
    devices: tuple
    link_bandwidth: float
    link_latency: float

    def __post_init__(self):
        if len(self.devices) < 1:
            raise ValidationError("a cluster needs at least one device")
        if not self.link_bandwidth > 0:
            raise ValidationError("link_bandwidth must be positive")
        if self.link_latency < 0:
            raise ValidationError("link_latency must be non-negative")

    @property
    def k(self):
        return len(self.devices)

    @property
    def min_mem(self):
        return min(d.mem_capacity for d in self.devices)

    @property
    def throughput(self):
        return min(d.throughput for d in self.devices)

    @property
    def homogeneous(self):
        mems = {d.mem_capacity for d in self.devices}
        thr = {d.throughput for d in self.devices}
        return len(mems) == 1 and len(thr) == 1

    def with_k(self, k):
        """Same device type and links, ``k`` devices."""
        if k < 1:
            raise ValidationError("K must be >= 1")
        proto = self.devices[0]
        devices = tuple(Device(i, proto.mem_capacity, proto.throughput) for i in range(k))
        return Cluster(devices, self.link_bandwidth, self.link_latency)

    def to_dict(self):
        proto = self.devices[0]
        return {
            "k": self.k,
            "mem_gb": proto.mem_capacity / GIB,
            "throughput_tflops": proto.throughput / TFLOPS,
            "bandwidth_gbps": self.link_bandwidth / GB_PER_S,
            "latency_us": self.link_latency / MICROSECOND,
        }


def uniform_cluster(k, mem_gb=32.0, throughput_tflops=15.0, bandwidth_gbps=25.0, latency_us=5.0):
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ValidationError(f"K must be a positive integer, got {k!r}")
    for name, value in (("mem_gb", mem_gb), ("throughput_tflops", throughput_tflops),
                        ("bandwidth_gbps", bandwidth_gbps)):
        if not value > 0:
            raise ValidationError(f"{name} must be positive, got {value!r}")
    if latency_us < 0:
        raise ValidationError(f"latency_us must be non-negative, got {latency_us!r}")
    devices = tuple(Device(i, mem_gb * GIB, throughput_tflops * TFLOPS) for i in range(k))
    return Cluster(devices, bandwidth_gbps * GB_PER_S, latency_us * MICROSECOND)


_KEYS = {"k", "mem_gb", "throughput_tflops", "bandwidth_gbps", "latency_us"}
_SHORT = {"k": "k", "mem": "mem_gb", "tflops": "throughput_tflops", "throughput": "throughput_tflops",
          "bw": "bandwidth_gbps", "bandwidth": "bandwidth_gbps", "lat": "latency_us", "latency": "latency_us"}


def cluster_from_dict(d):
    unknown = set(d) - _KEYS - {"schema_version"}
    if unknown:
        raise ValidationError(f"unknown cluster fields: {sorted(unknown)}")
    if "k" not in d:
        raise ValidationError("cluster spec needs 'k'")
    args = {key: d[key] for key in _KEYS if key in d}
    return uniform_cluster(**args)


def parse_cluster(ref, base_dir=None):
    """Parse ``file:<path>``, ``k=8,mem=32,...`` or a dict into a Cluster."""
    if isinstance(ref, dict):
        return cluster_from_dict(ref)
    ref = str(ref)
    if ref.startswith("file:"):
        path = Path(ref[5:])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ValidationError(f"cluster file not found: {path}")
        with open(path) as f:
            return cluster_from_dict(json.load(f))
    fields = {}
    for part in filter(None, ref.split(",")):
        if "=" not in part:
            raise ValidationError(f"bad cluster item {part!r}; expected key=value")
        key, value = part.split("=", 1)
        key = key.strip()
        full = _SHORT.get(key, key)
        if full not in _KEYS:
            raise ValidationError(f"unknown cluster key {key!r}")
        fields[full] = int(value) if full == "k" else float(value)
    return cluster_from_dict(fields)
