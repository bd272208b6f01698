"""Models as ordered chains of components, plus analytic ResNet/ViT generators.

FLOPs are counted as 2 per multiply-accumulate. ``activation_bytes_per_sample``
is the component's output tensor: the data crossing the boundary to the next
component, exchanged by model-parallel partial all-reduces, and kept for the
backward pass (activations are checkpointed at component granularity).
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from .errors import ValidationError


class Kind(str, Enum):
    CONV = "Conv"
    ATTENTION = "Attention"
    MLP = "Mlp"
    EMBEDDING = "Embedding"
    NORM = "Norm"
    HEAD = "Head"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value.lower() == str(value).lower():
                return kind
        raise ValidationError(f"unknown component kind {value!r}")


@dataclass(frozen=True)
class Component:
    id: int
    kind: Kind
    flops_fwd: float
    flops_bwd: float
    param_count: int
    activation_bytes_per_sample: int
    name: str = ""

    @property
    def flops(self):
        return self.flops_fwd + self.flops_bwd


@dataclass(frozen=True)
class ModelGraph:
    components: tuple
    name: str = "model"

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValidationError("a model needs at least one component")
        for i, c in enumerate(self.components):
            if c.id != i:
                raise ValidationError(f"component ids must be 0..L-1 in order; position {i} has id {c.id}")

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]


@dataclass(frozen=True)
class TrainingSchedule:
    dataset_size: int = 50_000
    global_batch: int = 512
    epochs: int = 100
    bytes_per_element: int = 4

    def __post_init__(self):
        for name in ("dataset_size", "global_batch", "epochs", "bytes_per_element"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError(f"schedule.{name} must be a positive integer, got {value!r}")

    @property
    def batches_per_epoch(self):
        return math.ceil(self.dataset_size / self.global_batch)


def _as_count(value, what):
    if isinstance(value, bool):
        raise ValidationError(f"{what} must be a number")
    if isinstance(value, float):
        if not math.isfinite(value) or value != int(value):
            raise ValidationError(f"{what} must be a finite integer, got {value!r}")
        value = int(value)
    if not isinstance(value, int):
        raise ValidationError(f"{what} must be a number, got {value!r}")
    if value < 0:
        raise ValidationError(f"{what} must be non-negative, got {value}")
    return value


def _as_flops(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValidationError(f"{what} must be finite and non-negative, got {value}")
    return value


_COMPONENT_KEYS = {"kind", "flops_fwd", "flops_bwd", "param_count", "activation_bytes_per_sample", "name"}


def build_chain(spec):
    """Build a ModelGraph from a parsed workload description.

    ``spec`` is a mapping with ``name`` and ``components``; each component has
    ``kind``, ``flops_fwd``, optional ``flops_bwd`` (defaults to twice the
    forward FLOPs), ``param_count`` and ``activation_bytes_per_sample``.
    """
    if not isinstance(spec, dict):
        raise ValidationError("workload spec must be a JSON object")
    unknown = set(spec) - {"name", "components", "schema_version"}
    if unknown:
        raise ValidationError(f"unknown workload fields: {sorted(unknown)}")
    raw = spec.get("components")
    if not raw:
        raise ValidationError("workload spec lists no components")
    components = []
    for i, entry in enumerate(raw):
        label = f"component {i}"
        if not isinstance(entry, dict):
            raise ValidationError(f"{label} must be an object")
        extra = set(entry) - _COMPONENT_KEYS
        if extra:
            raise ValidationError(f"{label}: unknown fields {sorted(extra)}")
        for key in ("kind", "flops_fwd", "param_count", "activation_bytes_per_sample"):
            if key not in entry:
                raise ValidationError(f"{label}: missing field {key!r}")
        fwd = _as_flops(entry["flops_fwd"], f"{label}.flops_fwd")
        bwd = entry.get("flops_bwd")
        bwd = 2.0 * fwd if bwd is None else _as_flops(bwd, f"{label}.flops_bwd")
        components.append(
            Component(
                id=i,
                kind=Kind.parse(entry["kind"]),
                flops_fwd=fwd,
                flops_bwd=bwd,
                param_count=_as_count(entry["param_count"], f"{label}.param_count"),
                activation_bytes_per_sample=_as_count(
                    entry["activation_bytes_per_sample"], f"{label}.activation_bytes_per_sample"
                ),
                name=str(entry.get("name", "")),
            )
        )
    return ModelGraph(tuple(components), name=str(spec.get("name", "model")))


def load_workload(path):
    with open(path) as f:
        return build_chain(json.load(f))


def graph_to_spec(graph):
    return {
        "name": graph.name,
        "components": [
            {
                "kind": c.kind.value,
                "name": c.name,
                "flops_fwd": c.flops_fwd,
                "flops_bwd": c.flops_bwd,
                "param_count": c.param_count,
                "activation_bytes_per_sample": c.activation_bytes_per_sample,
            }
            for c in graph
        ],
    }


def total_params(graph):
    return sum(c.param_count for c in graph)


def _conv_flops(k, c_in, c_out, h_out, w_out):
    return 2.0 * k * k * c_in * c_out * h_out * w_out


# BatchNorm keeps 4 values per channel on device: affine weight/bias plus the
# running mean/var buffers, which data-parallel runtimes also broadcast.
_BN_STATE_PER_CHANNEL = 4


def resnet50_like(input_resolution=32, num_classes=100, bytes_per_element=4):
    """Bottleneck ResNet-50 (3, 4, 6, 3 blocks) as stem + 16 blocks + head.

    Inputs below 64 px use the small-image stem (3x3 conv, stride 1, no
    max-pool); larger inputs use the 7x7/stride-2 stem with max-pool.
    Residual branches and projection shortcuts are folded into their block.
    """
    if input_resolution < 32:
        raise ValidationError(f"input_resolution must be >= 32, got {input_resolution}")
    if num_classes < 1:
        raise ValidationError("num_classes must be positive")
    bpe = bytes_per_element
    comps = []

    if input_resolution < 64:
        res = input_resolution
        stem_flops = _conv_flops(3, 3, 64, res, res)
        stem_params = 3 * 3 * 3 * 64 + _BN_STATE_PER_CHANNEL * 64
    else:
        conv_res = math.ceil(input_resolution / 2)
        stem_flops = _conv_flops(7, 3, 64, conv_res, conv_res)
        stem_params = 7 * 7 * 3 * 64 + _BN_STATE_PER_CHANNEL * 64
        res = math.ceil(conv_res / 2)
    comps.append(dict(kind=Kind.CONV, name="stem", flops_fwd=stem_flops, param_count=stem_params,
                      activation_bytes_per_sample=64 * res * res * bpe))

    c_in = 64
    for stage, (width, blocks) in enumerate([(64, 3), (128, 4), (256, 6), (512, 3)]):
        for b in range(blocks):
            stride = 2 if (b == 0 and stage > 0) else 1
            res_out = math.ceil(res / stride)
            c_out = 4 * width
            flops = (
                _conv_flops(1, c_in, width, res, res)
                + _conv_flops(3, width, width, res_out, res_out)
                + _conv_flops(1, width, c_out, res_out, res_out)
            )
            params = c_in * width + 9 * width * width + width * c_out
            params += _BN_STATE_PER_CHANNEL * (width + width + c_out)
            if b == 0:
                flops += _conv_flops(1, c_in, c_out, res_out, res_out)
                params += c_in * c_out + _BN_STATE_PER_CHANNEL * c_out
            comps.append(dict(kind=Kind.CONV, name=f"layer{stage + 1}.{b}", flops_fwd=flops,
                              param_count=params, activation_bytes_per_sample=c_out * res_out * res_out * bpe))
            c_in, res = c_out, res_out

    comps.append(dict(kind=Kind.HEAD, name="fc", flops_fwd=2.0 * c_in * num_classes,
                      param_count=c_in * num_classes + num_classes,
                      activation_bytes_per_sample=num_classes * bpe))
    return build_chain({"name": "resnet50", "components": [dict(c, kind=c["kind"].value) for c in comps]})


def vit_b16_like(input_resolution=224, num_classes=100, bytes_per_element=4,
                 hidden=768, depth=12, heads=12, mlp_ratio=4, patch=16):
    """ViT-B/16 as embedding + depth x (Attention, Mlp) + head.

    Each Attention component holds its pre-norm, QKV and output projection;
    each Mlp component its pre-norm and two linear layers. The head holds the
    final norm and the classifier applied to the class token.
    """
    if input_resolution % patch != 0:
        raise ValidationError(f"input_resolution {input_resolution} is not divisible by patch size {patch}")
    if hidden % heads != 0:
        raise ValidationError("hidden size must be divisible by the number of heads")
    bpe = bytes_per_element
    n_patches = (input_resolution // patch) ** 2
    seq = n_patches + 1
    h = hidden
    act = seq * h * bpe
    comps = [dict(
        kind="Embedding", name="embed",
        flops_fwd=2.0 * n_patches * (3 * patch * patch) * h,
        param_count=3 * patch * patch * h + h + h + seq * h,
        activation_bytes_per_sample=act,
    )]
    attn_params = 2 * h + (h * 3 * h + 3 * h) + (h * h + h)
    attn_flops = 2.0 * seq * h * 3 * h + 2.0 * 2 * seq * seq * h + 2.0 * seq * h * h
    mlp_hidden = mlp_ratio * h
    mlp_params = 2 * h + (h * mlp_hidden + mlp_hidden) + (mlp_hidden * h + h)
    mlp_flops = 2.0 * 2 * seq * h * mlp_hidden
    for layer in range(depth):
        comps.append(dict(kind="Attention", name=f"block{layer}.attn", flops_fwd=attn_flops,
                          param_count=attn_params, activation_bytes_per_sample=act))
        comps.append(dict(kind="Mlp", name=f"block{layer}.mlp", flops_fwd=mlp_flops,
                          param_count=mlp_params, activation_bytes_per_sample=act))
    comps.append(dict(kind="Head", name="head", flops_fwd=2.0 * h * num_classes,
                      param_count=2 * h + h * num_classes + num_classes,
                      activation_bytes_per_sample=num_classes * bpe))
    return build_chain({"name": "vit_b16", "components": comps})


GENERATORS = {"resnet50": resnet50_like, "vit_b16": vit_b16_like}


def resolve_model(ref, base_dir: Optional[Path] = None):
    """Resolve ``resnet50``, ``vit_b16`` or ``file:<path>`` into a ModelGraph."""
    if isinstance(ref, dict):
        if "generator" in ref:
            args = {k: v for k, v in ref.items() if k != "generator"}
            name = ref["generator"]
            if name not in GENERATORS:
                raise ValidationError(f"unknown generator {name!r}")
            unknown = set(args) - {"input_resolution", "num_classes"}
            if unknown:
                raise ValidationError(f"unknown generator arguments {sorted(unknown)}")
            return GENERATORS[name](**args)
        if "file" in ref:
            return resolve_model("file:" + ref["file"], base_dir)
        return build_chain(ref)
    ref = str(ref)
    if ref.startswith("file:"):
        path = Path(ref[5:])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ValidationError(f"workload file not found: {path}")
        return load_workload(path)
    if ref in GENERATORS:
        return GENERATORS[ref]()
    raise ValidationError(f"unknown model {ref!r}; expected resnet50, vit_b16 or file:<path>")
