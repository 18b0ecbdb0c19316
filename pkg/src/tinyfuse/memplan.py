"""Memory-hierarchy modeling: activation liveness, peak usage, level placement.

Execution order is the graph's node-id order (inputs first, then nodes).
Each activation buffer lives from its producing step through its last
consuming step, inclusive. With inplace_relu=True a ReLU output aliases its
producer's buffer instead of allocating. Separable convolutions materialize
their depthwise intermediate for the span of their own step, and that scratch
is accounted for.

Placement is greedy: the activation working set (its peak) goes to the
smallest level it fits, then each weight tensor goes to the smallest level
with room left, spilling outward. "Fit on-chip" means nothing landed in the
outermost (DRAM-class) level.

Latency figures are analytic ESTIMATES ( ops / (cores * f * macs_per_cycle * 2),
times a penalty when spilled to DRAM ) with invented per-profile constants;
they are labeled as estimates in every report and never asserted against
measured silicon numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional, Sequence

from . import graph as g
from .errors import ConfigError, PlanError
from .runtime import SEPCONV_MID_SUFFIX

BUILTIN_PROFILES = ("gap8", "cortex-a72")


@dataclass(frozen=True)
class MemoryLevel:
    label: str
    capacity_bytes: int
    available_bytes: int

    def __post_init__(self):
        if self.available_bytes > self.capacity_bytes:
            raise ConfigError(
                f"level {self.label}: available {self.available_bytes} exceeds capacity"
            )
        if self.capacity_bytes <= 0:
            raise ConfigError(f"level {self.label}: capacity must be positive")


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    levels: tuple[MemoryLevel, ...]
    cores: int
    frequency_mhz: float
    macs_per_cycle: int
    dram_penalty: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 1:
            raise ConfigError("profile needs at least one memory level")
        caps = [lv.capacity_bytes for lv in self.levels]
        if caps != sorted(caps):
            raise ConfigError("levels must be ordered smallest to largest capacity")
        if self.cores < 1 or self.frequency_mhz <= 0 or self.macs_per_cycle < 1:
            raise ConfigError("cores/frequency/macs_per_cycle must be positive")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cores": self.cores,
            "frequency_mhz": self.frequency_mhz,
            "macs_per_cycle": self.macs_per_cycle,
            "dram_penalty": self.dram_penalty,
            "levels": [
                {
                    "label": lv.label,
                    "capacity_bytes": lv.capacity_bytes,
                    "available_bytes": lv.available_bytes,
                }
                for lv in self.levels
            ],
        }


def _level_bytes(entry: Mapping, key: str) -> int:
    if f"{key}_bytes" in entry:
        return int(entry[f"{key}_bytes"])
    if f"{key}_kb" in entry:
        return round(float(entry[f"{key}_kb"]) * 1024)
    raise ConfigError(f"memory level needs {key}_bytes or {key}_kb")


def profile_from_dict(data: Mapping) -> HardwareProfile:
    try:
        levels = tuple(
            MemoryLevel(
                str(e["label"]), _level_bytes(e, "capacity"), _level_bytes(e, "available")
            )
            for e in data["levels"]
        )
        return HardwareProfile(
            name=str(data["name"]),
            levels=levels,
            cores=int(data["cores"]),
            frequency_mhz=float(data["frequency_mhz"]),
            macs_per_cycle=int(data["macs_per_cycle"]),
            dram_penalty=float(data.get("dram_penalty", 3.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"hardware profile missing field {exc}") from exc


def load_profile(path) -> HardwareProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return profile_from_dict(json.load(fh))


def builtin_profile(name: str) -> HardwareProfile:
    if name not in BUILTIN_PROFILES:
        raise ConfigError(f"unknown profile {name!r}; built in: {BUILTIN_PROFILES}")
    text = resources.files("tinyfuse").joinpath(f"profiles/{name}.json").read_text()
    return profile_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# liveness


@dataclass(frozen=True)
class BufferInterval:
    name: str
    producer: int
    last_consumer: int
    size_bytes: int


@dataclass(frozen=True)
class BufferLiveness:
    buffers: tuple[BufferInterval, ...]
    num_steps: int


def liveness_from_dag(
    sizes: Sequence[int],
    consumers: Sequence[Sequence[int]],
    aliases: Optional[Mapping[int, int]] = None,
) -> BufferLiveness:
    """Liveness for a generic DAG of one-buffer-per-step producers.

    sizes[i] is the byte size of the buffer produced at step i; consumers[i]
    lists the steps that read it. aliases maps a step to the step whose buffer
    it writes in place (its size must then be 0 and reads of it resolve to the
    target's buffer).
    """
    aliases = dict(aliases or {})

    def canon(i: int) -> int:
        while i in aliases:
            i = aliases[i]
        return i

    n = len(sizes)
    last = {i: i for i in range(n) if i not in aliases}
    for i, cons in enumerate(consumers):
        for step in cons:
            root = canon(i)
            last[root] = max(last[root], step)
    # an in-place step extends its target buffer's life to itself at least
    for src, _ in aliases.items():
        root = canon(src)
        last[root] = max(last[root], src)
    buffers = tuple(
        BufferInterval(f"b{i}", i, last[i], int(sizes[i])) for i in sorted(last)
    )
    return BufferLiveness(buffers, n)


def liveness(
    graph: g.GraphIR,
    precision: str = "float32",
    input_shapes: Optional[Mapping[str, g.TensorShape]] = None,
    inplace_relu: bool = True,
) -> BufferLiveness:
    """Per-activation-buffer intervals for one inference at batch size 1."""
    shapes = g.infer_shapes(graph, input_shapes)
    per_byte = g.PRECISION_BYTES[precision]

    step_of = {name: i for i, name in enumerate(graph.input_names)}
    base = len(graph.input_names)
    for j, node in enumerate(graph.nodes):
        step_of[node.name] = base + j

    canonical: dict[str, str] = {}

    def canon(name: str) -> str:
        while name in canonical:
            name = canonical[name]
        return name

    produced: dict[str, int] = {name: step_of[name] for name in graph.input_names}
    last: dict[str, int] = {name: step_of[name] for name in graph.input_names}
    extras: list[BufferInterval] = []

    for node in graph.nodes:
        step = step_of[node.name]
        for ref in node.inputs:
            root = canon(ref)
            last[root] = max(last[root], step)
        if inplace_relu and node.spec.kind == "ReLU":
            canonical[node.name] = canon(node.inputs[0])
            continue
        if node.spec.kind == "DepthwiseSeparableConv2D":
            cin = shapes[node.inputs[0]].dims[2]
            ho, wo, _ = shapes[node.name].dims
            extras.append(
                BufferInterval(node.name + SEPCONV_MID_SUFFIX, step, step, ho * wo * cin * per_byte)
            )
        produced[node.name] = step
        last[node.name] = max(last.get(node.name, step), step)

    buffers = [
        BufferInterval(name, produced[name], last[name], shapes[name].elements * per_byte)
        for name in produced
    ]
    buffers.extend(extras)
    buffers.sort(key=lambda b: (b.producer, b.name))
    return BufferLiveness(tuple(buffers), base + len(graph.nodes))


def peak_activation_bytes(lv: BufferLiveness) -> int:
    """Max over execution steps of the bytes of simultaneously live buffers."""
    peak = 0
    for step in range(lv.num_steps):
        total = sum(b.size_bytes for b in lv.buffers if b.producer <= step <= b.last_consumer)
        peak = max(peak, total)
    return peak


# ---------------------------------------------------------------------------
# placement


def _pct_half_even(num: int, den: int) -> int:
    """round(100 * num / den) with exact integer ties-to-even."""
    q, r = divmod(100 * num, den)
    if 2 * r > den or (2 * r == den and q % 2 == 1):
        q += 1
    return q


@dataclass
class MemoryPlan:
    profile_name: str
    precision: str
    activation_peak_bytes: int
    activation_level: str
    weight_assignments: tuple[tuple[str, str], ...]  # (tensor, level label)
    level_assigned_bytes: dict[str, int]
    level_utilization_pct: dict[str, int]
    fits_on_chip: bool
    warnings: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "profile": self.profile_name,
            "precision": self.precision,
            "activation_peak_bytes": self.activation_peak_bytes,
            "activation_level": self.activation_level,
            "weight_assignments": [list(w) for w in self.weight_assignments],
            "level_assigned_bytes": dict(self.level_assigned_bytes),
            "level_utilization_pct": dict(self.level_utilization_pct),
            "fits_on_chip": self.fits_on_chip,
            "warnings": list(self.warnings),
        }


def plan(
    size_report: g.ModelSizeReport,
    lv: BufferLiveness,
    profile: HardwareProfile,
) -> MemoryPlan:
    """Greedy placement of the activation working set and each weight tensor."""
    levels = profile.levels
    assigned = {level.label: 0 for level in levels}
    warnings: list[str] = []

    peak = peak_activation_bytes(lv)
    act_level = None
    for level in levels:
        if peak <= level.available_bytes:
            act_level = level
            break
    if act_level is None:
        raise PlanError(
            f"activation working set ({peak} B) exceeds even {levels[-1].label} "
            f"({levels[-1].available_bytes} B available)"
        )
    if act_level is not levels[0]:
        warnings.append(
            f"activation working set ({peak} B) exceeds {levels[0].label}; placed in {act_level.label}"
        )
    assigned[act_level.label] += peak

    placements: list[tuple[str, str]] = []
    for entry in size_report.tensors:
        placed = False
        for level in levels:
            if assigned[level.label] + entry.bytes <= level.available_bytes:
                assigned[level.label] += entry.bytes
                placements.append((entry.name, level.label))
                placed = True
                break
        if not placed:
            raise PlanError(
                f"weight tensor {entry.name} ({entry.bytes} B) does not fit in any level"
            )

    utilization = {
        level.label: _pct_half_even(assigned[level.label], level.available_bytes)
        for level in levels
    }
    outer = levels[-1].label
    fits = assigned[outer] == 0 if len(levels) > 1 else True
    return MemoryPlan(
        profile_name=profile.name,
        precision=size_report.precision,
        activation_peak_bytes=peak,
        activation_level=act_level.label,
        weight_assignments=tuple(placements),
        level_assigned_bytes=assigned,
        level_utilization_pct=utilization,
        fits_on_chip=fits,
        warnings=tuple(warnings),
    )


def plan_model(
    graph: g.GraphIR,
    profile: HardwareProfile,
    precision: str = "int8",
    input_shapes: Optional[Mapping[str, g.TensorShape]] = None,
    inplace_relu: bool = True,
) -> MemoryPlan:
    return plan(
        g.size_report(graph, precision, input_shapes),
        liveness(graph, precision, input_shapes, inplace_relu),
        profile,
    )


def latency_estimate_ms(total_ops: int, profile: HardwareProfile, memory_plan: Optional[MemoryPlan] = None) -> float:
    """Analytic ESTIMATE in milliseconds; never a measured or asserted figure."""
    ops_per_second = profile.cores * profile.frequency_mhz * 1e6 * profile.macs_per_cycle * 2
    penalty = 1.0
    if memory_plan is not None and not memory_plan.fits_on_chip:
        penalty = profile.dram_penalty
    return total_ops / ops_per_second * 1000.0 * penalty
