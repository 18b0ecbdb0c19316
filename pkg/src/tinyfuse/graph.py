"""Multimodal network graph: layer specs, validation, shape inference, cost accounting.

The graph is the single source of truth for shapes, parameter counts,
operation counts and byte sizes. Nodes are stored in execution order
(every node may only reference earlier nodes), which doubles as the
deterministic topological order used by the runtime, the integer engine
and the memory planner.

Conventions, used consistently everywhere:
  * feature maps are channels-last (H, W, C); flattened features are rank-1
  * 1 MAC = 2 ops; bias adds and activations are not counted
  * int8 sizing: 1 byte per weight, 4 bytes per bias, plus
    QPARAM_OVERHEAD_BYTES per parameter tensor for its scale/zero-point
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .errors import GraphError, ShapeError

GRAPH_SCHEMA_VERSION = 1

CONV_KINDS = ("Conv2D", "DepthwiseSeparableConv2D")
POOL_KINDS = ("MaxPool2D", "AvgPool2D")
LAYER_KINDS = CONV_KINDS + POOL_KINDS + ("Dense", "Flatten", "Concat", "ReLU", "Softmax")
PADDING_MODES = ("same", "valid")

# per-tensor quantization bookkeeping in the int8 size model: one float32
# scale + one int32 zero point
QPARAM_OVERHEAD_BYTES = 8

PRECISION_BYTES = {"float32": 4, "int8": 1}


@dataclass(frozen=True)
class TensorShape:
    """Ordered positive extents; (H, W, C) for maps, (length,) for vectors."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise GraphError("TensorShape needs at least one extent")
        if any(d < 1 for d in dims):
            raise GraphError(f"TensorShape extents must be >= 1, got {dims}")
        if self.elements >= 2**64:
            raise GraphError(f"TensorShape {dims} overflows 64-bit element count")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def elements(self) -> int:
        return math.prod(self.dims)

    def bytes(self, precision: str = "float32") -> int:
        return self.elements * PRECISION_BYTES[precision]


def as_shape(value) -> TensorShape:
    if isinstance(value, TensorShape):
        return value
    return TensorShape(tuple(value))


@dataclass(frozen=True)
class LayerSpec:
    """One layer's kind plus its kind-specific attributes.

    Unused attributes stay None; builders below fill defaults so that a
    normalized spec round-trips exactly through to_dict/from_dict.
    """

    kind: str
    filters: Optional[int] = None
    kernel: Optional[int] = None
    stride: Optional[int] = None
    padding: Optional[str] = None
    units: Optional[int] = None
    pool: Optional[int] = None

    def validate(self, where: str) -> None:
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"{where}: unknown layer kind {self.kind!r}")
        required = {
            "Conv2D": ("filters", "kernel", "stride", "padding"),
            "DepthwiseSeparableConv2D": ("filters", "kernel", "stride", "padding"),
            "Dense": ("units",),
            "MaxPool2D": ("pool", "stride", "padding"),
            "AvgPool2D": ("pool", "stride", "padding"),
            "Flatten": (),
            "Concat": (),
            "ReLU": (),
            "Softmax": (),
        }[self.kind]
        for name in ("filters", "kernel", "stride", "padding", "units", "pool"):
            value = getattr(self, name)
            if name in required:
                if value is None:
                    raise GraphError(f"{where}: {self.kind} requires attribute {name}")
            elif value is not None:
                raise GraphError(f"{where}: {self.kind} does not take attribute {name}")
        for name in ("filters", "kernel", "stride", "units", "pool"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise GraphError(f"{where}: attribute {name}={value!r} must be an int >= 1")
        if self.padding is not None and self.padding not in PADDING_MODES:
            raise GraphError(f"{where}: padding must be one of {PADDING_MODES}")


def conv2d(filters: int, kernel: int = 3, stride: int = 1, padding: str = "same") -> LayerSpec:
    return LayerSpec("Conv2D", filters=filters, kernel=kernel, stride=stride, padding=padding)


def sepconv2d(filters: int, kernel: int = 3, stride: int = 1, padding: str = "same") -> LayerSpec:
    return LayerSpec(
        "DepthwiseSeparableConv2D", filters=filters, kernel=kernel, stride=stride, padding=padding
    )


def dense(units: int) -> LayerSpec:
    return LayerSpec("Dense", units=units)


def maxpool2d(pool: int = 2, stride: Optional[int] = None, padding: str = "valid") -> LayerSpec:
    return LayerSpec("MaxPool2D", pool=pool, stride=pool if stride is None else stride, padding=padding)


def avgpool2d(pool: int = 2, stride: Optional[int] = None, padding: str = "valid") -> LayerSpec:
    return LayerSpec("AvgPool2D", pool=pool, stride=pool if stride is None else stride, padding=padding)


def flatten() -> LayerSpec:
    return LayerSpec("Flatten")


def concat() -> LayerSpec:
    return LayerSpec("Concat")


def relu() -> LayerSpec:
    return LayerSpec("ReLU")


def softmax() -> LayerSpec:
    return LayerSpec("Softmax")


@dataclass(frozen=True)
class InputNode:
    name: str
    shape: TensorShape


@dataclass(frozen=True)
class Node:
    name: str
    spec: LayerSpec
    inputs: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass(frozen=True)
class GraphIR:
    """Immutable DAG: modality inputs -> branch layers -> fusion -> softmax head.

    Node position in `nodes` is the node id and the execution order.
    Validation runs on construction; a GraphIR instance is always valid.
    """

    inputs: tuple[InputNode, ...]
    nodes: tuple[Node, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        self._validate()

    # -- structure ---------------------------------------------------------

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(i.name for i in self.inputs)

    @property
    def output(self) -> Node:
        return self.nodes[-1]

    @property
    def logits_node(self) -> Node:
        """The Dense node feeding the final Softmax."""
        by_name = {n.name: n for n in self.nodes}
        return by_name[self.output.inputs[0]]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise GraphError(f"no node named {name!r}")

    @property
    def is_multimodal(self) -> bool:
        return len(self.inputs) > 1

    def parameterized_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.spec.kind in CONV_KINDS + ("Dense",))

    def _validate(self) -> None:
        if not self.inputs:
            raise GraphError("graph needs at least one input")
        if not self.nodes:
            raise GraphError("invalid graph: no nodes")
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            raise GraphError(f"num_classes must be an int >= 2, got {self.num_classes!r}")

        names = [i.name for i in self.inputs] + [n.name for n in self.nodes]
        dupes = {x for x in names if names.count(x) > 1}
        if dupes:
            raise GraphError(f"duplicate names: {sorted(dupes)}")

        seen = set(self.input_names)
        consumed: set[str] = set()
        for node in self.nodes:
            node.spec.validate(node.name)
            arity = len(node.inputs)
            if node.spec.kind == "Concat":
                if arity < 2:
                    raise GraphError(f"{node.name}: Concat needs >= 2 inputs, got {arity}")
            elif arity != 1:
                raise GraphError(f"{node.name}: {node.spec.kind} takes exactly 1 input, got {arity}")
            for ref in node.inputs:
                if ref not in seen:
                    raise GraphError(
                        f"{node.name}: input {ref!r} is not an earlier node or graph input"
                    )
                consumed.add(ref)
            seen.add(node.name)

        sinks = [n.name for n in self.nodes if n.name not in consumed]
        if sinks != [self.output.name]:
            raise GraphError(f"graph must have the final node as its single output, sinks={sinks}")
        for inp in self.input_names:
            if inp not in consumed:
                raise GraphError(f"input {inp!r} feeds nothing; output unreachable from it")

        if self.output.spec.kind != "Softmax":
            raise GraphError("final node must be Softmax")
        logits = self.logits_node
        if logits.spec.kind != "Dense":
            raise GraphError("Softmax must be fed by a Dense layer")
        if logits.spec.units != self.num_classes:
            raise GraphError(
                f"classifier Dense units ({logits.spec.units}) != num_classes ({self.num_classes})"
            )

        if self.is_multimodal:
            # every input-to-output path must cross exactly one fusion Concat
            path_counts: dict[str, frozenset[int]] = {i: frozenset([0]) for i in self.input_names}
            for node in self.nodes:
                counts: set[int] = set()
                for ref in node.inputs:
                    counts |= path_counts[ref]
                if node.spec.kind == "Concat":
                    counts = {c + 1 for c in counts}
                path_counts[node.name] = frozenset(counts)
            if path_counts[self.output.name] != frozenset([1]):
                raise GraphError(
                    "multimodal graph must have exactly one Concat on every "
                    f"input-to-output path, found path counts {sorted(path_counts[self.output.name])}"
                )

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            entry: dict = {"name": n.name, "kind": n.spec.kind, "inputs": list(n.inputs)}
            for attr in ("filters", "kernel", "stride", "padding", "units", "pool"):
                value = getattr(n.spec, attr)
                if value is not None:
                    entry[attr] = value
            nodes.append(entry)
        return {
            "version": GRAPH_SCHEMA_VERSION,
            "num_classes": self.num_classes,
            "inputs": [{"name": i.name, "shape": list(i.shape.dims)} for i in self.inputs],
            "nodes": nodes,
        }

    @staticmethod
    def from_dict(data: Mapping) -> "GraphIR":
        try:
            version = data["version"]
            if version != GRAPH_SCHEMA_VERSION:
                raise GraphError(f"unsupported graph config version {version!r}")
            inputs = tuple(
                InputNode(str(i["name"]), as_shape(i["shape"])) for i in data["inputs"]
            )
            nodes = []
            for entry in data["nodes"]:
                spec = LayerSpec(
                    kind=str(entry["kind"]),
                    filters=entry.get("filters"),
                    kernel=entry.get("kernel"),
                    stride=entry.get("stride"),
                    padding=entry.get("padding"),
                    units=entry.get("units"),
                    pool=entry.get("pool"),
                )
                nodes.append(Node(str(entry["name"]), spec, tuple(entry["inputs"])))
            return GraphIR(inputs, tuple(nodes), int(data["num_classes"]))
        except KeyError as exc:
            raise GraphError(f"graph config missing field {exc}") from exc

    def dumps(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent,
                          separators=None if indent else (",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def loads(text: str) -> GraphIR:
    return GraphIR.from_dict(json.loads(text))


def load_graph(path) -> GraphIR:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def save_graph(graph: GraphIR, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(graph.dumps(indent=2) + "\n")


# ---------------------------------------------------------------------------
# shape inference


def conv_output_extent(extent: int, kernel: int, stride: int, padding: str) -> int:
    """`same` keeps ceil(extent/stride); `valid` slides the kernel inside."""
    if padding == "same":
        return -(-extent // stride)
    if extent < kernel:
        raise ShapeError(f"valid padding needs extent >= kernel, got {extent} < {kernel}")
    return (extent - kernel) // stride + 1


def infer_shapes(
    graph: GraphIR, input_shapes: Optional[Mapping[str, TensorShape]] = None
) -> dict[str, TensorShape]:
    """Annotate every input and node with its output shape.

    input_shapes overrides the shapes declared on the graph inputs; it must
    provide exactly the declared modalities.
    """
    shapes: dict[str, TensorShape] = {}
    if input_shapes is None:
        for inp in graph.inputs:
            shapes[inp.name] = inp.shape
    else:
        missing = [i for i in graph.input_names if i not in input_shapes]
        if missing:
            raise ShapeError(f"missing modality shape for {missing}")
        extra = [k for k in input_shapes if k not in graph.input_names]
        if extra:
            raise ShapeError(f"unknown modalities in input shapes: {extra}")
        for inp in graph.inputs:
            shapes[inp.name] = as_shape(input_shapes[inp.name])

    for node in graph.nodes:
        ins = [shapes[ref] for ref in node.inputs]
        spec = node.spec
        kind = spec.kind
        try:
            if kind in CONV_KINDS:
                (s,) = ins
                if s.rank != 3:
                    raise ShapeError(f"{kind} needs an (H, W, C) input, got {s.dims}")
                ho = conv_output_extent(s.dims[0], spec.kernel, spec.stride, spec.padding)
                wo = conv_output_extent(s.dims[1], spec.kernel, spec.stride, spec.padding)
                out = TensorShape((ho, wo, spec.filters))
            elif kind in POOL_KINDS:
                (s,) = ins
                if s.rank != 3:
                    raise ShapeError(f"{kind} needs an (H, W, C) input, got {s.dims}")
                ho = conv_output_extent(s.dims[0], spec.pool, spec.stride, spec.padding)
                wo = conv_output_extent(s.dims[1], spec.pool, spec.stride, spec.padding)
                out = TensorShape((ho, wo, s.dims[2]))
            elif kind == "Flatten":
                (s,) = ins
                out = TensorShape((s.elements,))
            elif kind == "Dense":
                (s,) = ins
                if s.rank != 1:
                    raise ShapeError(f"Dense needs a flat vector input, got {s.dims}")
                out = TensorShape((spec.units,))
            elif kind in ("ReLU", "Softmax"):
                (s,) = ins
                out = s
            elif kind == "Concat":
                ranks = {s.rank for s in ins}
                if ranks == {1}:
                    out = TensorShape((sum(s.dims[0] for s in ins),))
                elif ranks == {3}:
                    hw = {(s.dims[0], s.dims[1]) for s in ins}
                    if len(hw) != 1:
                        raise ShapeError(
                            f"Concat inputs must share spatial dims, got {[s.dims for s in ins]}"
                        )
                    h, w = hw.pop()
                    out = TensorShape((h, w, sum(s.dims[2] for s in ins)))
                else:
                    raise ShapeError(
                        f"Concat inputs must be all vectors or all maps, got {[s.dims for s in ins]}"
                    )
            else:  # pragma: no cover - kinds validated at construction
                raise ShapeError(f"unhandled kind {kind}")
        except ShapeError as exc:
            raise ShapeError(f"{node.name}: {exc}") from None
        shapes[node.name] = out

    probs = shapes[graph.output.name]
    if probs.dims != (graph.num_classes,):
        raise ShapeError(
            f"{graph.output.name}: output shape {probs.dims} != ({graph.num_classes},)"
        )
    return shapes


# ---------------------------------------------------------------------------
# parameter / operation / size accounting


@dataclass(frozen=True)
class CountReport:
    per_node: dict[str, int]
    total: int


def param_shapes(
    graph: GraphIR, input_shapes: Optional[Mapping[str, TensorShape]] = None
) -> dict[str, dict[str, tuple[int, ...]]]:
    """Parameter tensor shapes per parameterized node, in storage order."""
    shapes = infer_shapes(graph, input_shapes)
    out: dict[str, dict[str, tuple[int, ...]]] = {}
    for node in graph.nodes:
        spec = node.spec
        cin = shapes[node.inputs[0]].dims[-1] if spec.kind != "Dense" else None
        if spec.kind == "Conv2D":
            out[node.name] = {
                "w": (spec.kernel, spec.kernel, cin, spec.filters),
                "b": (spec.filters,),
            }
        elif spec.kind == "DepthwiseSeparableConv2D":
            out[node.name] = {
                "dw_w": (spec.kernel, spec.kernel, cin),
                "dw_b": (cin,),
                "pw_w": (cin, spec.filters),
                "pw_b": (spec.filters,),
            }
        elif spec.kind == "Dense":
            fan_in = shapes[node.inputs[0]].dims[0]
            out[node.name] = {"w": (fan_in, spec.units), "b": (spec.units,)}
    return out


def param_count(
    graph: GraphIR, input_shapes: Optional[Mapping[str, TensorShape]] = None
) -> CountReport:
    all_shapes = param_shapes(graph, input_shapes)
    per_node = {}
    for node in graph.nodes:
        tensors = all_shapes.get(node.name, {})
        per_node[node.name] = sum(math.prod(s) for s in tensors.values())
    return CountReport(per_node, sum(per_node.values()))


def op_count(
    graph: GraphIR, input_shapes: Optional[Mapping[str, TensorShape]] = None
) -> CountReport:
    """Ops per node; 1 MAC = 2 ops, bias adds and activations excluded."""
    shapes = infer_shapes(graph, input_shapes)
    per_node = {}
    for node in graph.nodes:
        spec = node.spec
        ops = 0
        if spec.kind == "Conv2D":
            ho, wo, cout = shapes[node.name].dims
            cin = shapes[node.inputs[0]].dims[2]
            ops = 2 * ho * wo * cout * spec.kernel * spec.kernel * cin
        elif spec.kind == "DepthwiseSeparableConv2D":
            ho, wo, cout = shapes[node.name].dims
            cin = shapes[node.inputs[0]].dims[2]
            ops = 2 * ho * wo * cin * spec.kernel * spec.kernel + 2 * ho * wo * cin * cout
        elif spec.kind == "Dense":
            ops = 2 * shapes[node.inputs[0]].dims[0] * spec.units
        per_node[node.name] = ops
    return CountReport(per_node, sum(per_node.values()))


_BIAS_NAMES = ("b", "dw_b", "pw_b")


@dataclass(frozen=True)
class TensorSizeEntry:
    name: str  # "<node>/<tensor>"
    bytes: int


@dataclass(frozen=True)
class ModelSizeReport:
    precision: str
    tensors: tuple[TensorSizeEntry, ...]
    total_bytes: int


def size_report(
    graph: GraphIR,
    precision: str,
    input_shapes: Optional[Mapping[str, TensorShape]] = None,
) -> ModelSizeReport:
    """Parameter storage bytes per tensor at the given precision.

    float32: 4 bytes everywhere. int8: 1-byte weights, 4-byte (int32) biases,
    plus QPARAM_OVERHEAD_BYTES per tensor.
    """
    if precision not in PRECISION_BYTES:
        raise GraphError(f"unknown precision {precision!r}")
    entries = []
    for node_name, tensors in param_shapes(graph, input_shapes).items():
        for tname, shape in tensors.items():
            count = math.prod(shape)
            if precision == "float32":
                nbytes = 4 * count
            else:
                per_elem = 4 if tname in _BIAS_NAMES else 1
                nbytes = per_elem * count + QPARAM_OVERHEAD_BYTES
            entries.append(TensorSizeEntry(f"{node_name}/{tname}", nbytes))
    return ModelSizeReport(precision, tuple(entries), sum(e.bytes for e in entries))


def model_size_bytes(
    graph: GraphIR,
    precision: str,
    input_shapes: Optional[Mapping[str, TensorShape]] = None,
) -> int:
    return size_report(graph, precision, input_shapes).total_bytes


# ---------------------------------------------------------------------------
# branch analysis (used by the search space and the architecture builders)


def input_ancestors(graph: GraphIR) -> dict[str, frozenset[str]]:
    """For each node, the set of graph inputs it (transitively) depends on."""
    anc: dict[str, frozenset[str]] = {i: frozenset([i]) for i in graph.input_names}
    for node in graph.nodes:
        acc: frozenset[str] = frozenset()
        for ref in node.inputs:
            acc |= anc[ref]
        anc[node.name] = acc
    return anc


def branch_nodes(graph: GraphIR, modality: str) -> tuple[Node, ...]:
    """Nodes that depend on exactly one input (the unimodal branch of it)."""
    if modality not in graph.input_names:
        raise GraphError(f"no input named {modality!r}")
    anc = input_ancestors(graph)
    return tuple(n for n in graph.nodes if anc[n.name] == frozenset([modality]))
