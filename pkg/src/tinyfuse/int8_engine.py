"""Deterministic integer-only inference over a QuantizedModel.

Every MAC layer accumulates (x_q - z_x) * w_q into wide integers, adds the
int32 bias and requantizes through the fixed-point (M0, n) multiplier into
the next int8 edge. Matrix products run as float64 BLAS over integer-valued
operands, which is exact because every partial value stays far below 2^53
(guaranteed by the static accumulator bound check below); rounding and
shifting happen in pure int64. The final logits are dequantized and only the
softmax head runs in float.

Execution follows node-id order (any explicitly supplied topological order
yields bitwise-identical results; there is no shared scratch state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import graph as g
from . import ops
from .errors import EngineError
from .quantize import QMAX, QMIN, QuantParams, QuantizedModel, dequantize_tensor
from .runtime import SEPCONV_MID_SUFFIX

# |acc| bound enforced at load so acc * M0 (< 2^62) plus the rounding addend
# cannot overflow int64 during requantization
ACC_LIMIT = 2**31


@dataclass
class Int8Tensor:
    data: np.ndarray  # int8, batch-leading
    qparams: QuantParams

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.dtype != np.int8:
            raise EngineError(f"Int8Tensor requires int8 data, got {self.data.dtype}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


def quantize_input(x: np.ndarray, qp: QuantParams) -> Int8Tensor:
    from .quantize import quantize_tensor

    return Int8Tensor(quantize_tensor(x, qp), qp)


def requantize(acc, m0: int, n: int, out_zero_point: int = 0):
    """clamp(round_half_away(acc * M0 * 2^(-31-n)) + zp, -128, 127) in int64.

    Accepts a scalar or an int ndarray; returns int8 of the same shape.
    """
    if not 2**30 <= m0 < 2**31:
        raise EngineError(f"M0 {m0} outside [2^30, 2^31)")
    shift = 31 + n
    if not 0 <= shift <= 61:
        raise EngineError(f"shift n={n} outside [-31, 30]")
    x = np.asarray(acc, dtype=np.int64) * np.int64(m0)
    if shift == 0:
        r = x
    else:
        half = np.int64(1) << np.int64(shift - 1)
        mag = (np.abs(x) + half) >> np.int64(shift)
        r = np.where(x >= 0, mag, -mag)
    out = np.clip(r + np.int64(out_zero_point), QMIN, QMAX).astype(np.int8)
    return out if isinstance(acc, np.ndarray) else out.item()


def validate_accumulator_bounds(model: QuantizedModel) -> None:
    """Static per-layer bound: macs_per_output * 127^2 + |bias| < 2^31."""
    shapes = g.infer_shapes(model.graph)
    for node in model.graph.nodes:
        kind = node.spec.kind
        checks = []  # (stage, macs_per_output, bias array)
        if kind == "Conv2D":
            cin = shapes[node.inputs[0]].dims[2]
            checks.append(("out", node.spec.kernel**2 * cin, model.weights[node.name]["b"]))
        elif kind == "Dense":
            fan_in = shapes[node.inputs[0]].dims[0]
            checks.append(("out", fan_in, model.weights[node.name]["b"]))
        elif kind == "DepthwiseSeparableConv2D":
            cin = shapes[node.inputs[0]].dims[2]
            checks.append(("dw", node.spec.kernel**2, model.weights[node.name]["dw_b"]))
            checks.append(("pw", cin, model.weights[node.name]["pw_b"]))
        elif kind == "AvgPool2D":
            checks.append(("out", node.spec.pool**2 * 2, np.zeros(1, dtype=np.int64)))
        for stage, macs, bias in checks:
            bound = macs * 127 * 127 + int(np.abs(bias.astype(np.int64)).max(initial=0))
            if bound >= ACC_LIMIT:
                raise EngineError(
                    f"{node.name} ({stage}): accumulator bound {bound} >= 2^31; "
                    "layer too large for 32-bit accumulation"
                )


# ---------------------------------------------------------------------------
# integer kernels


def _exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer matmul via float64 BLAS; exact below 2^53, returned as int64."""
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)


def _conv_acc(xq: np.ndarray, zx: int, w: np.ndarray, stride: int, padding: str) -> np.ndarray:
    """int32-range accumulators of a conv: sum (x - zx) * w plus nothing else."""
    k = w.shape[0]
    patches, _ = ops.extract_patches(
        xq.astype(np.int16), k, stride, padding, pad_value=np.int16(zx)
    )
    n, ho, wo = patches.shape[:3]
    cols = (patches.reshape(n * ho * wo, -1) - np.int16(zx))
    acc = _exact_matmul(cols, w.reshape(-1, w.shape[-1]))
    return acc.reshape(n, ho, wo, w.shape[-1])


def _depthwise_acc(xq, zx, w, stride, padding):
    k = w.shape[0]
    patches, _ = ops.extract_patches(
        xq.astype(np.int16), k, stride, padding, pad_value=np.int16(zx)
    )
    diff = patches.astype(np.int64) - zx
    return np.einsum("nhwijc,ijc->nhwc", diff, w.astype(np.int64))


def relu_int8(t: Int8Tensor) -> Int8Tensor:
    """Clamp at the integer representing real 0.0 (the zero point)."""
    return Int8Tensor(np.maximum(t.data, np.int8(t.qparams.zero_point)), t.qparams)


def concat_int8(
    tensors: Sequence[Int8Tensor],
    target: QuantParams,
    requants: Optional[Mapping[int, tuple[int, int]]] = None,
) -> Int8Tensor:
    """Rescale each input onto the target parameters, then concatenate.

    requants optionally supplies precomputed (M0, n) per input position;
    otherwise multipliers are derived from the scales on the fly.
    """
    from .quantize import decompose_multiplier

    parts = []
    for i, t in enumerate(tensors):
        if t.qparams == target:
            parts.append(t.data)
            continue
        if requants is not None and i in requants:
            m0, n = requants[i]
        else:
            m0, n = decompose_multiplier(t.qparams.scale / target.scale)
        diff = t.data.astype(np.int64) - t.qparams.zero_point
        parts.append(requantize(diff, m0, n, target.zero_point))
    try:
        data = np.concatenate(parts, axis=-1)
    except ValueError as exc:
        raise EngineError(f"concat shapes incompatible: {exc}") from exc
    return Int8Tensor(data, target)


@dataclass
class Int8Result:
    probs: np.ndarray       # float softmax over dequantized logits
    predictions: np.ndarray # argmax per sample
    logits: np.ndarray      # dequantized float logits
    activations: dict[str, Int8Tensor]


def infer_int8(
    model: QuantizedModel,
    inputs: Mapping[str, Int8Tensor],
    execution_order: Optional[Sequence[str]] = None,
) -> Int8Result:
    """Integer-only forward pass; bitwise deterministic.

    Inputs must be quantized with the model's own input QuantParams.
    """
    validate_accumulator_bounds(model)
    graph = model.graph
    declared = {i.name: i.shape.dims for i in graph.inputs}
    acts: dict[str, Int8Tensor] = {}
    for name in graph.input_names:
        if name not in inputs:
            raise EngineError(f"missing input {name!r}")
        t = inputs[name]
        expected = model.edge_qparams[name]
        if t.qparams != expected:
            raise EngineError(
                f"input {name!r} quantization parameters {t.qparams} != model's {expected}"
            )
        if t.data.shape[1:] != declared[name]:
            raise EngineError(
                f"input {name!r} per-sample shape {t.data.shape[1:]} mismatches the graph"
            )
        acts[name] = t

    order = list(graph.nodes)
    if execution_order is not None:
        by_name = {n.name: n for n in graph.nodes}
        if sorted(execution_order) != sorted(by_name):
            raise EngineError("execution_order must be a permutation of the node names")
        seen = set(graph.input_names)
        for name in execution_order:
            if any(ref not in seen for ref in by_name[name].inputs):
                raise EngineError(f"execution_order is not topological at {name!r}")
            seen.add(name)
        order = [by_name[name] for name in execution_order]

    logits_name = graph.logits_node.name
    for node in order:
        kind = node.spec.kind
        if kind == "Softmax":
            continue
        xs = [acts[ref] for ref in node.inputs]
        out_qp = model.edge_qparams.get(node.name)
        if kind == "Conv2D":
            w = model.weights[node.name]
            acc = _conv_acc(xs[0].data, xs[0].qparams.zero_point, w["w"], node.spec.stride, node.spec.padding)
            acc += w["b"].astype(np.int64)
            m0, n = model.requant[node.name]["out"]
            y = requantize(acc, m0, n, out_qp.zero_point)
        elif kind == "DepthwiseSeparableConv2D":
            w = model.weights[node.name]
            mid_qp = model.edge_qparams[node.name + SEPCONV_MID_SUFFIX]
            acc = _depthwise_acc(xs[0].data, xs[0].qparams.zero_point, w["dw_w"], node.spec.stride, node.spec.padding)
            acc += w["dw_b"].astype(np.int64)
            m0, n = model.requant[node.name]["dw"]
            mid = requantize(acc, m0, n, mid_qp.zero_point)
            acc2 = _exact_matmul(
                mid.reshape(-1, mid.shape[-1]).astype(np.int64) - mid_qp.zero_point,
                w["pw_w"],
            ).reshape(mid.shape[:-1] + (w["pw_w"].shape[-1],))
            acc2 += w["pw_b"].astype(np.int64)
            m0, n = model.requant[node.name]["pw"]
            y = requantize(acc2, m0, n, out_qp.zero_point)
        elif kind == "Dense":
            w = model.weights[node.name]
            acc = _exact_matmul(xs[0].data.astype(np.int64) - xs[0].qparams.zero_point, w["w"])
            acc += w["b"].astype(np.int64)
            m0, n = model.requant[node.name]["out"]
            y = requantize(acc, m0, n, out_qp.zero_point)
        elif kind == "MaxPool2D":
            patches, _ = ops.extract_patches(
                xs[0].data, node.spec.pool, node.spec.stride, node.spec.padding,
                pad_value=np.int8(QMIN),
            )
            y = patches.max(axis=(3, 4))
        elif kind == "AvgPool2D":
            patches, _ = ops.extract_patches(
                xs[0].data.astype(np.int64), node.spec.pool, node.spec.stride, node.spec.padding,
                pad_value=np.int64(xs[0].qparams.zero_point),
            )
            acc = (patches - xs[0].qparams.zero_point).sum(axis=(3, 4))
            m0, n = model.requant[node.name]["out"]
            y = requantize(acc, m0, n, out_qp.zero_point)
        elif kind == "Flatten":
            y = xs[0].data.reshape(xs[0].data.shape[0], -1)
        elif kind == "ReLU":
            y = relu_int8(xs[0]).data
        elif kind == "Concat":
            stages = model.requant.get(node.name, {})
            requants = {}
            for i, ref in enumerate(node.inputs):
                key = f"in::{ref}"
                if key in stages:
                    requants[i] = stages[key]
            y = concat_int8(xs, out_qp, requants).data
        else:  # pragma: no cover
            raise EngineError(f"unhandled kind {kind}")
        acts[node.name] = Int8Tensor(y, out_qp)

    logits_q = acts[logits_name]
    logits = dequantize_tensor(logits_q.data, logits_q.qparams)
    probs = ops.softmax(logits)
    return Int8Result(probs, probs.argmax(axis=1), logits, acts)


def predict_int8(model: QuantizedModel, modalities: Mapping[str, np.ndarray], idx, batch_size: int = 256):
    """Quantize float inputs with the model's input qparams and classify them."""
    idx = np.asarray(idx)
    preds = np.empty(idx.size, dtype=np.int64)
    names = model.graph.input_names
    for start in range(0, idx.size, batch_size):
        sl = idx[start : start + batch_size]
        inputs = {
            name: quantize_input(modalities[name][sl], model.edge_qparams[name])
            for name in names
        }
        preds[start : start + sl.size] = infer_int8(model, inputs).predictions
    return preds


def evaluate_int8(model: QuantizedModel, dataset, split: str, batch_size: int = 256):
    """Accuracy and confusion counts of the integer engine on a dataset split."""
    idx = np.asarray(dataset.splits[split])
    if idx.size == 0:
        raise EngineError(f"split {split!r} is empty")
    labels = np.asarray(dataset.labels)[idx]
    preds = predict_int8(model, dataset.modalities, idx, batch_size)
    k = model.graph.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    return float((preds == labels).mean()), confusion, int(idx.size)
