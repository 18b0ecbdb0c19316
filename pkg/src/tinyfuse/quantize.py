"""Post-training full-integer quantization.

Scheme (per-tensor everywhere):
  * weights: symmetric int8, scale = max|w| / 127, zero point 0
  * activations: asymmetric int8 from calibrated min/max, range expanded to
    include 0.0 so the zero point represents real zero exactly
  * biases: int32 at scale s_in * s_w
  * each integer matmul/conv output is rescaled to its int8 edge through a
    fixed-point multiplier M = s_in * s_w / s_out stored as a 32-bit mantissa
    M0 in [2^30, 2^31) and a shift n with M = M0 * 2^(-31-n)

Rounding is half-away-from-zero everywhere.

Pass-through kinds (MaxPool2D, ReLU, Flatten) reuse their input edge's
parameters so the integer engine can run them without rescaling.
DepthwiseSeparableConv2D carries an internal edge "<node>#dw" between its two
stages; calibration records it like any other activation edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import graph as g
from . import ops, runtime
from .errors import DataError, QuantizationError
from .runtime import SEPCONV_MID_SUFFIX

QMIN, QMAX = -128, 127
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1

PASSTHROUGH_KINDS = ("MaxPool2D", "ReLU", "Flatten")

# default number of training samples streamed through calibrate()
DEFAULT_CALIBRATION_SAMPLES = 256


def round_half_away(x):
    """Round to nearest with ties away from zero (ndarray or scalar)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    symmetric: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise QuantizationError(f"scale must be finite and > 0, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise QuantizationError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")
        if self.symmetric and self.zero_point != 0:
            raise QuantizationError("symmetric quantization requires zero_point == 0")

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point, "symmetric": self.symmetric}

    @staticmethod
    def from_dict(d) -> "QuantParams":
        return QuantParams(float(d["scale"]), int(d["zero_point"]), bool(d["symmetric"]))


def compute_qparams(min_val: float, max_val: float, symmetric: bool = False) -> QuantParams:
    if not (math.isfinite(min_val) and math.isfinite(max_val)):
        raise QuantizationError(f"non-finite range [{min_val}, {max_val}]")
    lo, hi = min(min_val, 0.0), max(max_val, 0.0)
    if lo > hi:
        raise QuantizationError(f"empty range [{min_val}, {max_val}]")
    if lo == 0.0 and hi == 0.0:
        return QuantParams(1.0, 0, symmetric)
    if symmetric:
        return QuantParams(max(abs(lo), abs(hi)) / 127.0, 0, True)
    scale = (hi - lo) / 255.0
    zp = int(round_half_away(-128.0 - lo / scale))
    return QuantParams(scale, max(QMIN, min(QMAX, zp)), False)


def quantize_tensor(t: np.ndarray, qp: QuantParams) -> np.ndarray:
    q = round_half_away(np.asarray(t, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_tensor(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationStats:
    """Per-activation-edge running min/max, always expanded to include 0.0."""

    ranges: dict[str, tuple[float, float]]
    sample_count: int = 0

    def update(self, edge: str, a: np.ndarray) -> None:
        lo = min(float(a.min()), 0.0)
        hi = max(float(a.max()), 0.0)
        if edge in self.ranges:
            old_lo, old_hi = self.ranges[edge]
            self.ranges[edge] = (min(old_lo, lo), max(old_hi, hi))
        else:
            self.ranges[edge] = (lo, hi)

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        """Union of two calibration passes (elementwise min/max)."""
        merged = dict(self.ranges)
        for edge, (lo, hi) in other.ranges.items():
            if edge in merged:
                merged[edge] = (min(merged[edge][0], lo), max(merged[edge][1], hi))
            else:
                merged[edge] = (lo, hi)
        return CalibrationStats(merged, self.sample_count + other.sample_count)

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "ranges": {k: list(v) for k, v in self.ranges.items()},
        }


def activation_edges(graph: g.GraphIR) -> list[str]:
    """Edges the integer engine traverses: inputs, node outputs (except the
    float softmax head) and separable-conv internal edges."""
    edges = list(graph.input_names)
    for node in graph.nodes:
        if node.spec.kind == "Softmax":
            continue
        if node.spec.kind == "DepthwiseSeparableConv2D":
            edges.append(node.name + SEPCONV_MID_SUFFIX)
        edges.append(node.name)
    return edges


def calibrate(
    model: runtime.FloatModel,
    calibration_inputs: Mapping[str, np.ndarray],
    batch_size: int = 128,
) -> CalibrationStats:
    """Stream calibration samples through the float model, recording ranges."""
    names = model.graph.input_names
    missing = [m for m in names if m not in calibration_inputs]
    if missing:
        raise DataError(f"calibration set missing modalities {missing}")
    n = int(np.asarray(calibration_inputs[names[0]]).shape[0])
    if n == 0:
        raise DataError("calibration set is empty")
    edges = set(activation_edges(model.graph))
    stats = CalibrationStats({}, 0)
    for sl in runtime._batch_slices(n, batch_size):
        fwd = runtime.forward(model, {m: calibration_inputs[m][sl] for m in names})
        for edge, act in fwd.activations.items():
            if edge in edges:
                stats.update(edge, act)
    stats.sample_count = n
    return stats


# ---------------------------------------------------------------------------
# fixed-point requantization multipliers


def decompose_multiplier(m: float) -> tuple[int, int]:
    """m -> (M0, n) with M0 in [2^30, 2^31) and m = M0 * 2^(-31-n) (<= 1 ulp)."""
    if not (math.isfinite(m) and m > 0):
        raise QuantizationError(f"requantization multiplier must be finite and > 0, got {m}")
    frac, exp = math.frexp(m)  # m = frac * 2^exp, frac in [0.5, 1)
    m0 = int(math.floor(frac * 2**31 + 0.5))
    if m0 == 2**31:
        m0 //= 2
        exp += 1
    n = -exp
    if not -31 <= n <= 30:
        raise QuantizationError(f"multiplier {m} out of fixed-point range (shift n={n})")
    return m0, n


def reconstruct_multiplier(m0: int, n: int) -> float:
    return m0 * 2.0 ** (-31 - n)


# ---------------------------------------------------------------------------
# quantized model


@dataclass
class QuantizedModel:
    graph: g.GraphIR
    weights: dict[str, dict[str, np.ndarray]]  # int8 weights, int32 biases
    weight_qparams: dict[str, dict[str, QuantParams]]
    edge_qparams: dict[str, QuantParams]
    requant: dict[str, dict[str, tuple[int, int]]]  # node -> stage -> (M0, n)
    metadata: dict = field(default_factory=dict)

    def input_qparams(self, modality: str) -> QuantParams:
        return self.edge_qparams[modality]

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for node in sorted(self.weights):
            for tname in sorted(self.weights[node]):
                h.update(f"{node}/{tname}".encode())
                h.update(np.ascontiguousarray(self.weights[node][tname]).tobytes())
        return h.hexdigest()


def _quantize_bias(b: np.ndarray, scale: float) -> np.ndarray:
    q = round_half_away(np.asarray(b, dtype=np.float64) / scale)
    return np.clip(q, INT32_MIN, INT32_MAX).astype(np.int32)


def quantize_model(model: runtime.FloatModel, stats: CalibrationStats) -> QuantizedModel:
    """Convert a float model to int8 weights / int32 biases / edge qparams.

    The graph is unchanged; only parameters and quantization metadata are
    produced. Raises QuantizationError when stats are missing for an edge the
    integer engine will need.
    """
    graph = model.graph
    shapes = g.infer_shapes(graph)

    def stats_qparams(edge: str) -> QuantParams:
        if edge not in stats.ranges:
            raise QuantizationError(f"calibration stats missing for edge {edge!r}")
        lo, hi = stats.ranges[edge]
        return compute_qparams(lo, hi, symmetric=False)

    edge_qp: dict[str, QuantParams] = {}
    for modality in graph.input_names:
        edge_qp[modality] = stats_qparams(modality)

    weights: dict[str, dict[str, np.ndarray]] = {}
    weight_qp: dict[str, dict[str, QuantParams]] = {}
    requant: dict[str, dict[str, tuple[int, int]]] = {}

    for node in graph.nodes:
        kind = node.spec.kind
        pred = node.inputs[0]
        if kind == "Softmax":
            continue
        if kind in PASSTHROUGH_KINDS:
            edge_qp[node.name] = edge_qp[pred]
            continue
        if kind == "Concat":
            target = stats_qparams(node.name)
            edge_qp[node.name] = target
            stages = {}
            for ref in node.inputs:
                in_qp = edge_qp[ref]
                if in_qp != target:
                    stages[f"in::{ref}"] = decompose_multiplier(in_qp.scale / target.scale)
            requant[node.name] = stages
            continue
        if kind == "AvgPool2D":
            spec = node.spec
            h, w, _ = shapes[pred].dims
            if (
                spec.padding == "same"
                and (sum(ops.pad_amounts(h, spec.pool, spec.stride, "same"))
                     + sum(ops.pad_amounts(w, spec.pool, spec.stride, "same"))) > 0
            ):
                raise QuantizationError(
                    f"{node.name}: same-padded AvgPool2D with partial windows is not "
                    "supported in integer execution"
                )
            out_qp = stats_qparams(node.name)
            edge_qp[node.name] = out_qp
            area = spec.pool * spec.pool
            requant[node.name] = {
                "out": decompose_multiplier(edge_qp[pred].scale / (out_qp.scale * area))
            }
            continue

        p = model.params[node.name]
        in_qp = edge_qp[pred]
        if kind in ("Conv2D", "Dense"):
            w = p["w"]
            w_qp = compute_qparams(float(w.min()), float(w.max()), symmetric=True)
            out_qp = stats_qparams(node.name)
            edge_qp[node.name] = out_qp
            weights[node.name] = {
                "w": quantize_tensor(w, w_qp),
                "b": _quantize_bias(p["b"], in_qp.scale * w_qp.scale),
            }
            weight_qp[node.name] = {"w": w_qp}
            requant[node.name] = {
                "out": decompose_multiplier(in_qp.scale * w_qp.scale / out_qp.scale)
            }
        elif kind == "DepthwiseSeparableConv2D":
            mid_edge = node.name + SEPCONV_MID_SUFFIX
            mid_qp = stats_qparams(mid_edge)
            out_qp = stats_qparams(node.name)
            dw_qp = compute_qparams(float(p["dw_w"].min()), float(p["dw_w"].max()), symmetric=True)
            pw_qp = compute_qparams(float(p["pw_w"].min()), float(p["pw_w"].max()), symmetric=True)
            edge_qp[mid_edge] = mid_qp
            edge_qp[node.name] = out_qp
            weights[node.name] = {
                "dw_w": quantize_tensor(p["dw_w"], dw_qp),
                "dw_b": _quantize_bias(p["dw_b"], in_qp.scale * dw_qp.scale),
                "pw_w": quantize_tensor(p["pw_w"], pw_qp),
                "pw_b": _quantize_bias(p["pw_b"], mid_qp.scale * pw_qp.scale),
            }
            weight_qp[node.name] = {"dw_w": dw_qp, "pw_w": pw_qp}
            requant[node.name] = {
                "dw": decompose_multiplier(in_qp.scale * dw_qp.scale / mid_qp.scale),
                "pw": decompose_multiplier(mid_qp.scale * pw_qp.scale / out_qp.scale),
            }
        else:  # pragma: no cover
            raise QuantizationError(f"unhandled kind {kind}")

    metadata = {
        "parent_checksum": model.checksum()[:16],
        "calibration_samples": stats.sample_count,
    }
    for key in ("seed", "task"):
        if key in model.metadata:
            metadata[key] = model.metadata[key]
    return QuantizedModel(graph, weights, weight_qp, edge_qp, requant, metadata)
