"""Float forward/backward execution, Adam training and evaluation for GraphIR.

The runtime owns no layer math itself; it walks the graph in node order and
dispatches to the kernels in ops.py, caching what backward needs. Everything
is deterministic for a fixed seed: initialization, shuffling and the update
loop all draw from one explicitly seeded generator.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import graph as g
from . import ops
from .errors import (
    ConfigError,
    DataError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
)

PROB_FLOOR = 1e-12
PROB_SUM_TOL = 1e-5
SEPCONV_MID_SUFFIX = "#dw"


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass
class FloatModel:
    graph: g.GraphIR
    params: dict[str, dict[str, np.ndarray]]
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        expected = g.param_shapes(self.graph)
        if set(self.params) != set(expected):
            raise ShapeError(
                f"parameter set {sorted(self.params)} != parameterized nodes {sorted(expected)}"
            )
        for node, tensors in expected.items():
            if set(self.params[node]) != set(tensors):
                raise ShapeError(f"{node}: parameter tensors {sorted(self.params[node])} unexpected")
            for tname, shape in tensors.items():
                actual = self.params[node][tname].shape
                if tuple(actual) != shape:
                    raise ShapeError(f"{node}/{tname}: shape {actual} != expected {shape}")

    def copy(self) -> "FloatModel":
        return FloatModel(self.graph, copy_params(self.params), dict(self.metadata))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for node in sorted(self.params):
            for tname in sorted(self.params[node]):
                h.update(node.encode())
                h.update(tname.encode())
                h.update(np.ascontiguousarray(self.params[node][tname]).tobytes())
        return h.hexdigest()


def copy_params(params):
    return {node: {t: a.copy() for t, a in tensors.items()} for node, tensors in params.items()}


def init_model(graph: g.GraphIR, seed: int = 0, dtype=np.float32) -> FloatModel:
    """He-style fan-in-scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params: dict[str, dict[str, np.ndarray]] = {}
    for node, tensors in g.param_shapes(graph).items():
        params[node] = {}
        for tname, shape in tensors.items():
            if tname in g._BIAS_NAMES:
                params[node][tname] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = math.prod(shape[:-1]) if len(shape) > 1 else shape[0]
                bound = math.sqrt(6.0 / fan_in)
                params[node][tname] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    model = FloatModel(graph, params, {"seed": seed})
    model.validate()
    return model


def model_dtype(model: FloatModel):
    first = next(iter(model.params.values()))
    return next(iter(first.values())).dtype


def cast_model(model: FloatModel, dtype) -> FloatModel:
    params = {
        node: {t: a.astype(dtype) for t, a in tensors.items()}
        for node, tensors in model.params.items()
    }
    return FloatModel(model.graph, params, dict(model.metadata))


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Forward:
    activations: dict[str, np.ndarray]  # inputs, node outputs, "<node>#dw" internals
    logits: np.ndarray
    probs: np.ndarray
    caches: Optional[dict[str, object]] = None


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite values at node {name!r}")


def forward(model: FloatModel, inputs: Mapping[str, np.ndarray], want_cache: bool = False) -> Forward:
    """Run the graph on a batch; activations are cached per node.

    inputs: modality name -> (N, ...) array whose per-sample shape matches the
    graph's declared input shape.
    """
    graph = model.graph
    missing = [m for m in graph.input_names if m not in inputs]
    if missing:
        raise ShapeError(f"missing inputs for modalities {missing}")
    acts: dict[str, np.ndarray] = {}
    batch = None
    for inp in graph.inputs:
        x = np.asarray(inputs[inp.name])
        if tuple(x.shape[1:]) != inp.shape.dims:
            raise ShapeError(
                f"input {inp.name!r}: per-sample shape {x.shape[1:]} != declared {inp.shape.dims}"
            )
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise ShapeError("inconsistent batch sizes across modalities")
        acts[inp.name] = x

    caches: dict[str, object] = {}
    for node in graph.nodes:
        spec = node.spec
        xs = [acts[ref] for ref in node.inputs]
        p = model.params.get(node.name, {})
        if spec.kind == "Conv2D":
            y, patches = ops.conv2d_forward(xs[0], p["w"], p["b"], spec.stride, spec.padding)
            caches[node.name] = patches
        elif spec.kind == "DepthwiseSeparableConv2D":
            y, cache = ops.sepconv2d_forward(
                xs[0], p["dw_w"], p["dw_b"], p["pw_w"], p["pw_b"], spec.stride, spec.padding
            )
            acts[node.name + SEPCONV_MID_SUFFIX] = cache[0]
            caches[node.name] = cache
        elif spec.kind == "Dense":
            y = ops.dense_forward(xs[0], p["w"], p["b"])
        elif spec.kind == "MaxPool2D":
            y, idx = ops.maxpool2d_forward(xs[0], spec.pool, spec.stride, spec.padding)
            caches[node.name] = idx
        elif spec.kind == "AvgPool2D":
            y, counts = ops.avgpool2d_forward(xs[0], spec.pool, spec.stride, spec.padding)
            caches[node.name] = counts
        elif spec.kind == "Flatten":
            y = ops.flatten_forward(xs[0])
        elif spec.kind == "ReLU":
            y = ops.relu_forward(xs[0])
        elif spec.kind == "Concat":
            y = ops.concat_forward(xs)
            caches[node.name] = [x.shape[-1] for x in xs]
        elif spec.kind == "Softmax":
            y = ops.softmax(xs[0])
        _check_finite(node.name, y)
        acts[node.name] = y

    logits = acts[graph.logits_node.name]
    probs = acts[graph.output.name]
    return Forward(acts, logits, probs, caches if want_cache else None)


def backward(
    model: FloatModel,
    fwd: Forward,
    grad_logits: Optional[np.ndarray] = None,
    grad_probs: Optional[np.ndarray] = None,
) -> dict[str, dict[str, np.ndarray]]:
    """Per-parameter gradients for a scalar loss.

    Supply grad_logits (gradient at the pre-softmax logits; the stable path
    used by training) or grad_probs (gradient at the output probabilities,
    chained through the softmax Jacobian).
    """
    if fwd.caches is None:
        raise ConfigError("backward needs a forward pass run with want_cache=True")
    if (grad_logits is None) == (grad_probs is None):
        raise ConfigError("pass exactly one of grad_logits / grad_probs")
    if grad_logits is None:
        grad_logits = ops.softmax_backward(fwd.probs, grad_probs)

    graph = model.graph
    acts = fwd.activations
    dacts: dict[str, np.ndarray] = {graph.logits_node.name: grad_logits}
    grads: dict[str, dict[str, np.ndarray]] = {}

    for node in reversed(graph.nodes[:-1]):  # softmax head handled by the seed above
        dy = dacts.get(node.name)
        if dy is None:
            continue
        spec = node.spec
        p = model.params.get(node.name, {})
        xs = [acts[ref] for ref in node.inputs]
        if spec.kind == "Conv2D":
            dx, dw, db = ops.conv2d_backward(
                dy, fwd.caches[node.name], p["w"], xs[0].shape, spec.stride, spec.padding
            )
            grads[node.name] = {"w": dw, "b": db}
            dins = [dx]
        elif spec.kind == "DepthwiseSeparableConv2D":
            dx, ddw_w, ddw_b, dpw_w, dpw_b = ops.sepconv2d_backward(
                dy, fwd.caches[node.name], p["dw_w"], p["pw_w"], xs[0].shape, spec.stride, spec.padding
            )
            grads[node.name] = {"dw_w": ddw_w, "dw_b": ddw_b, "pw_w": dpw_w, "pw_b": dpw_b}
            dins = [dx]
        elif spec.kind == "Dense":
            dx, dw, db = ops.dense_backward(dy, xs[0], p["w"])
            grads[node.name] = {"w": dw, "b": db}
            dins = [dx]
        elif spec.kind == "MaxPool2D":
            dins = [ops.maxpool2d_backward(dy, fwd.caches[node.name], xs[0].shape, spec.pool, spec.stride, spec.padding)]
        elif spec.kind == "AvgPool2D":
            dins = [ops.avgpool2d_backward(dy, fwd.caches[node.name], xs[0].shape, spec.pool, spec.stride, spec.padding)]
        elif spec.kind == "Flatten":
            dins = [dy.reshape(xs[0].shape)]
        elif spec.kind == "ReLU":
            dins = [ops.relu_backward(dy, xs[0])]
        elif spec.kind == "Concat":
            dins = ops.concat_backward(dy, fwd.caches[node.name])
        else:  # pragma: no cover
            raise ConfigError(f"unexpected kind in backward: {spec.kind}")
        for ref, dcontrib in zip(node.inputs, dins):
            if ref in dacts:
                dacts[ref] = dacts[ref] + dcontrib
            else:
                dacts[ref] = dcontrib

    for node, tensors in grads.items():
        for tname, a in tensors.items():
            if not np.isfinite(a).all():
                raise NonFiniteError(f"non-finite gradient at {node}/{tname}")
    return grads


# ---------------------------------------------------------------------------
# loss / optimizer


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError("labels out of range for one-hot encoding")
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def cross_entropy(probs: np.ndarray, labels_one_hot: np.ndarray) -> float:
    """Mean negative log-likelihood with a 1e-12 probability floor."""
    probs = np.asarray(probs)
    y = np.asarray(labels_one_hot)
    if probs.shape != y.shape:
        raise DataError(f"probabilities {probs.shape} and labels {y.shape} differ in shape")
    sums = probs.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > PROB_SUM_TOL:
        raise DataError("probability rows must sum to 1 within 1e-5")
    if not (np.isin(y, (0, 1)).all() and np.allclose(y.sum(axis=-1), 1.0)):
        raise DataError("labels must be one-hot")
    picked = (probs * y).sum(axis=-1)
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


@dataclass
class AdamState:
    m: dict[str, dict[str, np.ndarray]]
    v: dict[str, dict[str, np.ndarray]]
    step: int = 0

    @staticmethod
    def zeros_like(params) -> "AdamState":
        zeros = lambda: {
            node: {t: np.zeros_like(a) for t, a in tensors.items()}
            for node, tensors in params.items()
        }
        return AdamState(zeros(), zeros(), 0)


def adam_step(params, grads, state: AdamState, config: TrainConfig) -> tuple[dict, AdamState]:
    """Standard bias-corrected Adam update; mutates params/state in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for node, tensors in grads.items():
        for tname, grad in tensors.items():
            m = state.m[node][tname]
            v = state.v[node][tname]
            m += (1 - b1) * (grad - m)
            v += (1 - b2) * (grad * grad - v)
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            params[node][tname] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return params, state


# ---------------------------------------------------------------------------
# training / evaluation


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
        }


@dataclass
class TrainResult:
    model: FloatModel
    trace: list[EpochRecord]
    best_epoch: int


def gather_inputs(graph: g.GraphIR, modalities: Mapping[str, np.ndarray], idx) -> dict:
    missing = [m for m in graph.input_names if m not in modalities]
    if missing:
        raise DataError(f"dataset lacks modalities {missing} required by the graph")
    return {m: modalities[m][idx] for m in graph.input_names}


def _batch_slices(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def train(model: FloatModel, dataset, config: TrainConfig) -> TrainResult:
    """Cross-entropy training on the dataset's train split.

    Returns the checkpoint of the epoch with the best validation accuracy
    (earliest epoch wins ties) plus the per-epoch trace.
    """
    graph = model.graph
    train_idx = np.asarray(dataset.splits["train"])
    val_idx = np.asarray(dataset.splits["val"])
    if train_idx.size == 0 or val_idx.size == 0:
        raise DataError("train and val splits must be non-empty")
    num_classes = graph.num_classes
    labels = np.asarray(dataset.labels)
    targets = one_hot(labels, num_classes, dtype=model_dtype(model))

    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.params)
    trace: list[EpochRecord] = []
    best_acc, best_epoch, best_params = -1.0, -1, copy_params(model.params)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx) if config.shuffle else train_idx
        loss_sum, correct = 0.0, 0
        for sl in _batch_slices(order.size, config.batch_size):
            idx = order[sl]
            fwd = forward(model, gather_inputs(graph, dataset.modalities, idx), want_cache=True)
            y = targets[idx]
            loss = cross_entropy(fwd.probs, y)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch} (lr={config.learning_rate})"
                )
            loss_sum += loss * idx.size
            correct += int((fwd.probs.argmax(axis=1) == labels[idx]).sum())
            grad_logits = (fwd.probs - y) / idx.size
            grads = backward(model, fwd, grad_logits=grad_logits)
            adam_step(model.params, grads, state, config)
        val_acc = evaluate(model, dataset, "val").accuracy
        trace.append(
            EpochRecord(epoch, loss_sum / order.size, correct / order.size, val_acc)
        )
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = copy_params(model.params)

    meta = dict(model.metadata)
    meta.update(
        {
            "epochs": config.epochs,
            "best_epoch": best_epoch,
            "train_seed": config.seed,
            "task": getattr(dataset, "fingerprint", lambda: "unknown")(),
        }
    )
    return TrainResult(FloatModel(graph, best_params, meta), trace, best_epoch)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (K, K), rows = true class, cols = predicted
    total: int


def predict(model: FloatModel, modalities: Mapping[str, np.ndarray], idx, batch_size: int = 256):
    """Predicted class per sample, batched forward without caches."""
    idx = np.asarray(idx)
    preds = np.empty(idx.size, dtype=np.int64)
    for sl in _batch_slices(idx.size, batch_size):
        fwd = forward(model, gather_inputs(model.graph, modalities, idx[sl]))
        preds[sl] = fwd.probs.argmax(axis=1)
    return preds


def evaluate(model: FloatModel, dataset, split: str, batch_size: int = 256) -> EvalResult:
    idx = np.asarray(dataset.splits[split])
    if idx.size == 0:
        raise DataError(f"split {split!r} is empty")
    labels = np.asarray(dataset.labels)[idx]
    preds = predict(model, dataset.modalities, idx, batch_size)
    k = model.graph.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    return EvalResult(float((preds == labels).mean()), confusion, int(idx.size))
