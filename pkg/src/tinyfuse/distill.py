"""Soft-target knowledge distillation and memory-aware student search.

The teacher's logits are softened at temperature T and the student minimizes
a KL divergence against them, optionally mixed with a small hard-label
cross-entropy anchor:

    loss = alpha * CE(softmax(s), labels)
         + (1 - alpha) * T^2 * KL(soften(t, T) || soften(s, T))

With scale_student_logits=False the student side stays at T=1 and the T^2
factor is dropped (the literal soft-target objective); alpha=0 removes the
hard-label term entirely.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import graph as g
from . import memplan, ops, runtime
from .arch import ArchSearchSpace, enumerate_candidates, enumerate_choices
from .errors import (
    ConfigError,
    DataError,
    NonFiniteError,
    PlanError,
    SearchError,
    TrainingDivergedError,
)

KL_FLOOR = 1e-12


@dataclass
class DistillConfig:
    temperature: float = 4.0
    alpha: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    scale_student_logits: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        # reuse the training-side checks for the shared fields
        self.train_config()

    def train_config(self) -> runtime.TrainConfig:
        return runtime.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=self.seed,
            shuffle=self.shuffle,
        )


def soften(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax; temperature 1 is the plain softmax path."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits)
    if not np.isfinite(z).all():
        raise ConfigError("logits must be finite")
    return ops.softmax(z / temperature)


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) for probability vectors; p floored at 1e-12, 0*log(0) = 0."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ConfigError(f"length mismatch: {q.shape} vs {p.shape}")
    for name, vec in (("q", q), ("p", p)):
        if abs(vec.sum() - 1.0) > 1e-5:
            raise ConfigError(f"{name} must sum to 1 within 1e-5")
    return float(_kl_rows(q[None, :], p[None, :])[0])


def _kl_rows(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    ratio = np.log(np.maximum(q, KL_FLOOR)) - np.log(np.maximum(p, KL_FLOOR))
    return np.where(q > 0, q * ratio, 0.0).sum(axis=-1)


def kd_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    labels_one_hot: np.ndarray,
    config: DistillConfig,
) -> float:
    """Mean distillation loss over a batch."""
    s = np.atleast_2d(np.asarray(student_logits))
    t = np.atleast_2d(np.asarray(teacher_logits))
    y = np.atleast_2d(np.asarray(labels_one_hot))
    if s.shape != t.shape or s.shape != y.shape:
        raise ConfigError("student/teacher logits and labels must share a shape")
    T = config.temperature
    q = soften(t, T)
    p_student = soften(s, T) if config.scale_student_logits else ops.softmax(s)
    kl = float(_kl_rows(q, p_student).mean())
    if config.scale_student_logits:
        kl *= T * T
    hard = runtime.cross_entropy(ops.softmax(s), y) if config.alpha > 0 else 0.0
    return config.alpha * hard + (1 - config.alpha) * kl


def kd_loss_grad(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    labels_one_hot: np.ndarray,
    config: DistillConfig,
) -> np.ndarray:
    """d(mean loss)/d(student logits); gradients never flow into the teacher."""
    s = np.atleast_2d(np.asarray(student_logits))
    t = np.atleast_2d(np.asarray(teacher_logits))
    y = np.atleast_2d(np.asarray(labels_one_hot))
    n = s.shape[0]
    T = config.temperature
    q = soften(t, T)
    if config.scale_student_logits:
        # d/ds of T^2 * KL(q || soften(s, T)) = T * (soften(s, T) - q)
        gkl = T * (soften(s, T) - q)
    else:
        gkl = ops.softmax(s) - q
    grad = (1 - config.alpha) * gkl
    if config.alpha > 0:
        grad = grad + config.alpha * (ops.softmax(s) - y)
    return grad / n


# ---------------------------------------------------------------------------
# distillation training


@dataclass
class DistillEpochRecord:
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
class DistillResult:
    model: runtime.FloatModel
    trace: list[DistillEpochRecord]
    best_epoch: int


def teacher_logits_for(teacher: runtime.FloatModel, modalities, idx, batch_size: int = 256):
    """Teacher logits over a fixed index set; the teacher stays frozen."""
    idx = np.asarray(idx)
    out = None
    for sl in runtime._batch_slices(idx.size, batch_size):
        fwd = runtime.forward(teacher, runtime.gather_inputs(teacher.graph, modalities, idx[sl]))
        if out is None:
            out = np.empty((idx.size, fwd.logits.shape[1]), dtype=fwd.logits.dtype)
        out[sl] = fwd.logits
    return out


def distill(
    teacher: runtime.FloatModel,
    student_graph: g.GraphIR,
    dataset,
    config: DistillConfig,
) -> DistillResult:
    """Train a fresh student on the teacher's soft targets.

    Returns the best-validation-accuracy checkpoint; the teacher is read only
    (its parameters are bitwise unchanged afterwards).
    """
    tg = teacher.graph
    if tuple(tg.input_names) != tuple(student_graph.input_names) or any(
        a.shape != b.shape for a, b in zip(tg.inputs, student_graph.inputs)
    ):
        raise ConfigError("teacher and student must declare the same modalities and shapes")
    if tg.num_classes != student_graph.num_classes:
        raise ConfigError("teacher and student must declare the same class count")

    train_idx = np.asarray(dataset.splits["train"])
    val_idx = np.asarray(dataset.splits["val"])
    if train_idx.size == 0 or val_idx.size == 0:
        raise DataError("train and val splits must be non-empty")

    labels = np.asarray(dataset.labels)
    targets = runtime.one_hot(labels, student_graph.num_classes)
    # position of each dataset index inside the precomputed logits table
    logits_pos = np.full(labels.shape[0], -1, dtype=np.int64)
    logits_pos[train_idx] = np.arange(train_idx.size)
    t_logits = teacher_logits_for(teacher, dataset.modalities, train_idx)

    student = runtime.init_model(student_graph, seed=config.seed)
    state = runtime.AdamState.zeros_like(student.params)
    tcfg = config.train_config()
    rng = np.random.default_rng(config.seed)

    trace: list[DistillEpochRecord] = []
    best_acc, best_epoch, best_params = -1.0, -1, runtime.copy_params(student.params)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx) if config.shuffle else train_idx
        loss_sum, correct = 0.0, 0
        for sl in runtime._batch_slices(order.size, config.batch_size):
            idx = order[sl]
            fwd = runtime.forward(
                student, runtime.gather_inputs(student_graph, dataset.modalities, idx), want_cache=True
            )
            batch_teacher = t_logits[logits_pos[idx]]
            loss = kd_loss(fwd.logits, batch_teacher, targets[idx], config)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"distillation loss non-finite at epoch {epoch}")
            loss_sum += loss * idx.size
            correct += int((fwd.probs.argmax(axis=1) == labels[idx]).sum())
            grad = kd_loss_grad(fwd.logits, batch_teacher, targets[idx], config)
            grads = runtime.backward(student, fwd, grad_logits=grad)
            runtime.adam_step(student.params, grads, state, tcfg)
        val_acc = runtime.evaluate(student, dataset, "val").accuracy
        trace.append(DistillEpochRecord(epoch, loss_sum / order.size, correct / order.size, val_acc))
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = runtime.copy_params(student.params)

    meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "best_epoch": best_epoch,
        "distilled_from": teacher.checksum()[:16],
        "temperature": config.temperature,
        "alpha": config.alpha,
        "task": getattr(dataset, "fingerprint", lambda: "unknown")(),
    }
    return DistillResult(runtime.FloatModel(student_graph, best_params, meta), trace, best_epoch)


# ---------------------------------------------------------------------------
# memory-aware student search


@dataclass
class SearchCandidateResult:
    candidate_id: int
    graph: g.GraphIR
    choices: dict
    param_total: int
    float_size_bytes: int
    int8_size_bytes: int
    accuracy: Optional[float]  # test accuracy of the distilled student
    fits_budget: bool          # int8_size_bytes <= budget
    fits_onchip: bool          # memory planner places nothing in the DRAM level
    diverged: bool = False

    @property
    def selected_fit(self) -> bool:
        return self.fits_budget and self.fits_onchip

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "choices": self.choices,
            "params": self.param_total,
            "float_size_bytes": self.float_size_bytes,
            "int8_size_bytes": self.int8_size_bytes,
            "accuracy": self.accuracy,
            "fits_budget": self.fits_budget,
            "fits_onchip": self.fits_onchip,
            "diverged": self.diverged,
        }


@dataclass
class SearchResult:
    candidates: list[SearchCandidateResult]  # sorted: fitting first, then accuracy
    budget_bytes: int
    space_size: int
    teacher_accuracy: float

    @property
    def best(self) -> Optional[SearchCandidateResult]:
        for cand in self.candidates:
            if cand.selected_fit and not cand.diverged:
                return cand
        return None


def candidate_seed(graph: g.GraphIR, base_seed: int) -> int:
    """Content-derived seed: permuting the enumeration can't change training."""
    digest = hashlib.sha256(graph.dumps().encode()).digest()
    return (int.from_bytes(digest[:4], "little") ^ (base_seed & 0xFFFFFFFF)) & 0x7FFFFFFF


def memory_aware_search(
    teacher: runtime.FloatModel,
    space: ArchSearchSpace,
    budget_bytes: int,
    profile: memplan.HardwareProfile,
    dataset,
    config: DistillConfig,
) -> SearchResult:
    """Distill every candidate in the space and rank by (fit, accuracy).

    Candidates are shrunken variants of the teacher's own graph. Every
    candidate is reported, including the ones that miss the byte budget or
    the on-chip fit (they are flagged, not dropped). A candidate whose
    training diverges is reported as such; if all of them diverge the search
    raises SearchError.
    """
    if budget_bytes < 0:
        raise ConfigError("budget_bytes must be >= 0")
    candidates = enumerate_candidates(space, teacher.graph)
    choices = enumerate_choices(space, teacher.graph)
    if not candidates:
        raise SearchError("empty search space")
    teacher_acc = runtime.evaluate(teacher, dataset, "test").accuracy

    results: list[SearchCandidateResult] = []
    any_trained = False
    for cid, cand in enumerate(candidates):
        int8_size = g.model_size_bytes(cand, "int8")
        float_size = g.model_size_bytes(cand, "float32")
        params = g.param_count(cand).total
        try:
            plan = memplan.plan_model(cand, profile, precision="int8")
            onchip = plan.fits_on_chip
        except PlanError:
            onchip = False
        cand_config = replace(config, seed=candidate_seed(cand, config.seed))
        accuracy, diverged = None, False
        try:
            distilled = distill(teacher, cand, dataset, cand_config)
            accuracy = runtime.evaluate(distilled.model, dataset, "test").accuracy
            any_trained = True
        except (TrainingDivergedError, NonFiniteError):
            diverged = True
        results.append(
            SearchCandidateResult(
                candidate_id=cid,
                graph=cand,
                choices=choices[cid],
                param_total=params,
                float_size_bytes=float_size,
                int8_size_bytes=int8_size,
                accuracy=accuracy,
                fits_budget=int8_size <= budget_bytes,
                fits_onchip=onchip,
                diverged=diverged,
            )
        )
    if not any_trained:
        raise SearchError("no candidate was trainable: every distillation diverged")

    results.sort(
        key=lambda r: (
            not r.selected_fit,
            -(r.accuracy if r.accuracy is not None else -1.0),
            r.candidate_id,
        )
    )
    return SearchResult(results, budget_bytes, len(candidates), teacher_acc)
