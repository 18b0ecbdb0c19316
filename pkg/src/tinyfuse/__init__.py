"""tinyfuse: train, distill, quantize and memory-plan tiny multimodal classifiers.

Library layout (one module per concern):

  graph        graph IR, shape inference, parameter/op/size accounting
  arch         student-architecture grid search space
  ops          numpy float kernels (forward + backward)
  runtime      float models, Adam training, evaluation
  distill      soft-target distillation and memory-aware search
  quantize     post-training full-integer quantization
  int8_engine  deterministic integer-only inference
  memplan      liveness, peak memory, level placement, latency estimates
  dataio       synthetic multimodal tasks and dataset persistence
  container    binary model container (float32 / int8)
  zoo          reference architectures for the shipped presets
  cli          command-line pipeline (gen-data ... eval)
"""

from . import (
    arch,
    container,
    dataio,
    distill,
    errors,
    graph,
    int8_engine,
    memplan,
    ops,
    quantize,
    report,
    runtime,
    zoo,
)

__version__ = "0.1.0"

__all__ = [
    "arch",
    "container",
    "dataio",
    "distill",
    "errors",
    "graph",
    "int8_engine",
    "memplan",
    "ops",
    "quantize",
    "report",
    "runtime",
    "zoo",
    "__version__",
]
