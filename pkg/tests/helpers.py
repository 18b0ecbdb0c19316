"""Shared generators for randomized tests: graphs, models, datasets."""

from __future__ import annotations

import numpy as np

from tinyfuse import dataio, quantize, runtime
from tinyfuse import graph as g


def tiny_task(sample_count: int = 480, side: int = 16, seed: int = 5) -> dataio.SyntheticTaskSpec:
    return dataio.SyntheticTaskSpec(
        name="tiny2",
        alphabet_sizes=(2, 2),
        shapes=((side, side, 1), (side, side, 1)),
        noise_sigma=0.3,
        template_seed=seed,
        sample_count=sample_count,
    )


def tiny_fused_graph(spec: dataio.SyntheticTaskSpec, filters: int = 4, fc: int = 8) -> g.GraphIR:
    """Small 2-branch net matching tiny_task shapes."""
    inputs = tuple(
        g.InputNode(n, g.TensorShape(s)) for n, s in zip(spec.modality_names, spec.shapes)
    )
    nodes = []
    tails = []
    for i, name in enumerate(spec.modality_names):
        nodes += [
            g.Node(f"b{i}_conv", g.conv2d(filters, 3, 1, "same"), (name,)),
            g.Node(f"b{i}_relu", g.relu(), (f"b{i}_conv",)),
            g.Node(f"b{i}_pool", g.maxpool2d(2), (f"b{i}_relu",)),
            g.Node(f"b{i}_flat", g.flatten(), (f"b{i}_pool",)),
            g.Node(f"b{i}_fc", g.dense(fc), (f"b{i}_flat",)),
            g.Node(f"b{i}_relu2", g.relu(), (f"b{i}_fc",)),
        ]
        tails.append(f"b{i}_relu2")
    nodes += [
        g.Node("fuse", g.concat(), tuple(tails)),
        g.Node("logits", g.dense(spec.num_classes), ("fuse",)),
        g.Node("probs", g.softmax(), ("logits",)),
    ]
    return g.GraphIR(inputs, tuple(nodes), spec.num_classes)


def random_branch(rng: np.random.Generator, nodes: list, prefix: str, input_name: str,
                  side: int, max_layers: int, allow_same_avgpool: bool = True) -> str:
    """Random conv/pool/relu stack ending in Flatten; returns the tail name."""
    prev = input_name
    extent = side
    idx = 0
    for _ in range(int(rng.integers(1, max_layers + 1))):
        choice = rng.choice(["conv", "sep", "max", "avg", "relu"])
        if choice in ("max", "avg") and extent < 2:
            continue
        idx += 1
        name = f"{prefix}_{choice}{idx}"
        if choice == "conv":
            k = int(rng.integers(1, min(3, extent) + 1))
            stride = int(rng.integers(1, 3))
            padding = str(rng.choice(["same", "valid"]))
            spec = g.conv2d(int(rng.integers(1, 4)), k, stride, padding)
            extent = g.conv_output_extent(extent, k, stride, padding)
        elif choice == "sep":
            k = int(rng.integers(1, min(3, extent) + 1))
            spec = g.sepconv2d(int(rng.integers(1, 4)), k, 1, str(rng.choice(["same", "valid"])))
            extent = g.conv_output_extent(extent, k, 1, spec.padding)
        elif choice == "max":
            spec = g.maxpool2d(2, 2, "valid")
            extent = (extent - 2) // 2 + 1
        elif choice == "avg":
            padding = "same" if (allow_same_avgpool and extent % 2 == 0) else "valid"
            spec = g.avgpool2d(2, 2, padding)
            extent = g.conv_output_extent(extent, 2, 2, padding)
        else:
            spec = g.relu()
        nodes.append(g.Node(name, spec, (prev,)))
        prev = name
        if extent < 1:
            break
    nodes.append(g.Node(f"{prefix}_flat", g.flatten(), (prev,)))
    return f"{prefix}_flat"


def random_graph(rng: np.random.Generator, num_classes: int = 3, side: int = 6,
                 max_branch_layers: int = 3, multimodal: bool | None = None) -> g.GraphIR:
    """Random valid GraphIR with small shapes (scalar-oracle friendly)."""
    if multimodal is None:
        multimodal = bool(rng.integers(0, 2))
    n_inputs = int(rng.integers(2, 4)) if multimodal else 1
    inputs = tuple(
        g.InputNode(f"m{i}", g.TensorShape((side, side, int(rng.integers(1, 3)))))
        for i in range(n_inputs)
    )
    nodes: list[g.Node] = []
    tails = [
        random_branch(rng, nodes, f"b{i}", inp.name, side, max_branch_layers)
        for i, inp in enumerate(inputs)
    ]
    if multimodal:
        nodes.append(g.Node("fuse", g.concat(), tuple(tails)))
        prev = "fuse"
    else:
        prev = tails[0]
    if rng.integers(0, 2):
        nodes.append(g.Node("head_fc", g.dense(int(rng.integers(2, 6))), (prev,)))
        nodes.append(g.Node("head_relu", g.relu(), ("head_fc",)))
        prev = "head_relu"
    nodes.append(g.Node("logits", g.dense(num_classes), (prev,)))
    nodes.append(g.Node("probs", g.softmax(), ("logits",)))
    return g.GraphIR(inputs, tuple(nodes), num_classes)


def random_small_graph(rng: np.random.Generator) -> g.GraphIR:
    """Random valid graph with at most 8 nodes (for the counting oracle)."""
    side = int(rng.integers(4, 8))
    if rng.integers(0, 2):
        # unimodal: conv/pool + flatten + softmax head -> <= 6 nodes
        inputs = (g.InputNode("m0", g.TensorShape((side, side, int(rng.integers(1, 3))))),)
        nodes = []
        kind = rng.choice(["conv", "sep", "pool"])
        if kind == "conv":
            k = int(rng.integers(1, 4))
            nodes.append(g.Node("l1", g.conv2d(int(rng.integers(1, 5)), k, int(rng.integers(1, 3)), "same"), ("m0",)))
        elif kind == "sep":
            nodes.append(g.Node("l1", g.sepconv2d(int(rng.integers(1, 5)), 2, 1, "valid"), ("m0",)))
        else:
            nodes.append(g.Node("l1", g.maxpool2d(2, 2), ("m0",)))
        nodes.append(g.Node("flat", g.flatten(), ("l1",)))
        k_classes = int(rng.integers(2, 5))
        nodes.append(g.Node("logits", g.dense(k_classes), ("flat",)))
        nodes.append(g.Node("probs", g.softmax(), ("logits",)))
        return g.GraphIR(inputs, tuple(nodes), k_classes)
    # 2-branch: conv + flatten per branch, concat, dense, softmax -> 8 nodes
    inputs = tuple(
        g.InputNode(f"m{i}", g.TensorShape((side, side, int(rng.integers(1, 3))))) for i in range(2)
    )
    nodes = []
    for i in range(2):
        k = int(rng.integers(1, 4))
        spec = g.conv2d(int(rng.integers(1, 4)), k, 1, "same") if rng.integers(0, 2) else g.sepconv2d(
            int(rng.integers(1, 4)), k, 1, "same"
        )
        nodes.append(g.Node(f"b{i}_conv", spec, (f"m{i}",)))
        nodes.append(g.Node(f"b{i}_flat", g.flatten(), (f"b{i}_conv",)))
    nodes.append(g.Node("fuse", g.concat(), ("b0_flat", "b1_flat")))
    k_classes = int(rng.integers(2, 5))
    nodes.append(g.Node("logits", g.dense(k_classes), ("fuse",)))
    nodes.append(g.Node("probs", g.softmax(), ("logits",)))
    return g.GraphIR(inputs, tuple(nodes), k_classes)


def random_inputs(rng: np.random.Generator, graph: g.GraphIR, batch: int = 1, scale: float = 1.0):
    return {
        inp.name: (scale * rng.standard_normal((batch,) + inp.shape.dims)).astype(np.float32)
        for inp in graph.inputs
    }


def random_quantized_model(rng: np.random.Generator, graph: g.GraphIR | None = None):
    """Random float model -> random calibration -> QuantizedModel."""
    if graph is None:
        graph = random_graph(rng)
    model = runtime.init_model(graph, seed=int(rng.integers(0, 2**31)))
    calib = random_inputs(rng, graph, batch=8)
    stats = quantize.calibrate(model, calib)
    return quantize.quantize_model(model, stats), model


def params_as_lists(model: runtime.FloatModel) -> dict:
    return {
        node: {t: a.astype(np.float64).tolist() for t, a in tensors.items()}
        for node, tensors in model.params.items()
    }


def random_dag(rng: np.random.Generator, max_nodes: int = 12):
    """(sizes, consumers, aliases) for the generic liveness model."""
    n = int(rng.integers(2, max_nodes + 1))
    sizes = [int(rng.integers(1, 100)) for _ in range(n)]
    consumers = [[] for _ in range(n)]
    aliases = {}
    for step in range(1, n):
        preds = rng.choice(step, size=min(step, int(rng.integers(1, 3))), replace=False)
        for p in preds:
            consumers[int(p)].append(step)
        if rng.random() < 0.25:
            aliases[step] = int(preds[0])
    return sizes, consumers, aliases
