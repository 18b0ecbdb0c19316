"""Reference architectures for the shipped synthetic tasks.

These approximate the two case-study topologies at desk scale (a 3-branch
audio-like network and a 2-branch image-like network); they are not exact
reconstructions. Each is available both as a builder here and as a packaged
JSON graph config (configs/*.json) loadable by the CLI; a test pins the two
representations together.
"""

from __future__ import annotations

from . import graph as g
from .arch import ArchSearchSpace
from .dataio import PRESETS, SyntheticTaskSpec


def _branch(nodes, prefix: str, input_name: str, convs, fc_units: int) -> str:
    """Conv/pool stack + Dense feature layer; returns the last node's name."""
    prev = input_name
    for idx, spec in enumerate(convs, start=1):
        nodes.append(g.Node(f"{prefix}_conv{idx}", spec, (prev,)))
        nodes.append(g.Node(f"{prefix}_relu{idx}", g.relu(), (f"{prefix}_conv{idx}",)))
        nodes.append(g.Node(f"{prefix}_pool{idx}", g.maxpool2d(2), (f"{prefix}_relu{idx}",)))
        prev = f"{prefix}_pool{idx}"
    nodes.append(g.Node(f"{prefix}_flat", g.flatten(), (prev,)))
    nodes.append(g.Node(f"{prefix}_fc", g.dense(fc_units), (f"{prefix}_flat",)))
    nodes.append(g.Node(f"{prefix}_relu_fc", g.relu(), (f"{prefix}_fc",)))
    return f"{prefix}_relu_fc"


def _fused(spec: SyntheticTaskSpec, convs_per_branch, branch_fc: int, fusion_fc: int) -> g.GraphIR:
    inputs = tuple(
        g.InputNode(name, g.TensorShape(shape))
        for name, shape in zip(spec.modality_names, spec.shapes)
    )
    nodes: list[g.Node] = []
    tails = [
        _branch(nodes, f"b{i}", name, convs_per_branch, branch_fc)
        for i, name in enumerate(spec.modality_names)
    ]
    nodes.append(g.Node("fuse_concat", g.concat(), tuple(tails)))
    nodes.append(g.Node("fuse_fc1", g.dense(fusion_fc), ("fuse_concat",)))
    nodes.append(g.Node("fuse_relu1", g.relu(), ("fuse_fc1",)))
    nodes.append(g.Node("logits", g.dense(spec.num_classes), ("fuse_relu1",)))
    nodes.append(g.Node("probs", g.softmax(), ("logits",)))
    return g.GraphIR(inputs, tuple(nodes), spec.num_classes)


def audio3_teacher() -> g.GraphIR:
    return _fused(PRESETS["audio3"], (g.conv2d(8), g.conv2d(24)), branch_fc=64, fusion_fc=128)


def audio3_student() -> g.GraphIR:
    return _fused(PRESETS["audio3"], (g.conv2d(4), g.sepconv2d(8)), branch_fc=12, fusion_fc=16)


def image2_teacher() -> g.GraphIR:
    return _fused(
        PRESETS["image2"], (g.conv2d(8), g.conv2d(16), g.conv2d(24)), branch_fc=64, fusion_fc=96
    )


def image2_student() -> g.GraphIR:
    return _fused(
        PRESETS["image2"], (g.conv2d(4), g.sepconv2d(8), g.sepconv2d(12)), branch_fc=16, fusion_fc=24
    )


def unimodal(spec: SyntheticTaskSpec, modality_index: int, convs=None, fc_units: int = 64) -> g.GraphIR:
    """Single-branch classifier over one modality (same stack as a teacher branch)."""
    name = spec.modality_names[modality_index]
    if convs is None:
        convs = (g.conv2d(8), g.conv2d(24))
    inputs = (g.InputNode(name, g.TensorShape(spec.shapes[modality_index])),)
    nodes: list[g.Node] = []
    tail = _branch(nodes, "b0", name, convs, fc_units)
    nodes.append(g.Node("logits", g.dense(spec.num_classes), (tail,)))
    nodes.append(g.Node("probs", g.softmax(), ("logits",)))
    return g.GraphIR(inputs, tuple(nodes), spec.num_classes)


def audio3_search_space() -> ArchSearchSpace:
    """Five shrinking students of the audio3 teacher, 2nd conv depthwise-separable."""
    options = [(6, 12), (5, 10), (4, 8), (3, 6), (2, 4)]
    names = PRESETS["audio3"].modality_names
    return ArchSearchSpace(
        branch_filters={name: list(options) for name in names},
        dense_widths=[(12, 12, 12, 16)],
        depthwise_substitution=[True],
        substituted_nodes=tuple(f"b{i}_conv2" for i in range(len(names))),
        tie_branches=True,
    )


def image2_search_space() -> ArchSearchSpace:
    options = [(6, 12, 16), (4, 8, 12), (3, 6, 8)]
    names = PRESETS["image2"].modality_names
    return ArchSearchSpace(
        branch_filters={name: list(options) for name in names},
        dense_widths=[(16, 16, 24)],
        depthwise_substitution=[True],
        substituted_nodes=tuple(f"b{i}_conv2" for i in range(len(names)))
        + tuple(f"b{i}_conv3" for i in range(len(names))),
        tie_branches=True,
    )


BUILTIN_ARCHES = {
    "audio3-teacher": audio3_teacher,
    "audio3-student": audio3_student,
    "image2-teacher": image2_teacher,
    "image2-student": image2_student,
}

BUILTIN_SPACES = {
    "audio3": audio3_search_space,
    "image2": image2_search_space,
}
