"""Student-architecture search space: grid enumeration over a template graph.

A space is a cartesian product of axes applied to a template GraphIR:

  * per-branch filter counts for the branch's convolution layers (one ordered
    option list per modality; tie_branches=True shares a single index across
    all listed branches instead of taking their product)
  * width tuples for the non-classifier Dense layers, in node order
    (an empty tuple keeps the template's widths)
  * a boolean axis swapping designated Conv2D nodes for their
    depthwise-separable counterparts

Enumeration is deterministic and lexicographic in (branch axes in graph input
order, dense axis, substitution axis); candidates keep the template topology.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

from . import graph as g
from .errors import GraphError


@dataclass
class ArchSearchSpace:
    branch_filters: dict[str, list[tuple[int, ...]]] = field(default_factory=dict)
    dense_widths: list[tuple[int, ...]] = field(default_factory=lambda: [()])
    depthwise_substitution: list[bool] = field(default_factory=lambda: [False])
    substituted_nodes: tuple[str, ...] = ()
    tie_branches: bool = False

    def __post_init__(self):
        self.branch_filters = {
            name: [tuple(opt) for opt in opts] for name, opts in self.branch_filters.items()
        }
        self.dense_widths = [tuple(opt) for opt in self.dense_widths]
        self.depthwise_substitution = [bool(v) for v in self.depthwise_substitution]
        self.substituted_nodes = tuple(self.substituted_nodes)
        for name, opts in self.branch_filters.items():
            if not opts:
                raise GraphError(f"branch {name!r} has an empty option list")
        if not self.dense_widths or not self.depthwise_substitution:
            raise GraphError("dense_widths and depthwise_substitution axes must be non-empty")
        if self.tie_branches and len({len(o) for o in self.branch_filters.values()}) > 1:
            raise GraphError("tie_branches requires equally long option lists per branch")

    def size(self) -> int:
        n = len(self.dense_widths) * len(self.depthwise_substitution)
        if not self.branch_filters:
            return n
        if self.tie_branches:
            return n * len(next(iter(self.branch_filters.values())))
        for opts in self.branch_filters.values():
            n *= len(opts)
        return n

    def to_dict(self) -> dict:
        return {
            "branch_filters": {k: [list(o) for o in v] for k, v in self.branch_filters.items()},
            "dense_widths": [list(o) for o in self.dense_widths],
            "depthwise_substitution": self.depthwise_substitution,
            "substituted_nodes": list(self.substituted_nodes),
            "tie_branches": self.tie_branches,
        }

    @staticmethod
    def from_dict(data: Mapping) -> "ArchSearchSpace":
        return ArchSearchSpace(
            branch_filters={k: [tuple(o) for o in v] for k, v in data.get("branch_filters", {}).items()},
            dense_widths=[tuple(o) for o in data.get("dense_widths", [()])],
            depthwise_substitution=list(data.get("depthwise_substitution", [False])),
            substituted_nodes=tuple(data.get("substituted_nodes", ())),
            tie_branches=bool(data.get("tie_branches", False)),
        )


def _branch_axes(space: ArchSearchSpace, template: g.GraphIR) -> list[tuple[str, ...]]:
    """Branch axis order follows the template's input order."""
    names = [m for m in template.input_names if m in space.branch_filters]
    missing = set(space.branch_filters) - set(names)
    if missing:
        raise GraphError(f"branch_filters references unknown modalities: {sorted(missing)}")
    if space.tie_branches:
        return [tuple(names)] if names else []
    return [(m,) for m in names]


def _assignment_indices(space: ArchSearchSpace, template: g.GraphIR):
    axes = _branch_axes(space, template)
    lengths = [len(space.branch_filters[group[0]]) for group in axes]
    lengths += [len(space.dense_widths), len(space.depthwise_substitution)]
    return axes, list(itertools.product(*(range(n) for n in lengths)))


def _apply(space, template, axes, combo) -> tuple[g.GraphIR, dict]:
    branch_choice: dict[str, tuple[int, ...]] = {}
    for group, opt_idx in zip(axes, combo):
        for modality in group:
            branch_choice[modality] = space.branch_filters[modality][opt_idx]
    widths = space.dense_widths[combo[-2]]
    substitute = space.depthwise_substitution[combo[-1]]

    conv_targets: dict[str, int] = {}
    for modality, filters in branch_choice.items():
        convs = [n for n in g.branch_nodes(template, modality) if n.spec.kind in g.CONV_KINDS]
        if len(convs) != len(filters):
            raise GraphError(
                f"branch {modality!r} has {len(convs)} conv layers but the option assigns "
                f"{len(filters)} filter counts"
            )
        for node, f in zip(convs, filters):
            conv_targets[node.name] = f

    classifier = template.logits_node.name
    dense_nodes = [
        n.name for n in template.nodes if n.spec.kind == "Dense" and n.name != classifier
    ]
    if widths and len(widths) != len(dense_nodes):
        raise GraphError(
            f"dense width option {widths} does not match the template's "
            f"{len(dense_nodes)} non-classifier Dense layers"
        )
    dense_targets = dict(zip(dense_nodes, widths)) if widths else {}

    if substitute:
        for name in space.substituted_nodes:
            if template.node(name).spec.kind != "Conv2D":
                raise GraphError(
                    f"substitution axis references non-convolution node {name!r}"
                )

    new_nodes = []
    for node in template.nodes:
        spec = node.spec
        if node.name in conv_targets:
            spec = g.LayerSpec(
                spec.kind,
                filters=conv_targets[node.name],
                kernel=spec.kernel,
                stride=spec.stride,
                padding=spec.padding,
            )
        if node.name in dense_targets:
            spec = g.dense(dense_targets[node.name])
        if substitute and node.name in space.substituted_nodes:
            spec = g.sepconv2d(spec.filters, spec.kernel, spec.stride, spec.padding)
        new_nodes.append(g.Node(node.name, spec, node.inputs))
    candidate = g.GraphIR(template.inputs, tuple(new_nodes), template.num_classes)
    label = {
        "branch_filters": {m: list(v) for m, v in branch_choice.items()},
        "dense_widths": list(widths),
        "depthwise_substitution": substitute,
    }
    return candidate, label


def enumerate_candidates(space: ArchSearchSpace, template: g.GraphIR) -> list[g.GraphIR]:
    """All candidate graphs, lexicographically ordered, each fully validated."""
    axes, combos = _assignment_indices(space, template)
    return [_apply(space, template, axes, combo)[0] for combo in combos]


def enumerate_choices(space: ArchSearchSpace, template: g.GraphIR) -> list[dict]:
    """Human-readable choice labels aligned with enumerate_candidates."""
    axes, combos = _assignment_indices(space, template)
    return [_apply(space, template, axes, combo)[1] for combo in combos]
