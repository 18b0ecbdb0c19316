"""Build a multimodal graph and read off its shapes, parameters, ops and bytes.

The graph IR is the single source of truth for everything downstream: the
trainer executes it, the quantizer annotates it, and the memory planner costs
it. This script walks the shipped 3-branch reference network and prints the
per-node accounting, then enumerates the student search space derived from it.
"""

from tinyfuse import graph as g
from tinyfuse import zoo
from tinyfuse.arch import enumerate_candidates, enumerate_choices

teacher = zoo.audio3_teacher()
shapes = g.infer_shapes(teacher)
params = g.param_count(teacher)
ops = g.op_count(teacher)

print(f"inputs: {[(i.name, i.shape.dims) for i in teacher.inputs]}")
print(f"{'node':<14} {'kind':<26} {'output':<14} {'params':>8} {'ops':>10}")
for node in teacher.nodes:
    print(
        f"{node.name:<14} {node.spec.kind:<26} {str(shapes[node.name].dims):<14} "
        f"{params.per_node[node.name]:>8} {ops.per_node[node.name]:>10}"
    )
print(f"{'TOTAL':<55} {params.total:>8} {ops.total:>10}")
print()
print(f"float32 size: {g.model_size_bytes(teacher, 'float32') / 1024:.1f} KB")
print(f"int8 size:    {g.model_size_bytes(teacher, 'int8') / 1024:.1f} KB")
print()

# a Conv2D -> depthwise-separable swap shrinks both params and ops whenever
# filters > k*k*cin / (k*k + cin); the search space relies on that
space = zoo.audio3_search_space()
print(f"search space: {space.size()} candidates (tied across the three branches)")
print(f"{'id':>3} {'branch filters':<16} {'dense widths':<18} {'sep?':<5} {'params':>8} {'int8 KB':>8}")
for cid, (cand, choice) in enumerate(
    zip(enumerate_candidates(space, teacher), enumerate_choices(space, teacher))
):
    print(
        f"{cid:>3} {str(choice['branch_filters']['m0']):<16} "
        f"{str(choice['dense_widths']):<18} {str(choice['depthwise_substitution']):<5} "
        f"{g.param_count(cand).total:>8} {g.model_size_bytes(cand, 'int8') / 1024:>8.1f}"
    )
