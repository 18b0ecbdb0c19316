"""Soft targets, temperature, and the memory-aware student search.

First a look at what temperature does to a teacher's output distribution,
then a full search: every candidate student (shrunken copies of the teacher,
second conv swapped to depthwise-separable) is distilled and ranked by fit
and accuracy, mirroring the student-model tables of the compression papers.
"""

import numpy as np

from tinyfuse import dataio, distill, memplan, runtime, zoo
from tinyfuse import graph as g

logits = np.array([4.0, 1.5, 0.5, -1.0])
print("teacher logits:", logits.tolist())
for T in (1, 2, 4, 8):
    print(f"  soften(T={T}):", np.round(distill.soften(logits, T), 4).tolist())
print("higher T exposes the inter-class similarity structure\n")

spec = dataio.SyntheticTaskSpec(
    name="audio3-small",
    alphabet_sizes=(2, 2, 2),
    shapes=((32, 32, 1),) * 3,
    noise_sigma=0.3,
    template_seed=20240211,
    sample_count=1200,
)
ds = dataio.generate(spec, seed=0)
teacher = runtime.train(
    runtime.init_model(zoo.audio3_teacher(), seed=0), ds, runtime.TrainConfig(epochs=3, seed=0)
).model
teacher_float = g.model_size_bytes(teacher.graph, "float32")
print(f"teacher: {teacher_float / 1024:.0f} KB float32, "
      f"test acc {runtime.evaluate(teacher, ds, 'test').accuracy:.3f}")

budget = teacher_float // 25
print(f"searching for students with int8 size <= {budget} B (1/25 of the teacher)\n")
result = distill.memory_aware_search(
    teacher,
    zoo.audio3_search_space(),
    budget_bytes=budget,
    profile=memplan.builtin_profile("gap8"),
    dataset=ds,
    config=distill.DistillConfig(temperature=4.0, alpha=0.1, epochs=4, seed=0),
)
print(f"{'id':>3} {'filters':<10} {'params':>7} {'float KB':>9} {'int8 KB':>8} {'acc':>7} {'fits':>5}")
for cand in result.candidates:
    acc = "div" if cand.accuracy is None else f"{cand.accuracy:.3f}"
    print(
        f"{cand.candidate_id:>3} {str(cand.choices['branch_filters']['m0']):<10} "
        f"{cand.param_total:>7} {cand.float_size_bytes / 1024:>9.1f} "
        f"{cand.int8_size_bytes / 1024:>8.1f} {acc:>7} {str(cand.selected_fit):>5}"
    )
best = result.best
print(
    f"\nselected candidate {best.candidate_id}: "
    f"{teacher_float / best.int8_size_bytes:.0f}x smaller than the float teacher, "
    f"{(result.teacher_accuracy - best.accuracy) * 100:+.1f} pts accuracy delta"
)
