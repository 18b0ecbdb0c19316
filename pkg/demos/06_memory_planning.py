"""Activation liveness, peak memory, and placement against memory hierarchies.

The planner walks the graph in execution order, keeps every activation buffer
alive from its producer to its last consumer (ReLU runs in place by default),
and greedily places the activation working set and each weight tensor into
the smallest memory level with room. "Fit on-chip" means nothing spilled into
the DRAM-class level. Latency numbers are analytic ESTIMATES from documented
constants, never measurements.
"""

from tinyfuse import memplan, zoo
from tinyfuse import graph as g

student = zoo.audio3_student()
print(f"model: audio3 student, int8 {g.model_size_bytes(student, 'int8') / 1024:.1f} KB, "
      f"{g.op_count(student).total / 1e6:.2f} MOP per inference\n")

lv = memplan.liveness(student, precision="int8")
peak = memplan.peak_activation_bytes(lv)
print(f"{len(lv.buffers)} activation buffers over {lv.num_steps} steps, "
      f"peak {peak / 1024:.1f} KB (int8, in-place ReLU)")
no_alias = memplan.peak_activation_bytes(memplan.liveness(student, "int8", inplace_relu=False))
print(f"without in-place ReLU the peak would be {no_alias / 1024:.1f} KB\n")

for name in memplan.BUILTIN_PROFILES:
    profile = memplan.builtin_profile(name)
    plan = memplan.plan_model(student, profile, precision="int8")
    print(f"[{profile.name}] cores={profile.cores} f={profile.frequency_mhz:.0f} MHz")
    for level in profile.levels:
        assigned = plan.level_assigned_bytes[level.label]
        pct = plan.level_utilization_pct[level.label]
        print(f"  {level.label:<5} available {level.available_bytes / 1024:>9.1f} KB   "
              f"assigned {assigned / 1024:>8.1f} KB  ({pct}%)")
    verdict = "fit on-chip" if plan.fits_on_chip else "spills to DRAM"
    est = memplan.latency_estimate_ms(g.op_count(student).total, profile, plan)
    print(f"  verdict: {verdict}; latency ESTIMATE {est:.3f} ms\n")

# what-if planning from raw byte figures (the published worked example)
gap8 = memplan.builtin_profile("gap8")
plan = memplan.plan(
    g.ModelSizeReport("int8", (g.TensorSizeEntry("weights", round(40 * 1024)),), round(40 * 1024)),
    memplan.BufferLiveness((memplan.BufferInterval("acts", 0, 0, round(52.4 * 1024)),), 1),
    gap8,
)
print("worked example (52.4 KB activations + 40 KB weights on gap8):")
print(f"  utilization: {plan.level_utilization_pct} -> "
      f"{'fit on-chip' if plan.fits_on_chip else 'NOT on-chip'}")
