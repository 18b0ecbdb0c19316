import math

import numpy as np
import pytest

from tinyfuse import memplan, zoo
from tinyfuse import graph as g
from tinyfuse.errors import ConfigError, PlanError

import helpers
import oracles


def chain_liveness(*sizes):
    """Linear chain: each buffer consumed by the next step only."""
    consumers = [[i + 1] for i in range(len(sizes) - 1)] + [[]]
    return memplan.liveness_from_dag(list(sizes), consumers)


class TestLiveness:
    def test_linear_chain_intervals(self):
        lv = chain_liveness(10, 20, 5)
        by_name = {b.name: b for b in lv.buffers}
        assert (by_name["b0"].producer, by_name["b0"].last_consumer) == (0, 1)
        assert (by_name["b1"].producer, by_name["b1"].last_consumer) == (1, 2)
        assert (by_name["b2"].producer, by_name["b2"].last_consumer) == (2, 2)

    def test_diamond_keeps_source_until_last_consumer(self):
        # A feeds B and C; D consumes both
        consumers = [[1, 2], [3], [3], []]
        lv = memplan.liveness_from_dag([10, 4, 6, 2], consumers)
        by_name = {b.name: b for b in lv.buffers}
        assert by_name["b0"].last_consumer == 2
        assert by_name["b3"].last_consumer == 3

    def test_random_dags_match_simulation_oracle(self, rng):
        for _ in range(300):
            sizes, consumers, aliases = helpers.random_dag(rng)
            lv = memplan.liveness_from_dag(sizes, consumers, aliases)
            intervals, peak = oracles.liveness_simulation(sizes, consumers, aliases)
            got = {int(b.name[1:]): (b.producer, b.last_consumer) for b in lv.buffers}
            assert got == intervals
            assert memplan.peak_activation_bytes(lv) == peak

    def test_graph_liveness_respects_inplace_relu(self, tiny_graph):
        with_alias = memplan.liveness(tiny_graph, "float32", inplace_relu=True)
        without = memplan.liveness(tiny_graph, "float32", inplace_relu=False)
        names_with = {b.name for b in with_alias.buffers}
        names_without = {b.name for b in without.buffers}
        relu_nodes = {n.name for n in tiny_graph.nodes if n.spec.kind == "ReLU"}
        assert relu_nodes & names_without
        assert not (relu_nodes & names_with)
        assert memplan.peak_activation_bytes(with_alias) <= memplan.peak_activation_bytes(without)

    def test_int8_buffers_are_quarter_of_float(self, tiny_graph):
        f32 = memplan.liveness(tiny_graph, "float32", inplace_relu=False)
        i8 = memplan.liveness(tiny_graph, "int8", inplace_relu=False)
        by_name = {b.name: b.size_bytes for b in f32.buffers}
        for b in i8.buffers:
            if b.name.endswith("#dw"):
                continue
            assert by_name[b.name] == 4 * b.size_bytes


class TestPeak:
    def test_chain_peak_is_thirty(self):
        assert memplan.peak_activation_bytes(chain_liveness(10, 20, 5)) == 30

    def test_single_layer_graph_peak_is_input_plus_output(self):
        inputs = (g.InputNode("m0", g.TensorShape((10,))),)
        nodes = (
            g.Node("logits", g.dense(4), ("m0",)),
            g.Node("probs", g.softmax(), ("logits",)),
        )
        graph = g.GraphIR(inputs, nodes, 4)
        lv = memplan.liveness(graph, "float32")
        # peak while computing logits: input (40 B) + logits (16 B)
        assert memplan.peak_activation_bytes(lv) == 56

    def test_invariant_under_renaming(self, rng):
        sizes, consumers, aliases = helpers.random_dag(rng)
        lv = memplan.liveness_from_dag(sizes, consumers, aliases)
        renamed = memplan.BufferLiveness(
            tuple(
                memplan.BufferInterval(f"x{i}", b.producer, b.last_consumer, b.size_bytes)
                for i, b in enumerate(lv.buffers)
            ),
            lv.num_steps,
        )
        assert memplan.peak_activation_bytes(renamed) == memplan.peak_activation_bytes(lv)


def single_weight_report(nbytes, precision="int8"):
    return g.ModelSizeReport(precision, (g.TensorSizeEntry("weights", nbytes),), nbytes)


def act_liveness(nbytes):
    return memplan.BufferLiveness((memplan.BufferInterval("a", 0, 0, nbytes),), 1)


class TestPlan:
    def test_paper_case_study_1(self):
        profile = memplan.builtin_profile("gap8")
        plan = memplan.plan(single_weight_report(round(40 * 1024)), act_liveness(round(52.4 * 1024)), profile)
        assert plan.level_utilization_pct == {"L1": 99, "L2": 10, "DRAM": 0}
        assert plan.activation_level == "L1"
        assert plan.fits_on_chip

    def test_paper_case_study_2(self):
        profile = memplan.builtin_profile("gap8")
        plan = memplan.plan(single_weight_report(round(178 * 1024)), act_liveness(round(47.5 * 1024)), profile)
        assert plan.level_utilization_pct == {"L1": 90, "L2": 44, "DRAM": 0}
        assert plan.fits_on_chip

    def test_oversized_weights_spill_to_dram(self):
        profile = memplan.builtin_profile("gap8")
        plan = memplan.plan(single_weight_report(1024 * 1024), act_liveness(1024), profile)
        assert plan.weight_assignments[0][1] == "DRAM"
        assert not plan.fits_on_chip

    def test_nothing_fits_raises(self):
        profile = memplan.builtin_profile("gap8")
        with pytest.raises(PlanError):
            memplan.plan(single_weight_report(10**9), act_liveness(1024), profile)
        with pytest.raises(PlanError):
            memplan.plan(single_weight_report(10), act_liveness(10**9), profile)

    def test_monotone_in_available_bytes(self, rng):
        base = memplan.builtin_profile("gap8")
        for _ in range(50):
            act = int(rng.integers(1, 300)) * 1024
            w = int(rng.integers(1, 3000)) * 1024
            try:
                plan_small = memplan.plan(single_weight_report(w), act_liveness(act), base)
            except PlanError:
                continue
            grown = memplan.HardwareProfile(
                name=base.name,
                levels=tuple(
                    memplan.MemoryLevel(lv.label, lv.capacity_bytes * 4, lv.available_bytes * 2)
                    for lv in base.levels
                ),
                cores=base.cores,
                frequency_mhz=base.frequency_mhz,
                macs_per_cycle=base.macs_per_cycle,
            )
            plan_big = memplan.plan(single_weight_report(w), act_liveness(act), grown)
            if plan_small.fits_on_chip:
                assert plan_big.fits_on_chip

    def test_weight_conservation_and_no_double_assignment(self, tiny_graph):
        profile = memplan.builtin_profile("gap8")
        plan = memplan.plan_model(tiny_graph, profile, "int8")
        report = g.size_report(tiny_graph, "int8")
        names = [w[0] for w in plan.weight_assignments]
        assert sorted(names) == sorted(e.name for e in report.tensors)
        placed = sum(e.bytes for e in report.tensors)
        assigned_weights = sum(plan.level_assigned_bytes.values()) - plan.activation_peak_bytes
        assert assigned_weights == placed

    def test_utilization_recomputes_from_raw_bytes(self, tiny_graph):
        profile = memplan.builtin_profile("cortex-a72")
        plan = memplan.plan_model(tiny_graph, profile, "float32")
        for level in profile.levels:
            assert plan.level_utilization_pct[level.label] == memplan._pct_half_even(
                plan.level_assigned_bytes[level.label], level.available_bytes
            )

    def test_half_even_percent(self):
        assert memplan._pct_half_even(445, 1000) == 44   # 44.5 -> even
        assert memplan._pct_half_even(455, 1000) == 46   # 45.5 -> even
        assert memplan._pct_half_even(456, 1000) == 46
        assert memplan._pct_half_even(0, 7) == 0


class TestProfiles:
    def test_gap8_values(self):
        p = memplan.builtin_profile("gap8")
        assert [lv.label for lv in p.levels] == ["L1", "L2", "DRAM"]
        assert p.levels[0].available_bytes == round(52.7 * 1024)
        assert p.levels[1].available_bytes == 400 * 1024
        assert p.levels[2].available_bytes == 8000 * 1024
        assert (p.cores, p.frequency_mhz) == (8, 175)

    def test_cortex_a72_values(self):
        p = memplan.builtin_profile("cortex-a72")
        assert p.levels[0].capacity_bytes == 80 * 1024
        assert p.levels[1].capacity_bytes == 1024 * 1024
        assert (p.cores, p.frequency_mhz) == (4, 1500)

    def test_available_cannot_exceed_capacity(self):
        with pytest.raises(ConfigError):
            memplan.MemoryLevel("L1", 100, 200)

    def test_levels_must_be_ordered(self):
        with pytest.raises(ConfigError):
            memplan.HardwareProfile(
                "x",
                (memplan.MemoryLevel("big", 1000, 1000), memplan.MemoryLevel("small", 10, 10)),
                cores=1,
                frequency_mhz=1,
                macs_per_cycle=1,
            )

    def test_unknown_profile_name(self):
        with pytest.raises(ConfigError):
            memplan.builtin_profile("esp32")


class TestLatencyEstimate:
    def test_zero_ops_is_zero(self):
        assert memplan.latency_estimate_ms(0, memplan.builtin_profile("gap8")) == 0.0

    def test_doubling_frequency_halves_estimate(self):
        base = memplan.builtin_profile("gap8")
        double = memplan.HardwareProfile(
            "gap8x2", base.levels, base.cores, base.frequency_mhz * 2, base.macs_per_cycle
        )
        ops = 123_456_789
        assert math.isclose(
            memplan.latency_estimate_ms(ops, base) / 2,
            memplan.latency_estimate_ms(ops, double),
            rel_tol=1e-12,
        )

    def test_order_of_magnitude_sanity_for_gap8(self):
        # 0.55 GOP on the gap8 profile: same order as the published 4.47 ms
        # board figure; reported only, never asserted equal
        est = memplan.latency_estimate_ms(int(0.55e9), memplan.builtin_profile("gap8"))
        assert 0.447 <= est <= 447.0

    def test_dram_spill_applies_penalty(self, tiny_graph):
        profile = memplan.builtin_profile("gap8")
        plan = memplan.plan(single_weight_report(1024 * 1024), act_liveness(1024), profile)
        assert not plan.fits_on_chip
        with_penalty = memplan.latency_estimate_ms(10**9, profile, plan)
        without = memplan.latency_estimate_ms(10**9, profile)
        assert math.isclose(with_penalty, without * profile.dram_penalty, rel_tol=1e-12)

