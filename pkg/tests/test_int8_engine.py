import numpy as np
import pytest

from tinyfuse import int8_engine, quantize, runtime
from tinyfuse import graph as g
from tinyfuse.errors import EngineError
from tinyfuse.int8_engine import Int8Tensor, concat_int8, infer_int8, relu_int8, requantize
from tinyfuse.quantize import QuantParams

import helpers
import oracles


class TestRequantize:
    def test_zero_acc_yields_zero_point(self):
        for zp in (-5, 0, 17):
            assert requantize(0, 2**30, 2, zp) == zp

    def test_exact_halving(self):
        m0, n = quantize.decompose_multiplier(0.5)
        assert requantize(100, m0, n, 0) == 50

    def test_million_cases_match_double_precision_reference(self, rng):
        # vectorized IEEE-double reference: acc * M computed in float64 and
        # rounded half away from zero; keeping |acc * M0| < 2^53 keeps the
        # reference itself exact, so equality must be bitwise
        total = 0
        for _ in range(10):
            accs = rng.integers(-(2**22), 2**22, size=100_000)
            m = float(np.exp(rng.uniform(np.log(1e-4), np.log(2.0))))
            m0, n = quantize.decompose_multiplier(m)
            zp = int(rng.integers(-128, 128))
            got = requantize(accs, m0, n, zp)
            real = accs.astype(np.float64) * (m0 * 2.0 ** (-31 - n))
            want = np.clip(np.sign(real) * np.floor(np.abs(real) + 0.5) + zp, -128, 127)
            assert np.array_equal(got, want.astype(np.int8))
            total += accs.size
        assert total == 1_000_000

    def test_full_int32_range_against_scalar_reference(self, rng):
        accs = rng.integers(-(2**31) + 1, 2**31 - 1, size=2_000)
        for _ in range(5):
            m = float(np.exp(rng.uniform(np.log(1e-4), np.log(2.0))))
            m0, n = quantize.decompose_multiplier(m)
            zp = int(rng.integers(-128, 128))
            got = requantize(accs, m0, n, zp)
            want = np.array(
                [oracles.requantize_scalar(int(a), m0, n, zp) for a in accs], dtype=np.int8
            )
            assert np.array_equal(got, want)

    def test_vector_and_scalar_paths_agree(self, rng):
        m0, n = quantize.decompose_multiplier(0.0371)
        accs = rng.integers(-10_000, 10_000, size=100)
        vec = requantize(accs, m0, n, 3)
        for a, v in zip(accs, vec):
            assert requantize(int(a), m0, n, 3) == v

    def test_m0_range_enforced(self):
        with pytest.raises(EngineError):
            requantize(1, 2**29, 0, 0)
        with pytest.raises(EngineError):
            requantize(1, 2**31, 0, 0)


class TestReluInt8:
    def test_all_at_minimum_with_zero_point_minus_128(self):
        t = Int8Tensor(np.full((2, 3), -128, np.int8), QuantParams(0.1, -128))
        assert np.array_equal(relu_int8(t).data, t.data)

    def test_zero_zero_point(self):
        t = Int8Tensor(np.array([-5, 0, 7], np.int8), QuantParams(0.1, 0))
        assert relu_int8(t).data.tolist() == [0, 0, 7]

    def test_tracks_float_relu_within_one_step(self, rng):
        qp = quantize.compute_qparams(-3.0, 5.0)
        x = rng.uniform(-3, 5, size=1000)
        q = Int8Tensor(quantize.quantize_tensor(x, qp), qp)
        deq = quantize.dequantize_tensor(relu_int8(q).data, qp)
        err = np.abs(deq - np.maximum(x, 0))
        assert err.max() <= qp.scale

    def test_output_keeps_qparams(self):
        t = Int8Tensor(np.zeros(3, np.int8), QuantParams(0.25, 4))
        assert relu_int8(t).qparams == t.qparams


class TestConcatInt8:
    def test_identical_qparams_is_pure_concatenation(self, rng):
        qp = QuantParams(0.05, 3)
        a = Int8Tensor(rng.integers(-128, 128, size=(2, 4)).astype(np.int8), qp)
        b = Int8Tensor(rng.integers(-128, 128, size=(2, 2)).astype(np.int8), qp)
        out = concat_int8([a, b], qp)
        assert np.array_equal(out.data, np.concatenate([a.data, b.data], axis=-1))

    def test_double_scale_doubles_values(self):
        src = QuantParams(0.2, 0)
        dst = QuantParams(0.1, 0)
        a = Int8Tensor(np.array([[1, -2, 60, 100]], np.int8), src)
        out = concat_int8([a], dst)
        assert out.data.tolist() == [[2, -4, 120, 127]]  # 200 clamps to 127

    def test_random_rescale_tracks_float_path(self, rng):
        for _ in range(20):
            src = quantize.compute_qparams(float(rng.uniform(-4, 0)), float(rng.uniform(0, 4)))
            dst = quantize.compute_qparams(float(rng.uniform(-4, 0)), float(rng.uniform(0, 4)))
            x = rng.integers(-128, 128, size=50).astype(np.int8)
            got = concat_int8([Int8Tensor(x, src)], dst).data
            ref = quantize.quantize_tensor(quantize.dequantize_tensor(x, src), dst)
            assert np.abs(got.astype(int) - ref.astype(int)).max() <= 1

    def test_incompatible_shapes(self):
        qp = QuantParams(0.1, 0)
        a = Int8Tensor(np.zeros((2, 3, 3, 1), np.int8), qp)
        b = Int8Tensor(np.zeros((2, 4, 4, 1), np.int8), qp)
        with pytest.raises(EngineError):
            concat_int8([a, b], qp)


def quantized_inputs(rng, qm, batch=1):
    out = {}
    for inp in qm.graph.inputs:
        qp = qm.edge_qparams[inp.name]
        x = rng.uniform(-1, 1, size=(batch,) + inp.shape.dims)
        out[inp.name] = Int8Tensor(quantize.quantize_tensor(x, qp), qp)
    return out


class TestInferInt8:
    def test_all_zero_weight_model_uniform(self, rng):
        graph = helpers.random_graph(rng, num_classes=4, multimodal=True)
        model = runtime.init_model(graph, seed=0)
        for tensors in model.params.values():
            for name in tensors:
                tensors[name][:] = 0
        stats = quantize.calibrate(model, helpers.random_inputs(rng, graph, batch=4))
        qm = quantize.quantize_model(model, stats)
        result = infer_int8(qm, quantized_inputs(rng, qm, batch=2))
        assert np.allclose(result.probs, 0.25, atol=1e-6)

    def test_bitwise_deterministic_across_runs(self, rng):
        qm, _ = helpers.random_quantized_model(rng)
        inputs = quantized_inputs(rng, qm, batch=2)
        first = infer_int8(qm, inputs)
        for _ in range(100):
            again = infer_int8(qm, inputs)
            assert np.array_equal(
                again.activations[qm.graph.logits_node.name].data,
                first.activations[qm.graph.logits_node.name].data,
            )
            assert np.array_equal(again.probs, first.probs)

    def test_matches_scalar_reference_bitwise(self, rng):
        for _ in range(15):
            qm, _ = helpers.random_quantized_model(rng)
            inputs = quantized_inputs(rng, qm)
            result = infer_int8(qm, inputs)
            ref = oracles.infer_int8_scalar(
                qm, {k: v.data[0].tolist() for k, v in inputs.items()}
            )
            for node in qm.graph.nodes:
                if node.spec.kind == "Softmax":
                    continue
                got = result.activations[node.name].data[0]
                want = np.array(ref[node.name], dtype=np.int8)
                assert np.array_equal(got, want), f"mismatch at {node.name}"

    def test_execution_order_invariance(self, rng):
        # a permuted-but-topological order must give bitwise identical results
        for _ in range(5):
            qm, _ = helpers.random_quantized_model(
                rng, helpers.random_graph(rng, multimodal=True)
            )
            inputs = quantized_inputs(rng, qm, batch=2)
            default = infer_int8(qm, inputs)
            names = [n.name for n in qm.graph.nodes]
            # push every branch-0 node as late as topology allows: stable sort
            # by (branch order flipped) preserving dependencies
            by_name = {n.name: n for n in qm.graph.nodes}
            placed, order = set(qm.graph.input_names), []
            pending = list(names)
            while pending:
                for cand in sorted(
                    (n for n in pending if all(r in placed for r in by_name[n].inputs)),
                    reverse=True,
                ):
                    order.append(cand)
                    placed.add(cand)
                    pending.remove(cand)
                    break
            alt = infer_int8(qm, inputs, execution_order=order)
            assert np.array_equal(alt.probs, default.probs)
            for name in names:
                if by_name[name].spec.kind == "Softmax":
                    continue
                assert np.array_equal(
                    alt.activations[name].data, default.activations[name].data
                )

    def test_wrong_input_qparams_rejected(self, rng):
        qm, _ = helpers.random_quantized_model(rng)
        inputs = quantized_inputs(rng, qm)
        name = qm.graph.input_names[0]
        bad = Int8Tensor(inputs[name].data, QuantParams(123.0, 0))
        inputs[name] = bad
        with pytest.raises(EngineError, match="quantization parameters"):
            infer_int8(qm, inputs)

    def test_accumulator_bound_check_rejects_huge_layers(self):
        # 2^18 MACs/output * 127^2 = 4.2e9 > 2^31
        inputs = (g.InputNode("m0", g.TensorShape((2**18,))),)
        nodes = (
            g.Node("logits", g.dense(2), ("m0",)),
            g.Node("probs", g.softmax(), ("logits",)),
        )
        graph = g.GraphIR(inputs, nodes, 2)
        model = runtime.init_model(graph, seed=0)
        stats = quantize.CalibrationStats({"m0": (-1.0, 1.0), "logits": (-1.0, 1.0)}, 1)
        qm = quantize.quantize_model(model, stats)
        with pytest.raises(EngineError, match="accumulator"):
            int8_engine.validate_accumulator_bounds(qm)

    def test_logit_deviation_reported_and_finite(self, tiny_dataset, tiny_trained, capsys):
        # the absolute deviation between dequantized int8 logits and float
        # logits is reported for inspection; only finiteness is asserted
        calib = {m: a[tiny_dataset.splits["train"][:64]] for m, a in tiny_dataset.modalities.items()}
        qm = quantize.quantize_model(tiny_trained, quantize.calibrate(tiny_trained, calib))
        idx = tiny_dataset.splits["test"][:64]
        inputs = {
            m: int8_engine.quantize_input(tiny_dataset.modalities[m][idx], qm.edge_qparams[m])
            for m in qm.graph.input_names
        }
        int_logits = infer_int8(qm, inputs).logits
        float_logits = runtime.forward(
            tiny_trained, runtime.gather_inputs(tiny_trained.graph, tiny_dataset.modalities, idx)
        ).logits
        assert np.isfinite(int_logits).all()
        mad = float(np.abs(int_logits - float_logits).mean())
        out_scale = qm.edge_qparams[qm.graph.logits_node.name].scale
        with capsys.disabled():
            print(f"\n[int8 fidelity] logit MAD {mad:.5f} (logit scale {out_scale:.5f})")

    def test_agreement_with_float_on_tiny_task(self, tiny_dataset, tiny_trained):
        idx = tiny_dataset.splits["test"]
        calib = {m: a[tiny_dataset.splits["train"][:64]] for m, a in tiny_dataset.modalities.items()}
        qm = quantize.quantize_model(tiny_trained, quantize.calibrate(tiny_trained, calib))
        int_preds = int8_engine.predict_int8(qm, tiny_dataset.modalities, idx)
        float_preds = runtime.predict(tiny_trained, tiny_dataset.modalities, idx)
        assert (int_preds == float_preds).mean() >= 0.95
