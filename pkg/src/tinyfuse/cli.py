"""Command-line pipeline: gen-data, train, distill, search, quantize, plan, infer, eval.

Every command validates its inputs, emits a schema-validated RunReport
(stdout, or --out PATH), and exits non-zero on any error. --seed makes every
command deterministic. A --config JSON file may supply any option; explicit
flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import container, dataio, distill, int8_engine, memplan, quantize, report, runtime, zoo
from . import graph as g
from .arch import ArchSearchSpace
from .errors import (
    ConfigError,
    ContainerError,
    DataError,
    EngineError,
    GraphError,
    NonFiniteError,
    PlanError,
    QuantizationError,
    SearchError,
    TrainingDivergedError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_INPUT = 4
EXIT_STAGE_FAILED = 5

_ERROR_CODES = (
    (ConfigError, EXIT_CONFIG),
    (FileNotFoundError, EXIT_MISSING_FILE),
    (TrainingDivergedError, EXIT_STAGE_FAILED),
    (SearchError, EXIT_STAGE_FAILED),
    (PlanError, EXIT_STAGE_FAILED),
    (EngineError, EXIT_STAGE_FAILED),
    (NonFiniteError, EXIT_STAGE_FAILED),
    (GraphError, EXIT_BAD_INPUT),
    (DataError, EXIT_BAD_INPUT),
    (ContainerError, EXIT_BAD_INPUT),
    (QuantizationError, EXIT_BAD_INPUT),
    (jsonschema.ValidationError, EXIT_BAD_INPUT),
)


def _exit_code(exc: BaseException) -> int:
    for etype, code in _ERROR_CODES:
        if isinstance(exc, etype):
            return code
    return EXIT_STAGE_FAILED


class _Options:
    """Flag values with config-file fallback (flags win)."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict = {}
        if getattr(args, "config", None):
            with open(args.config, "r", encoding="utf-8") as fh:
                try:
                    loaded = json.load(fh)
                except ValueError as exc:
                    raise ConfigError(f"--config is not valid JSON: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError("--config file must hold a JSON object")
            self.config = loaded

    def get(self, key: str, default=None):
        value = getattr(self.args, key, None)
        if value is None:
            value = self.config.get(key, default)
        return value


def _require(opts: _Options, key: str):
    value = opts.get(key)
    if value is None:
        raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return value


def _load_graph(opts: _Options) -> g.GraphIR:
    arch = opts.get("arch")
    path = opts.get("graph")
    if (arch is None) == (path is None):
        raise ConfigError("pass exactly one of --arch / --graph")
    if arch is not None:
        if arch not in zoo.BUILTIN_ARCHES:
            raise ConfigError(f"unknown arch {arch!r}; built in: {sorted(zoo.BUILTIN_ARCHES)}")
        return zoo.BUILTIN_ARCHES[arch]()
    return g.load_graph(path)


def _load_profile(opts: _Options) -> memplan.HardwareProfile:
    name = opts.get("profile", "gap8")
    if name in memplan.BUILTIN_PROFILES:
        return memplan.builtin_profile(name)
    return memplan.load_profile(name)


def _load_space(opts: _Options) -> ArchSearchSpace:
    space = _require(opts, "space")
    if space in zoo.BUILTIN_SPACES:
        return zoo.BUILTIN_SPACES[space]()
    with open(space, "r", encoding="utf-8") as fh:
        return ArchSearchSpace.from_dict(json.load(fh))


def _train_config(opts: _Options, default_epochs: int = 10) -> runtime.TrainConfig:
    return runtime.TrainConfig(
        epochs=int(opts.get("epochs", default_epochs)),
        batch_size=int(opts.get("batch_size", 32)),
        learning_rate=float(opts.get("learning_rate", 1e-3)),
        seed=int(opts.get("seed", 0)),
        shuffle=bool(opts.get("shuffle", True)),
    )


def _distill_config(opts: _Options, default_epochs: int = 10) -> distill.DistillConfig:
    return distill.DistillConfig(
        temperature=float(opts.get("temperature", 4.0)),
        alpha=float(opts.get("alpha", 0.1)),
        epochs=int(opts.get("epochs", default_epochs)),
        batch_size=int(opts.get("batch_size", 32)),
        learning_rate=float(opts.get("learning_rate", 1e-3)),
        seed=int(opts.get("seed", 0)),
        shuffle=bool(opts.get("shuffle", True)),
        scale_student_logits=bool(opts.get("scale_student_logits", True)),
    )


def _model_sections(graph: g.GraphIR) -> tuple[dict, dict]:
    sizes = {
        "model_float_bytes": g.model_size_bytes(graph, "float32"),
        "model_int8_bytes": g.model_size_bytes(graph, "int8"),
        "params": g.param_count(graph).total,
    }
    return sizes, {"total": g.op_count(graph).total}


# ---------------------------------------------------------------------------
# command handlers; each returns the report sections it produced


def cmd_gen_data(opts: _Options) -> dict:
    preset = opts.get("preset")
    task_path = opts.get("task")
    if (preset is None) == (task_path is None):
        raise ConfigError("pass exactly one of --preset / --task")
    if preset is not None:
        if preset not in dataio.PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; built in: {sorted(dataio.PRESETS)}")
        spec = dataio.PRESETS[preset]
    else:
        with open(task_path, "r", encoding="utf-8") as fh:
            spec = dataio.SyntheticTaskSpec.from_dict(json.load(fh))
    data_dir = _require(opts, "data_dir")
    seed = int(opts.get("seed", 0))
    dataset = dataio.generate(spec, seed)
    manifest_path = dataio.save_dataset(dataset, data_dir)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return {
        "dataset": {
            "task": spec.to_dict(),
            "classes": spec.num_classes,
            "sample_count": spec.sample_count,
            "split_sizes": {k: len(v) for k, v in manifest["splits"].items()},
            "checksums": {k: v["sha256"] for k, v in manifest["files"].items()},
            "fingerprint": dataset.fingerprint(),
        },
        "artifacts": {"manifest": str(manifest_path)},
    }


def cmd_train(opts: _Options) -> dict:
    dataset = dataio.load_dataset(_require(opts, "data_dir"))
    graph = _load_graph(opts)
    config = _train_config(opts)
    model = runtime.init_model(graph, seed=config.seed)
    result = runtime.train(model, dataset, config)
    sizes, op_counts = _model_sections(graph)
    sections = {
        "training": {
            "trace": [r.to_dict() for r in result.trace],
            "best_epoch": result.best_epoch,
        },
        "accuracies": {
            "val_best": result.trace[result.best_epoch - 1].val_acc,
            "test": runtime.evaluate(result.model, dataset, "test").accuracy,
        },
        "sizes": sizes,
        "op_counts": op_counts,
    }
    out_path = opts.get("model_out")
    if out_path:
        container.save_model(result.model, out_path)
        sections["artifacts"] = {"model": str(out_path)}
    return sections


def cmd_distill(opts: _Options) -> dict:
    dataset = dataio.load_dataset(_require(opts, "data_dir"))
    teacher = container.load_model(_require(opts, "teacher"))
    if not isinstance(teacher, runtime.FloatModel):
        raise ContainerError("--teacher must be a float32 model container")
    student_graph = _load_graph(opts)
    config = _distill_config(opts)
    result = distill.distill(teacher, student_graph, dataset, config)
    sizes, op_counts = _model_sections(student_graph)
    sections = {
        "distillation": {
            "trace": [r.to_dict() for r in result.trace],
            "best_epoch": result.best_epoch,
            "temperature": config.temperature,
            "alpha": config.alpha,
        },
        "accuracies": {
            "teacher_test": runtime.evaluate(teacher, dataset, "test").accuracy,
            "student_test": runtime.evaluate(result.model, dataset, "test").accuracy,
        },
        "sizes": sizes,
        "op_counts": op_counts,
    }
    out_path = opts.get("model_out")
    if out_path:
        container.save_model(result.model, out_path)
        sections["artifacts"] = {"model": str(out_path)}
    return sections


def cmd_search(opts: _Options) -> dict:
    dataset = dataio.load_dataset(_require(opts, "data_dir"))
    teacher = container.load_model(_require(opts, "teacher"))
    if not isinstance(teacher, runtime.FloatModel):
        raise ContainerError("--teacher must be a float32 model container")
    space = _load_space(opts)
    profile = _load_profile(opts)
    budget = opts.get("budget_bytes")
    if budget is None:
        budget = g.model_size_bytes(teacher.graph, "float32") // 25
    config = _distill_config(opts)
    result = distill.memory_aware_search(teacher, space, int(budget), profile, dataset, config)
    sections = {
        "search": {
            "budget_bytes": result.budget_bytes,
            "space_size": result.space_size,
            "teacher_accuracy": result.teacher_accuracy,
            "profile": profile.name,
            "candidates": [c.to_dict() for c in result.candidates],
        },
        "accuracies": {"teacher_test": result.teacher_accuracy},
    }
    best = result.best
    if best is not None and best.accuracy is not None:
        sections["accuracies"]["best_student_test"] = best.accuracy
        out_path = opts.get("model_out")
        if out_path:
            # recreate the winning student deterministically (content-seeded)
            from dataclasses import replace

            cand_config = replace(config, seed=distill.candidate_seed(best.graph, config.seed))
            student = distill.distill(teacher, best.graph, dataset, cand_config).model
            container.save_model(student, out_path)
            sections["artifacts"] = {"model": str(out_path)}
    return sections


def cmd_quantize(opts: _Options) -> dict:
    dataset = dataio.load_dataset(_require(opts, "data_dir"))
    model_path = _require(opts, "model")
    model = container.load_model(model_path)
    if not isinstance(model, runtime.FloatModel):
        raise ContainerError("--model must be a float32 model container")
    seed = int(opts.get("seed", 0))
    n_calib = int(opts.get("calib_samples", quantize.DEFAULT_CALIBRATION_SAMPLES))
    train_idx = np.asarray(dataset.splits["train"])
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(train_idx)[: min(n_calib, train_idx.size)]
    calib = {m: dataset.modalities[m][chosen] for m in model.graph.input_names}
    stats = quantize.calibrate(model, calib)
    qmodel = quantize.quantize_model(model, stats)
    int8_engine.validate_accumulator_bounds(qmodel)
    sizes, op_counts = _model_sections(model.graph)
    sizes["float_container_bytes"] = container.container_size_bytes(model_path)
    sections = {
        "quantization": {
            "calibration_samples": int(stats.sample_count),
            "edges": len(stats.ranges),
        },
        "sizes": sizes,
        "op_counts": op_counts,
    }
    out_path = opts.get("model_out")
    if out_path:
        container.save_model(qmodel, out_path)
        sections["sizes"]["int8_container_bytes"] = container.container_size_bytes(out_path)
        sections["artifacts"] = {"model": str(out_path)}
    return sections


def cmd_plan(opts: _Options) -> dict:
    profile = _load_profile(opts)
    model_path = opts.get("model")
    act_bytes = opts.get("activation_bytes")
    weight_bytes = opts.get("weight_bytes")
    sections: dict = {}
    if model_path is not None:
        model = container.load_model(model_path)
        precision = "float32" if isinstance(model, runtime.FloatModel) else "int8"
        plan = memplan.plan_model(model.graph, profile, precision)
        total_ops = g.op_count(model.graph).total
        sizes, op_counts = _model_sections(model.graph)
        sections["sizes"] = sizes
        sections["op_counts"] = op_counts
        sections["latency_estimate"] = {
            "ms": memplan.latency_estimate_ms(total_ops, profile, plan),
            "label": "ESTIMATE",
        }
    elif act_bytes is not None and weight_bytes is not None:
        # what-if planning from raw byte figures
        lv = memplan.BufferLiveness(
            (memplan.BufferInterval("activations", 0, 0, int(act_bytes)),), 1
        )
        size_rep = g.ModelSizeReport(
            str(opts.get("precision", "int8")),
            (g.TensorSizeEntry("weights", int(weight_bytes)),),
            int(weight_bytes),
        )
        plan = memplan.plan(size_rep, lv, profile)
    else:
        raise ConfigError("pass --model, or both --activation-bytes and --weight-bytes")
    fit = plan.to_dict()
    fit["profile_detail"] = profile.to_dict()
    sections["fit_report"] = fit
    return sections


def _load_any_model(opts: _Options):
    return container.load_model(_require(opts, "model"))


def cmd_infer(opts: _Options) -> dict:
    dataset = dataio.load_dataset(_require(opts, "data_dir"))
    model = _load_any_model(opts)
    split = opts.get("split", "test")
    if split not in dataset.splits:
        raise DataError(f"unknown split {split!r}")
    idx = np.asarray(dataset.splits[split])
    index = opts.get("index")
    engine = "float32" if isinstance(model, runtime.FloatModel) else "int8"
    if index is not None:
        index = int(index)
        if not 0 <= index < idx.size:
            raise DataError(f"--index {index} outside split of {idx.size} samples")
        sel = idx[index : index + 1]
        if engine == "float32":
            fwd = runtime.forward(model, runtime.gather_inputs(model.graph, dataset.modalities, sel))
            probs = fwd.probs[0]
        else:
            inputs = {
                name: int8_engine.quantize_input(
                    dataset.modalities[name][sel], model.edge_qparams[name]
                )
                for name in model.graph.input_names
            }
            probs = int8_engine.infer_int8(model, inputs).probs[0]
        return {
            "inference": {
                "engine": engine,
                "split": split,
                "index": index,
                "probabilities": [float(p) for p in probs],
                "prediction": int(np.argmax(probs)),
                "label": int(dataset.labels[sel][0]),
            }
        }
    if engine == "float32":
        preds = runtime.predict(model, dataset.modalities, idx)
    else:
        preds = int8_engine.predict_int8(model, dataset.modalities, idx)
    labels = np.asarray(dataset.labels)[idx]
    accuracy = float((preds == labels).mean())
    counts = np.bincount(preds, minlength=model.graph.num_classes)
    return {
        "inference": {
            "engine": engine,
            "split": split,
            "count": int(idx.size),
            "prediction_counts": counts.tolist(),
        },
        "accuracies": {"split_accuracy": accuracy},
    }


def cmd_eval(opts: _Options) -> dict:
    dataset = dataio.load_dataset(_require(opts, "data_dir"))
    model = _load_any_model(opts)
    split = opts.get("split", "test")
    if split not in dataset.splits:
        raise DataError(f"unknown split {split!r}")
    if isinstance(model, runtime.FloatModel):
        result = runtime.evaluate(model, dataset, split)
        accuracy, confusion, total = result.accuracy, result.confusion, result.total
        engine = "float32"
    else:
        accuracy, confusion, total = int8_engine.evaluate_int8(model, dataset, split)
        engine = "int8"
    return {
        "evaluation": {
            "engine": engine,
            "split": split,
            "total": total,
            "confusion": confusion.tolist(),
        },
        "accuracies": {"accuracy": accuracy},
    }


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "distill": cmd_distill,
    "search": cmd_search,
    "quantize": cmd_quantize,
    "plan": cmd_plan,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option defaults (flags override)")
        p.add_argument("--seed", type=int, help="seed for every stochastic step (default 0)")
        p.add_argument("--out", help="write the JSON run report here instead of stdout")
        p.add_argument("--pretty", action="store_true", help="print human tables")

    p = sub.add_parser("gen-data", help="generate a synthetic multimodal dataset")
    common(p)
    p.add_argument("--preset", help=f"task preset: {sorted(dataio.PRESETS)}")
    p.add_argument("--task", help="JSON task-spec file (alternative to --preset)")
    p.add_argument("--data-dir", help="output dataset directory")

    p = sub.add_parser("train", help="train a float model")
    common(p)
    p.add_argument("--data-dir")
    p.add_argument("--arch", help=f"built-in architecture: {sorted(zoo.BUILTIN_ARCHES)}")
    p.add_argument("--graph", help="graph config JSON (alternative to --arch)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--model-out", help="save the trained model container here")

    p = sub.add_parser("distill", help="distill a teacher into a student architecture")
    common(p)
    p.add_argument("--data-dir")
    p.add_argument("--teacher", help="float teacher model container")
    p.add_argument("--arch", help="built-in student architecture")
    p.add_argument("--graph", help="student graph config JSON")
    p.add_argument("--temperature", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--model-out")

    p = sub.add_parser("search", help="memory-aware student search under a byte budget")
    common(p)
    p.add_argument("--data-dir")
    p.add_argument("--teacher")
    p.add_argument("--space", help=f"built-in space ({sorted(zoo.BUILTIN_SPACES)}) or JSON file")
    p.add_argument("--budget-bytes", type=int, help="int8 size budget (default: teacher float / 25)")
    p.add_argument("--profile", help="hardware profile name or JSON file (default gap8)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--model-out", help="save the best fitting distilled student here")

    p = sub.add_parser("quantize", help="post-training full-integer quantization")
    common(p)
    p.add_argument("--data-dir", help="dataset supplying calibration samples (train split)")
    p.add_argument("--model", help="float model container to quantize")
    p.add_argument("--calib-samples", type=int)
    p.add_argument("--model-out")

    p = sub.add_parser("plan", help="memory placement against a hardware profile")
    common(p)
    p.add_argument("--model", help="model container (float or int8)")
    p.add_argument("--activation-bytes", type=int, help="what-if: activation peak bytes")
    p.add_argument("--weight-bytes", type=int, help="what-if: total weight bytes")
    p.add_argument("--precision", help="precision label for what-if planning")
    p.add_argument("--profile")

    p = sub.add_parser("infer", help="run inference over a split (or one sample)")
    common(p)
    p.add_argument("--data-dir")
    p.add_argument("--model")
    p.add_argument("--split")
    p.add_argument("--index", type=int, help="single sample position within the split")

    p = sub.add_parser("eval", help="accuracy + confusion matrix on a split")
    common(p)
    p.add_argument("--data-dir")
    p.add_argument("--model")
    p.add_argument("--split")

    return parser


def _config_echo(opts: _Options) -> dict:
    echo = {}
    for key, value in vars(opts.args).items():
        if key in ("command",) or value is None:
            continue
        echo[key] = value
    for key, value in opts.config.items():
        echo.setdefault(key, value)
    return echo


def _print_pretty(sections: dict) -> None:
    if "fit_report" in sections:
        print(report.pretty_fit_report(sections["fit_report"], sections["fit_report"]["profile_detail"]))
    if "search" in sections:
        print(report.pretty_search_table(sections["search"]))
    if "training" in sections:
        print(report.pretty_trace(sections["training"]["trace"]))
    if "distillation" in sections:
        print(report.pretty_trace(sections["distillation"]["trace"]))
    if "accuracies" in sections:
        print(report.pretty_accuracies(sections["accuracies"]))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = _Options(args)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)

    run_report = {
        "schema_version": report.REPORT_SCHEMA_VERSION,
        "command": args.command,
        "seed": int(opts.get("seed", 0)),
        "status": "ok",
        "config": _config_echo(opts),
        "timings": {},
        "errors": [],
    }
    started = time.time()
    code = EXIT_OK
    try:
        sections = _HANDLERS[args.command](opts)
        for key, value in sections.items():
            if key in run_report and isinstance(value, dict):
                run_report[key].update(value)
            else:
                run_report[key] = value
    except Exception as exc:  # every failure still emits a valid report
        run_report["status"] = "error"
        run_report["errors"].append(f"{type(exc).__name__}: {exc}")
        code = _exit_code(exc)
    run_report["timings"]["wall_s"] = time.time() - started

    try:
        report.validate_report(run_report)
    except jsonschema.ValidationError as exc:
        print(f"internal error: report failed schema validation: {exc.message}", file=sys.stderr)
        return EXIT_BAD_INPUT

    text = report.dumps(run_report)
    out = opts.get("out")
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    if getattr(args, "pretty", False):
        _print_pretty(run_report)
        if run_report["errors"]:
            for err in run_report["errors"]:
                print(f"error: {err}", file=sys.stderr)
    elif not out:
        print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
