"""Run reports: one JSON schema for every CLI command, plus pretty printers.

Reports are machine-readable first. Sections are present only when the
command produced them (absent rather than null); accuracies all live under
"accuracies" and are schema-bounded to [0, 1]. Latency figures carry the
literal label "ESTIMATE".
"""

from __future__ import annotations

import json

import jsonschema

REPORT_SCHEMA_VERSION = 1

COMMANDS = ("gen-data", "train", "distill", "search", "quantize", "plan", "infer", "eval")

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tinyfuse run report",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "command", "seed", "status", "config", "timings", "errors"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer"},
        "status": {"enum": ["ok", "error"]},
        "config": {"type": "object"},
        "timings": {
            "type": "object",
            "required": ["wall_s"],
            "properties": {"wall_s": {"type": "number", "minimum": 0}},
            "additionalProperties": True,
        },
        "errors": {"type": "array", "items": {"type": "string"}},
        "artifacts": {"type": "object", "additionalProperties": {"type": "string"}},
        "accuracies": {
            "type": "object",
            "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "dataset": {"type": "object"},
        "sizes": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "op_counts": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "training": {"type": "object"},
        "distillation": {"type": "object"},
        "search": {"type": "object"},
        "quantization": {"type": "object"},
        "fit_report": {"type": "object"},
        "latency_estimate": {
            "type": "object",
            "required": ["ms", "label"],
            "properties": {"ms": {"type": "number", "minimum": 0}, "label": {"const": "ESTIMATE"}},
            "additionalProperties": False,
        },
        "inference": {"type": "object"},
        "evaluation": {"type": "object"},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(REPORT_SCHEMA)


def validate_report(report: dict) -> None:
    """Raises jsonschema.ValidationError on the first violation."""
    _VALIDATOR.validate(report)


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# pretty printers (human tables mirroring the shapes of the figure/table data)


def _kb(nbytes: int) -> str:
    return f"{nbytes / 1024:.1f}"


def pretty_fit_report(plan: dict, profile: dict) -> str:
    lines = [
        f"memory plan [{plan['profile']}] precision={plan['precision']} "
        f"activations={_kb(plan['activation_peak_bytes'])} KB -> {plan['activation_level']}",
        f"{'level':<6} {'available (KB)':>14} {'assigned (KB)':>14} {'util':>6}",
    ]
    available = {lv["label"]: lv["available_bytes"] for lv in profile["levels"]}
    for label, assigned in plan["level_assigned_bytes"].items():
        lines.append(
            f"{label:<6} {_kb(available[label]):>14} {_kb(assigned):>14} "
            f"{plan['level_utilization_pct'][label]:>5}%"
        )
    verdict = "fit on-chip" if plan["fits_on_chip"] else "NOT on-chip"
    lines.append(f"verdict: {verdict}")
    for warning in plan.get("warnings", []):
        lines.append(f"warning: {warning}")
    return "\n".join(lines)


def pretty_search_table(search: dict) -> str:
    lines = [
        f"search: {search['space_size']} candidates, budget {search['budget_bytes']} B, "
        f"teacher acc {search['teacher_accuracy']:.4f}",
        f"{'id':>3} {'params':>9} {'float KB':>9} {'int8 KB':>8} {'acc':>7} {'fits':>5}",
    ]
    for cand in search["candidates"]:
        acc = "diverged" if cand["accuracy"] is None else f"{cand['accuracy']:.4f}"
        fits = "yes" if (cand["fits_budget"] and cand["fits_onchip"]) else "no"
        lines.append(
            f"{cand['candidate_id']:>3} {cand['params']:>9} "
            f"{_kb(cand['float_size_bytes']):>9} {_kb(cand['int8_size_bytes']):>8} "
            f"{acc:>7} {fits:>5}"
        )
    return "\n".join(lines)


def pretty_accuracies(accuracies: dict) -> str:
    width = max(len(k) for k in accuracies) if accuracies else 0
    return "\n".join(f"{k:<{width}}  {v:.4f}" for k, v in sorted(accuracies.items()))


def pretty_trace(trace: list[dict]) -> str:
    lines = [f"{'epoch':>5} {'loss':>10} {'train acc':>10} {'val acc':>8}"]
    for rec in trace:
        lines.append(
            f"{rec['epoch']:>5} {rec['train_loss']:>10.4f} "
            f"{rec['train_acc']:>10.4f} {rec['val_acc']:>8.4f}"
        )
    return "\n".join(lines)
