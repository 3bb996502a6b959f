"""Turn a (predicted, gold) trace pair into structured failure signals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from . import slots
from .analysis import token_jaccard
from .dataset import ToolCall
from .metrics import match_calls, value_equal
from .schema import ToolSchema

KINDS = (
    "missed_tool",
    "wrong_tool",
    "extra_tool",
    "missing_slot",
    "wrong_value",
    "format_violation",
    "backend_error",
)


@dataclass(frozen=True)
class FailureSignal:
    example_id: str
    kind: str
    expected_tool: str | None = None
    predicted_tool: str | None = None
    slot: str | None = None
    expected_value: Any = None
    predicted_value: Any = None
    note: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.kind == "wrong_tool" and not (self.expected_tool and self.predicted_tool):
            raise ValueError("wrong_tool needs both expected and predicted tool")
        if self.kind == "missing_slot" and not self.slot:
            raise ValueError("missing_slot needs a slot")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key in ("expected_tool", "predicted_tool", "slot", "expected_value", "predicted_value"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        if self.note:
            d["note"] = self.note
        return d


def _type_ok(value: Any, param_type: str) -> bool:
    if param_type == "string":
        return isinstance(value, str)
    if param_type == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if param_type == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if param_type == "boolean":
        return isinstance(value, bool)
    if param_type == "array":
        return isinstance(value, list)
    if param_type == "object":
        return isinstance(value, dict)
    return True


def format_problem(tool: ToolSchema | None, slot: str, value: Any) -> str | None:
    """Describe why ``value`` is malformed for ``tool.slot``, or None if it is fine."""
    if tool is None:
        return None
    spec = tool.param(slot)
    if spec is None:
        return f"{slot} is not a parameter of {tool.name}"
    if not _type_ok(value, spec.param_type):
        return f"expected {spec.param_type}, got {type(value).__name__}"
    family = slots.classify_parameter(spec.name, spec.param_type)
    if family == slots.DATETIME and spec.param_type == "string" and not slots.is_iso8601(value):
        return "not an ISO-8601 date"
    if spec.enum_values is not None and str(value) not in spec.enum_values:
        return f"not one of {list(spec.enum_values)}"
    return None


def _pair_wrong_tools(
    gold_idx: list[int], pred_idx: list[int], gold, predicted, tools: dict[str, ToolSchema]
) -> list[tuple[int, int]]:
    """Greedily pair leftover gold and predicted calls by description similarity."""

    def desc(name: str) -> str:
        t = tools.get(name)
        return t.description if t else name.replace("_", " ")

    cands = []
    for g in gold_idx:
        for p in pred_idx:
            sim = token_jaccard(desc(gold[g].tool), desc(predicted[p].tool))
            cands.append((-sim, g, p))
    cands.sort()
    used_g: set[int] = set()
    used_p: set[int] = set()
    out = []
    for _, g, p in cands:
        if g in used_g or p in used_p:
            continue
        used_g.add(g)
        used_p.add(p)
        out.append((g, p))
    return out


def diagnose(
    predicted: Sequence[ToolCall],
    gold: Sequence[ToolCall],
    tools: Sequence[ToolSchema],
    example_id: str = "",
) -> list[FailureSignal]:
    """Failure signals for one rollout; empty exactly when the rollout fully succeeded.

    Format checks only run on slots that already disagree with gold, so a value
    that matches gold after canonicalisation is never flagged.
    """
    by_name = {t.name: t for t in tools}
    out: list[FailureSignal] = []
    matching = match_calls(predicted, gold)

    wrong = _pair_wrong_tools(
        list(matching.unmatched_gold), list(matching.unmatched_predicted), gold, predicted, by_name
    )
    paired_g = {g for g, _ in wrong}
    paired_p = {p for _, p in wrong}
    for g, p in sorted(wrong):
        out.append(
            FailureSignal(example_id, "wrong_tool", expected_tool=gold[g].tool, predicted_tool=predicted[p].tool)
        )
    for g in matching.unmatched_gold:
        if g not in paired_g:
            out.append(FailureSignal(example_id, "missed_tool", expected_tool=gold[g].tool))
    for p in matching.unmatched_predicted:
        if p not in paired_p:
            out.append(FailureSignal(example_id, "extra_tool", predicted_tool=predicted[p].tool))

    for p, g in matching.pairs:
        pc, gc = predicted[p], gold[g]
        tool = by_name.get(gc.tool)
        for key, expected in gc.arguments.items():
            if key not in pc.arguments:
                out.append(FailureSignal(example_id, "missing_slot", expected_tool=gc.tool, slot=key, expected_value=expected))
                continue
            got = pc.arguments[key]
            if value_equal(got, expected):
                continue
            out.append(
                FailureSignal(
                    example_id, "wrong_value", expected_tool=gc.tool, slot=key,
                    expected_value=expected, predicted_value=got,
                )
            )
            problem = format_problem(tool, key, got)
            if problem:
                out.append(
                    FailureSignal(
                        example_id, "format_violation", expected_tool=gc.tool, slot=key,
                        expected_value=expected, predicted_value=got, note=problem,
                    )
                )
        for key, got in pc.arguments.items():
            if key in gc.arguments:
                continue
            problem = format_problem(tool, key, got)
            note = "slot not expected for this call" + (f"; {problem}" if problem else "")
            out.append(
                FailureSignal(
                    example_id, "wrong_value", expected_tool=gc.tool, slot=key, predicted_value=got, note=note
                )
            )
    return out
