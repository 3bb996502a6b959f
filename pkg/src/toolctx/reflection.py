"""Reflector prompt construction, strict output parsing, edit application, merging."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from typing import Sequence

from .dataset import ToolCall
from .diagnose import FailureSignal
from .schema import (
    CandidateContext,
    GlobalRule,
    RevisionRejected,
    ToolSchema,
    apply_tool_revision,
    tool_from_dict,
    tool_to_dict,
)

log = logging.getLogger(__name__)


class ReflectorOutputError(ValueError):
    pass


class ParseFailure(ReflectorOutputError):
    pass


class SchemaFailure(ReflectorOutputError):
    pass


class MergeBackendFailure(RuntimeError):
    pass


TOOLS_HEADING = "Current Tool Definitions (Full List)\n"
FEEDBACK_HEADING = "Feedback Trace\n"

REFLECTION_TEMPLATE = """Goal: produce clean, minimal updates to the global instructions and only the tools that require revision, based on the feedback trace.

Task. Update the global instructions and tool descriptions using the feedback on the current context.

Current Global Instructions
<curr_instructions>

Current Tool Definitions (Full List)
<tools_list_to_update>

Objective. Produce:
- global_instructions: updated system-level guidance.
- example_specific_instructions: batch-specific guidance to append to prior examples/hints.
- tool_revisions: only the tools you modified (not the entire tool list).

Feedback Trace
<dataset_with_feedback>
For each example, the feedback indicates whether the model:
- failed to call a tool that should have been called, or
- called the wrong tool instead of the correct one, or
- selected the correct tool but produced incorrect action_inputs (missing/wrong parameters), or
- selected the correct parameters but assigned incorrect slot names/values (formatting/value errors).

Instructions Revision Rules (Important)
- The instructions may already contain prior revisions and examples.
- Always preserve previously incorporated example_specific_instructions and example hints; do not alter them.
- Modify existing example_specific_instructions only if there is a direct conflict with the current feedback.
- Add new guidance as bullet points appended to the existing list under example_specific_instructions.

Tool Revision Rules (Important)
- If an answer is marked wrong, check two cases:
  - Case 1 (Model error): If a tool-selection error occurred (a tool should have been chosen but was not, or was chosen but should not have been), you must revise the relevant tool description(s) to make correct usage clearer. Otherwise, you may leave the tool unchanged.
  - Case 2 (Documentation/data issue): Tool documentation may be ambiguous or incomplete, and ground-truth traces may contain incorrect tool arguments or values. If you detect such issues, revise the tool documentation to remove ambiguity so future runs avoid the same failure.
- Return only the tools you modified from the provided tool list.

Output Format (Strict)
- Return a single JSON object immediately after the literal text Answer:
- Do not add any extra text before or after the JSON.

Required JSON Schema
{
  "global_instructions": "UPDATED GLOBAL INSTRUCTIONS HERE",
  "example_specific_instructions": "UPDATED INSTRUCTIONS AS PER THE CURRENT BATCH",
  "tool_revisions": [
    {
      "name": "<tool1_name>",
      "description": "<tool1_description>",
      "parameters": {
        "type": "dict",
        "properties": {
          "<property1>": {"description": "<updated tool1_property1_description>", "type": "<property1_type; same as original>"},
          "<property2>": {"description": "<updated tool1_property2_description>", "type": "<property2_type; same as original>"}
        },
        "required": ["<property1; required parameters; identical to original>"]
      },
      "required": null
    }
  ]
}

Final constraint: Answer: must be followed by only the JSON object."""

MERGE_TEMPLATE = """Role. You are the instruction merger in agent. Your job is to combine a draft update with the current best global instructions into a single improved instruction prompt.

Inputs
- Global best instructions (P*): <best_global_instructions>
- Draft instructions from current rollout (P^d): <draft_global_instructions>
- (Optional) Newly added tools since P*: <new_tools_summary>
  (Names + 1-2 lines per tool describing the new capability.)

Objective. Produce merged instructions P' that:
- preserve stable, broadly useful guidance from P* (the "growing playbook"),
- incorporate new and validated guidance from P^d additively,
- remain concise and non-redundant (avoid restating the same rule twice),
- support incremental toolset growth: keep cross-cutting rules stable while adding any new decision rules introduced by newly appended tools.

Merge Rules (Strict)
- Do not overwrite: never delete a rule from P* unless P^d provides a clearly conflicting correction.
- Prefer generalization: if P^d adds a rule that generalizes an existing one, keep the generalized version and remove the narrower duplicate.
- Resolve conflicts explicitly: if a draft rule contradicts an existing rule, keep the version that is more precise and operational (clear triggers, clear expected behavior), and remove the other.
- Tool-growth compatibility: if a draft rule is specific to a newly added tool, include it only if it can be stated as a general decision rule (when-to-use / how-to-fill), otherwise keep it minimal and non-invasive.
- No tool merging: do not rename, alias, or merge tools; only adjust global instruction text.

Output Format (Strict)
- Return only the merged global instructions P' as plain text.
- No JSON. No commentary. No additional sections."""

FORMAT_REMINDER = (
    "\n\nReminder: your previous reply could not be used. Reply with the literal text Answer: "
    "followed by only the JSON object in the required schema, revising only tools from the list."
)

KIND_PHRASES = {
    "missed_tool": "failed to call a tool that should have been called",
    "wrong_tool": "called the wrong tool instead of the correct one",
    "extra_tool": "called the wrong tool instead of the correct one (this call was not expected at all)",
    "missing_slot": "selected the correct tool but produced incorrect action_inputs (missing/wrong parameters)",
    "wrong_value": "selected the correct parameters but assigned incorrect slot names/values (formatting/value errors)",
    "format_violation": "selected the correct parameters but assigned incorrect slot names/values (formatting/value errors)",
    "backend_error": "produced no answer because the agent backend failed",
}


def _fill(template: str, values: dict[str, str]) -> str:
    pattern = re.compile("|".join(re.escape(k) for k in values))
    return pattern.sub(lambda m: values[m.group(0)], template)


@dataclass(frozen=True)
class FeedbackItem:
    example_id: str
    query: str
    predicted_calls: tuple[ToolCall, ...]
    gold_calls: tuple[ToolCall, ...]
    signals: tuple[FailureSignal, ...]

    def to_dict(self) -> dict:
        phrases = list(dict.fromkeys(KIND_PHRASES[s.kind] for s in self.signals))
        return {
            "id": self.example_id,
            "query": self.query,
            "predicted_calls": [c.to_dict() for c in self.predicted_calls],
            "gold_calls": [c.to_dict() for c in self.gold_calls],
            "feedback": phrases,
            "signals": [s.to_dict() for s in self.signals],
        }


@dataclass(frozen=True)
class FeedbackBundle:
    items: tuple[FeedbackItem, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.items)


@dataclass(frozen=True)
class EditSet:
    global_instructions: str | None = None
    example_specific_instructions: str | None = None
    tool_revisions: tuple[ToolSchema, ...] = ()

    def __post_init__(self):
        for name in ("global_instructions", "example_specific_instructions"):
            val = getattr(self, name)
            if val is not None and not val.strip():
                object.__setattr__(self, name, None)
        object.__setattr__(self, "tool_revisions", tuple(self.tool_revisions))

    @property
    def is_empty(self) -> bool:
        return self.global_instructions is None and self.example_specific_instructions is None and not self.tool_revisions


def current_instructions_block(ctx: CandidateContext) -> str:
    parts = [ctx.global_instructions.strip() or "(none)"]
    if ctx.global_rules:
        parts.append("Global rules:\n" + "\n".join(f"[{r.rule_name}] {r.rule_text}" for r in ctx.global_rules))
    parts.append("Example-specific instructions:\n" + (ctx.example_specific_instructions.strip() or "(none)"))
    return "\n\n".join(parts)


def build_reflection_prompt(ctx: CandidateContext, feedback: FeedbackBundle) -> str:
    if not feedback:
        raise ValueError("reflection needs at least one feedback item")
    tools_json = json.dumps([tool_to_dict(t) for t in ctx.tools], indent=2, ensure_ascii=False)
    fb_json = json.dumps([item.to_dict() for item in feedback.items], indent=2, ensure_ascii=False)
    return _fill(
        REFLECTION_TEMPLATE,
        {
            "<curr_instructions>": current_instructions_block(ctx),
            "<tools_list_to_update>": tools_json,
            "<dataset_with_feedback>": fb_json,
        },
    )


def render_edit_set(edits: EditSet) -> str:
    payload = {
        "global_instructions": edits.global_instructions or "",
        "example_specific_instructions": edits.example_specific_instructions or "",
        "tool_revisions": [tool_to_dict(t) for t in edits.tool_revisions],
    }
    return "Answer: " + json.dumps(payload, ensure_ascii=False)


def _strip_fence(text: str) -> str:
    t = text.strip()
    if t.startswith("```"):
        t = t.split("\n", 1)[1] if "\n" in t else ""
    return t


def parse_reflector_output(text: str, tools: Sequence[ToolSchema] | None = None) -> EditSet:
    """Parse the JSON object after the last ``Answer:`` marker.

    With ``tools`` given, revisions are checked against the inventory: unknown
    tools and structural changes raise SchemaFailure.
    """
    marks = [m.start() for m in re.finditer("Answer:", text)]
    if not marks:
        raise ParseFailure("no 'Answer:' marker in reflector output")
    obj = None
    error = "expected a JSON object after 'Answer:'"
    # the last marker normally wins; earlier ones are tried only when a later
    # marker sits inside the JSON text itself
    for idx in reversed(marks):
        body = _strip_fence(text[idx + len("Answer:") :])
        try:
            value, _ = json.JSONDecoder().raw_decode(body)
        except json.JSONDecodeError as e:
            error = f"invalid JSON after 'Answer:': {e}"
            continue
        if isinstance(value, dict):
            obj = value
            break
    if obj is None:
        raise ParseFailure(error)

    def text_field(key: str) -> str | None:
        val = obj.get(key)
        if val is None:
            return None
        if not isinstance(val, str):
            raise SchemaFailure(f"{key} must be a string")
        return val

    gi = text_field("global_instructions")
    esi = text_field("example_specific_instructions")
    raw_revs = obj.get("tool_revisions") or []
    if not isinstance(raw_revs, list):
        raise SchemaFailure("tool_revisions must be a list")
    by_name = {t.name: t for t in tools} if tools is not None else None
    revisions = []
    seen: set[str] = set()
    for raw in raw_revs:
        if not isinstance(raw, dict) or not isinstance(raw.get("name"), str):
            raise SchemaFailure("each tool revision needs a string name")
        name = raw["name"]
        if name in seen:
            raise SchemaFailure(f"tool {name!r} revised twice")
        seen.add(name)
        if by_name is not None and name not in by_name:
            raise SchemaFailure(f"revision names unknown tool {name!r}")
        if "parameters" not in raw and by_name is not None:
            raw = dict(raw, parameters=tool_to_dict(by_name[name])["parameters"])
        try:
            rev = tool_from_dict(raw)
        except ValueError as e:
            raise SchemaFailure(str(e)) from e
        if by_name is not None:
            try:
                apply_tool_revision(by_name[name], rev)
            except RevisionRejected as e:
                raise SchemaFailure(str(e)) from e
        revisions.append(rev)
    return EditSet(gi, esi, tuple(revisions))


def _norm_line(line: str) -> str:
    return " ".join(line.split()).lower()


def _bullet_text(line: str) -> str:
    return re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", line)


def append_bullets(prior: str, new: str | None) -> str:
    """Append lines of ``new`` that ``prior`` lacks, as ``- `` bullets; ``prior`` is kept verbatim."""
    if not new:
        return prior
    have = {_norm_line(_bullet_text(l)) for l in prior.splitlines() if l.strip()}
    added = []
    for line in new.splitlines():
        if not line.strip():
            continue
        key = _norm_line(_bullet_text(line))
        if key in have:
            continue
        have.add(key)
        added.append("- " + _bullet_text(line).strip())
    if not added:
        return prior
    sep = "\n" if prior and not prior.endswith("\n") else ""
    return prior + sep + "\n".join(added)


def apply_edits(ctx: CandidateContext, edits: EditSet) -> CandidateContext:
    revs = {t.name: t for t in edits.tool_revisions}
    unknown = set(revs) - {t.name for t in ctx.tools}
    if unknown:
        raise RevisionRejected(f"revisions for unknown tools: {sorted(unknown)}")
    tools = tuple(apply_tool_revision(t, revs[t.name]) if t.name in revs else t for t in ctx.tools)
    return replace(
        ctx,
        global_instructions=edits.global_instructions if edits.global_instructions is not None else ctx.global_instructions,
        example_specific_instructions=append_bullets(ctx.example_specific_instructions, edits.example_specific_instructions),
        tools=tools,
    )


def merge_lines(draft: str, best: str) -> str:
    """Best's lines verbatim, then draft lines best lacks (whitespace-insensitive)."""
    have = {_norm_line(l) for l in best.splitlines()}
    extra = []
    for line in draft.splitlines():
        key = _norm_line(line)
        if not key or key in have:
            continue
        have.add(key)
        extra.append(line)
    if not extra:
        return best
    if not best:
        return "\n".join(extra)
    sep = "" if best.endswith("\n") else "\n"
    return best + sep + "\n".join(extra)


def _merge_rules(draft: Sequence[GlobalRule], best: Sequence[GlobalRule]) -> tuple[GlobalRule, ...]:
    names = {r.rule_name for r in best}
    return tuple(best) + tuple(r for r in draft if r.rule_name not in names)


def merge_tools(
    draft: Sequence[ToolSchema], best: Sequence[ToolSchema], revised: set[str] | None = None
) -> tuple[ToolSchema, ...]:
    """Per tool: the draft wins when it was revised (or, with no set given, when it differs)."""
    best_by = {t.name: t for t in best}
    out = []
    for t in draft:
        b = best_by.get(t.name)
        if b is None:
            out.append(t)
        elif revised is None:
            out.append(t)
        else:
            out.append(t if t.name in revised else b)
    return tuple(out)


def merge_with_best(
    draft: CandidateContext,
    best: CandidateContext,
    mode: str = "deterministic",
    backend=None,
    revised: set[str] | None = None,
) -> CandidateContext:
    """Fold a draft into the validation-best context without losing best's rules."""
    if mode not in ("deterministic", "llm"):
        raise ValueError(f"unknown merge mode {mode!r}")
    if mode == "llm":
        if backend is None:
            raise ValueError("llm merge needs a backend")
        best_names = {t.name for t in best.tools}
        new_tools = [t for t in draft.tools if t.name not in best_names]
        summary = "\n".join(f"{t.name}: {t.description}" for t in new_tools) or "(none)"
        prompt = _fill(
            MERGE_TEMPLATE,
            {
                "<best_global_instructions>": best.global_instructions or "(none)",
                "<draft_global_instructions>": draft.global_instructions or "(none)",
                "<new_tools_summary>": summary,
            },
        )
        try:
            merged_text = backend.complete(prompt).strip()
        except Exception as e:
            raise MergeBackendFailure(str(e)) from e
        if not merged_text:
            raise MergeBackendFailure("merger returned empty instructions")
    else:
        merged_text = merge_lines(draft.global_instructions, best.global_instructions)
    return CandidateContext(
        global_instructions=merged_text,
        example_specific_instructions=merge_lines(
            draft.example_specific_instructions, best.example_specific_instructions
        ),
        tools=merge_tools(draft.tools, best.tools, revised),
        global_rules=_merge_rules(draft.global_rules, best.global_rules),
    )


def propose_edits(
    ctx: CandidateContext, feedback: FeedbackBundle, backend, retry_limit: int = 2
) -> tuple[EditSet | None, int]:
    """Ask the reflector for edits, re-prompting on unusable output.

    Returns the edits (None when every attempt failed) and the number of
    backend calls made.
    """
    prompt = build_reflection_prompt(ctx, feedback)
    calls = 0
    for attempt in range(retry_limit + 1):
        calls += 1
        try:
            text = backend.complete(prompt if attempt == 0 else prompt + FORMAT_REMINDER)
        except Exception as e:
            log.warning("reflector backend failed: %s", e)
            return None, calls
        try:
            return parse_reflector_output(text, ctx.tools), calls
        except ReflectorOutputError as e:
            log.warning("reflector output rejected (attempt %d/%d): %s", attempt + 1, retry_limit + 1, e)
    return None, calls
