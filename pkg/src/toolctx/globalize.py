"""Slot-family detection and the two-level rewrite: shared rules plus local pointers."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

from . import slots
from .schema import CandidateContext, GlobalRule, RevisionRejected, ToolSchema, apply_tool_revision, tool_to_dict

log = logging.getLogger(__name__)

DUPLICATE_OVERLAP = 0.8
MIN_DUPLICATE_TOKENS = 4
OVERRIDE_PREFIX = "override: "

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+(?=[A-Z@]|override:)")


@dataclass(frozen=True)
class SlotFamily:
    family_name: str
    members: tuple[tuple[str, str], ...]
    canonical_rule_text: str

    def __post_init__(self):
        object.__setattr__(self, "members", tuple((t, p) for t, p in self.members))
        if not self.members:
            raise ValueError(f"slot family {self.family_name} has no members")

    @property
    def tool_names(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t for t, _ in self.members))


def detect_slot_families(
    tools: Sequence[ToolSchema], min_tools: int = 5, min_fraction: float = 0.1
) -> list[SlotFamily]:
    """Classify every parameter and keep families that recur across enough tools.

    A family is reported when it occurs in at least
    ``max(min_tools, ceil(min_fraction * len(tools)))`` distinct tools.
    """
    threshold = max(min_tools, math.ceil(min_fraction * len(tools) - 1e-9))
    members: dict[str, list[tuple[str, str]]] = {}
    for tool in tools:
        for p in tool.parameters:
            fam = slots.classify_parameter(p.name, p.param_type)
            if fam is not None:
                members.setdefault(fam, []).append((tool.name, p.name))
    out = []
    for fam in slots.FAMILIES:
        pairs = members.get(fam, [])
        if pairs and len({t for t, _ in pairs}) >= threshold:
            out.append(SlotFamily(fam, tuple(pairs), slots.RULE_TEXT[fam]))
    return out


def families_report(families: Sequence[SlotFamily]) -> list[dict]:
    return [
        {"family_name": f.family_name, "member_count": len(f.tool_names), "tools": list(f.tool_names)}
        for f in families
    ]


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT.split(text.strip()) if s]


def is_duplicate(sentence: str, rule_text: str) -> bool:
    toks = set(slots.text_tokens(sentence))
    if len(toks) < MIN_DUPLICATE_TOKENS:
        return False
    rule = set(slots.text_tokens(rule_text))
    return len(toks & rule) / len(toks) >= DUPLICATE_OVERLAP


def pointer(family_name: str) -> str:
    return f"See @rule:{family_name}."


def rewrite_description(text: str, family_name: str, rule_text: str) -> str:
    """Swap restated conventions for one pointer and flag divergent sentences as overrides."""
    tag = f"@rule:{family_name}"
    cues = slots.OVERRIDE_CUES.get(family_name, set())
    has_pointer = tag in text
    overridden = False
    out: list[str] = []
    for sent in split_sentences(text):
        if tag in sent:
            out.append(sent)
        elif is_duplicate(sent, rule_text):
            if not has_pointer:
                out.append(pointer(family_name))
                has_pointer = True
        elif sent.startswith("override:"):
            out.append(sent)
            overridden = True
        elif cues & set(slots.text_tokens(sent)):
            out.append(OVERRIDE_PREFIX + sent)
            overridden = True
        else:
            out.append(sent)
    if overridden and not has_pointer:
        out.insert(0, pointer(family_name))
    return " ".join(out)


def globalize(ctx: CandidateContext, families: Sequence[SlotFamily]) -> CandidateContext:
    """Add one rule per family and point member parameters at it.

    Tool names, parameter sets, types and required lists are never touched.
    """
    if not families:
        return ctx
    rules = list(ctx.global_rules)
    known = {r.rule_name for r in rules}
    fam_of: dict[tuple[str, str], SlotFamily] = {}
    for fam in families:
        if fam.family_name not in known:
            rules.append(GlobalRule(fam.family_name, fam.canonical_rule_text))
            known.add(fam.family_name)
        for member in fam.members:
            fam_of.setdefault(member, fam)
    rule_text = {r.rule_name: r.rule_text for r in rules}
    tools = []
    for tool in ctx.tools:
        params = []
        for p in tool.parameters:
            fam = fam_of.get((tool.name, p.name))
            if fam is not None:
                p = replace(p, description=rewrite_description(p.description, fam.family_name, rule_text[fam.family_name]))
            params.append(p)
        tools.append(replace(tool, parameters=tuple(params)))
    return replace(ctx, tools=tuple(tools), global_rules=tuple(rules))


GLOBALIZE_TEMPLATE = """Role. You are a context editor for a tool-using LLM agent. You may revise (i) Global Instructions P and (ii) per-tool schemas {T_i} (tool and argument descriptions).
Objective. Reduce repeated slot/argument guidance across tools while preserving tool-specific distinctions needed for correct tool selection and slot filling.

Step 1: Scan for repeated slot semantics.
Read each tool schema T_i and its argument descriptions carefully. Identify recurring slot conventions that appear across many tools, such as: date/time windows, identifier formatting, numeric bounds (inclusive/exclusive), units/currency normalization, boolean/defaulting rules, pagination parameters, and sorting conventions.

Step 2: Globalize shared rules.
For each repeated convention, write a single, canonical rule in the Global Instructions P that:
(a) states the default interpretation and formatting requirements, and
(b) specifies when to apply default values versus using user-provided constraints.
The global rule should be phrased generically so it applies to any tool that contains the relevant slot(s).

Step 3: Keep exceptions local.
Do not merge, alias, or rename tools. For each tool schema T_i:
- Remove redundant restatements of globalized rules and replace them with a short pointer (e.g., "See Global Instructions: [Rule Name]").
- If a tool requires different semantics (e.g., a different date format, special rounding, a stricter constraint), keep that information locally in T_i and explicitly mark it as an override of the global rule.

Constraints.
- Do not change tool interfaces: do not add/remove arguments or invent fields.
- Prefer minimal, high-impact edits: globalize only clearly repetitive conventions; keep tool-unique decision rules and edge cases local.

Output.
- An updated Global Instructions block to append to P (named rules + concise definitions).
- Updated schemas for only the tools you modified (short pointers + explicit overrides)."""

GLOBALIZE_OUTPUT_FORMAT = """

Machine-readable output. Reply with the literal text Answer: followed by only this JSON object:
{"global_rules": [{"name": "<rule_name>", "text": "<rule text>"}], "tool_revisions": [<modified tools in the input format>]}
Point tool text at a rule with @rule:<rule_name>."""


def build_globalize_prompt(ctx: CandidateContext) -> str:
    rules = "\n".join(f"[{r.rule_name}] {r.rule_text}" for r in ctx.global_rules) or "(none)"
    tools = json.dumps([tool_to_dict(t) for t in ctx.tools], indent=2, ensure_ascii=False)
    return (
        GLOBALIZE_TEMPLATE
        + "\n\nGlobal Instructions\n"
        + (ctx.global_instructions or "(none)")
        + "\n\nExisting rules\n"
        + rules
        + "\n\nTool schemas\n"
        + tools
        + GLOBALIZE_OUTPUT_FORMAT
    )


def llm_globalize(ctx: CandidateContext, backend) -> CandidateContext:
    """Optional model-driven pass; any unusable reply leaves ``ctx`` unchanged."""
    from .reflection import ParseFailure, ReflectorOutputError, parse_reflector_output
    from .schema import validate_context

    try:
        text = backend.complete(build_globalize_prompt(ctx))
    except Exception as e:
        log.warning("globalization backend failed: %s", e)
        return ctx
    idx = text.rfind("Answer:")
    try:
        if idx < 0:
            raise ParseFailure("no 'Answer:' marker")
        obj, _ = json.JSONDecoder().raw_decode(text[idx + len("Answer:") :].strip())
        raw_rules = obj.get("global_rules") or []
        new_rules = [GlobalRule(str(r["name"]), str(r["text"])) for r in raw_rules]
        edits = parse_reflector_output(
            "Answer: " + json.dumps({"tool_revisions": obj.get("tool_revisions") or []}), ctx.tools
        )
    except (ReflectorOutputError, json.JSONDecodeError, AttributeError, KeyError, TypeError) as e:
        log.warning("globalization reply rejected: %s", e)
        return ctx
    known = {r.rule_name for r in ctx.global_rules}
    rules = tuple(ctx.global_rules) + tuple(r for r in new_rules if r.rule_name not in known)
    revs = {t.name: t for t in edits.tool_revisions}
    try:
        tools = tuple(apply_tool_revision(t, revs[t.name]) if t.name in revs else t for t in ctx.tools)
    except RevisionRejected as e:
        log.warning("globalization reply rejected: %s", e)
        return ctx
    out = replace(ctx, tools=tools, global_rules=rules)
    if not validate_context(out).ok:
        log.warning("globalization reply left dangling rule pointers; ignored")
        return ctx
    return out
