"""Context variables: tool schemas, global rules and the candidate context.

Everything here is an immutable value. Rendering is a pure function of its
inputs, so two equal contexts always render to the same bytes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Any, Iterable

PARAM_TYPES = ("string", "integer", "number", "boolean", "array", "object")

_TYPE_SYNONYMS = {
    "str": "string",
    "int": "integer",
    "float": "number",
    "double": "number",
    "bool": "boolean",
    "list": "array",
    "dict": "object",
    "tuple": "array",
}

RULE_POINTER = re.compile(r"@rule:([A-Za-z0-9_]+)")


class InvalidContext(ValueError):
    """Raised when a context fails validation and cannot be rendered."""


class RevisionRejected(ValueError):
    """A tool revision tried to change parameter structure."""


def normalize_param_type(raw: str) -> str:
    t = str(raw).strip().lower()
    t = _TYPE_SYNONYMS.get(t, t)
    if t not in PARAM_TYPES:
        raise ValueError(f"unsupported parameter type {raw!r}")
    return t


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    description: str = ""
    param_type: str = "string"
    enum_values: tuple[str, ...] | None = None
    default: Any = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter name must be nonempty")
        object.__setattr__(self, "param_type", normalize_param_type(self.param_type))
        if self.enum_values is not None:
            object.__setattr__(self, "enum_values", tuple(self.enum_values))


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ""
    parameters: tuple[ParameterSpec, ...] = ()
    required: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parameters", tuple(self.parameters))
        object.__setattr__(self, "required", tuple(self.required))

    def param(self, name: str) -> ParameterSpec | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)


@dataclass(frozen=True)
class GlobalRule:
    rule_name: str
    rule_text: str


@dataclass(frozen=True)
class CandidateContext:
    global_instructions: str = ""
    example_specific_instructions: str = ""
    tools: tuple[ToolSchema, ...] = ()
    global_rules: tuple[GlobalRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tools", tuple(self.tools))
        object.__setattr__(self, "global_rules", tuple(self.global_rules))

    def tool(self, name: str) -> ToolSchema | None:
        for t in self.tools:
            if t.name == name:
                return t
        return None

    def rule(self, name: str) -> GlobalRule | None:
        for r in self.global_rules:
            if r.rule_name == name:
                return r
        return None


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    location: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]


def _pointers(text: str) -> list[str]:
    return RULE_POINTER.findall(text or "")


def validate_inventory(
    tools: Iterable[ToolSchema], rules: Iterable[GlobalRule] | None = None
) -> ValidationReport:
    """Report every structural problem in an inventory; never raises.

    Unresolved ``@rule:`` pointers are errors when ``rules`` is given and
    warnings otherwise.
    """
    issues: list[Issue] = []
    rule_names = None if rules is None else {r.rule_name for r in rules}
    seen: set[str] = set()
    for tool in tools:
        loc = f"tool:{tool.name}"
        if tool.name in seen:
            issues.append(Issue("error", loc, "duplicate tool name"))
        seen.add(tool.name)
        if not tool.description.strip():
            issues.append(Issue("warning", loc, "empty description"))
        names: set[str] = set()
        for p in tool.parameters:
            if p.name in names:
                issues.append(Issue("error", f"{loc}.{p.name}", "duplicate parameter name"))
            names.add(p.name)
            if not p.description.strip():
                issues.append(Issue("warning", f"{loc}.{p.name}", "empty description"))
        for r in tool.required:
            if r not in names:
                issues.append(Issue("error", loc, f"dangling required entry {r!r}"))
        texts = [(loc, tool.description)] + [(f"{loc}.{p.name}", p.description) for p in tool.parameters]
        for where, text in texts:
            for ptr in _pointers(text):
                if rule_names is None:
                    issues.append(Issue("warning", where, f"unchecked rule pointer @rule:{ptr}"))
                elif ptr not in rule_names:
                    issues.append(Issue("error", where, f"unresolved rule pointer @rule:{ptr}"))
    return ValidationReport(tuple(issues))


def validate_context(ctx: CandidateContext) -> ValidationReport:
    extra: list[Issue] = []
    if not ctx.tools:
        extra.append(Issue("error", "context", "no tools"))
    seen: set[str] = set()
    for r in ctx.global_rules:
        if r.rule_name in seen:
            extra.append(Issue("error", f"rule:{r.rule_name}", "duplicate rule name"))
        seen.add(r.rule_name)
    report = validate_inventory(ctx.tools, ctx.global_rules)
    return ValidationReport(tuple(extra) + report.issues)


# -- wire format -------------------------------------------------------------


def tool_to_dict(tool: ToolSchema) -> dict:
    props: dict[str, dict] = {}
    for p in tool.parameters:
        entry: dict[str, Any] = {"description": p.description, "type": p.param_type}
        if p.enum_values is not None:
            entry["enum"] = list(p.enum_values)
        if p.default is not None:
            entry["default"] = p.default
        props[p.name] = entry
    return {
        "name": tool.name,
        "description": tool.description,
        "parameters": {"type": "dict", "properties": props, "required": list(tool.required)},
    }


def tool_from_dict(d: dict) -> ToolSchema:
    if not isinstance(d, dict) or not isinstance(d.get("name"), str) or not d["name"]:
        raise ValueError("tool entry needs a nonempty string 'name'")
    params_block = d.get("parameters") or {}
    if not isinstance(params_block, dict):
        raise ValueError(f"tool {d['name']!r}: 'parameters' must be an object")
    props = params_block.get("properties") or {}
    if not isinstance(props, dict):
        raise ValueError(f"tool {d['name']!r}: 'properties' must be an object")
    params = []
    for pname, spec in props.items():
        spec = spec or {}
        if not isinstance(spec, dict):
            raise ValueError(f"tool {d['name']!r}: property {pname!r} must be an object")
        enum = spec.get("enum")
        params.append(
            ParameterSpec(
                name=pname,
                description=str(spec.get("description") or ""),
                param_type=spec.get("type", "string"),
                enum_values=tuple(str(v) for v in enum) if enum is not None else None,
                default=spec.get("default"),
            )
        )
    required = params_block.get("required") or []
    if not isinstance(required, list):
        raise ValueError(f"tool {d['name']!r}: 'required' must be a list")
    return ToolSchema(
        name=d["name"],
        description=str(d.get("description") or ""),
        parameters=tuple(params),
        required=tuple(str(r) for r in required),
    )


def context_to_dict(ctx: CandidateContext) -> dict:
    return {
        "global_instructions": ctx.global_instructions,
        "example_specific_instructions": ctx.example_specific_instructions,
        "global_rules": [{"name": r.rule_name, "text": r.rule_text} for r in ctx.global_rules],
        "tools": [tool_to_dict(t) for t in ctx.tools],
    }


def context_from_dict(d: dict) -> CandidateContext:
    return CandidateContext(
        global_instructions=str(d.get("global_instructions") or ""),
        example_specific_instructions=str(d.get("example_specific_instructions") or ""),
        tools=tuple(tool_from_dict(t) for t in d.get("tools") or []),
        global_rules=tuple(GlobalRule(r["name"], r["text"]) for r in d.get("global_rules") or []),
    )


def dump_json(obj: Any) -> str:
    """Stable JSON text used for every file the package writes."""
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


# -- rendering ---------------------------------------------------------------

SECTION_INSTRUCTIONS = "## Global Instructions"
SECTION_RULES = "## Global Rules"
SECTION_EXAMPLES = "## Example-Specific Instructions"
SECTION_TOOLS = "## Tools"
SECTION_QUERY = "## Query"


def render_tool(tool: ToolSchema) -> str:
    return json.dumps(tool_to_dict(tool), ensure_ascii=False, separators=(", ", ": "))


def render_context(ctx: CandidateContext, query: str) -> str:
    """Assemble instructions, rules, hints, tools (inventory order) and the query."""
    report = validate_context(ctx)
    if not report.ok:
        msg = "; ".join(f"{i.location}: {i.message}" for i in report.errors)
        raise InvalidContext(msg)
    rules = "\n".join(f"[{r.rule_name}] {r.rule_text}" for r in ctx.global_rules) or "(none)"
    parts = [
        SECTION_INSTRUCTIONS,
        ctx.global_instructions.strip() or "(none)",
        "",
        SECTION_RULES,
        rules,
        "",
        SECTION_EXAMPLES,
        ctx.example_specific_instructions.strip() or "(none)",
        "",
        SECTION_TOOLS,
        *[render_tool(t) for t in ctx.tools],
        "",
        SECTION_QUERY,
        query,
    ]
    return "\n".join(parts)


def tools_in_rendered(text: str) -> list[dict]:
    """Recover the tool entries from a rendered context."""
    lines = text.split("\n")
    try:
        start = lines.index(SECTION_TOOLS) + 1
    except ValueError:
        return []
    out = []
    for line in lines[start:]:
        if line == SECTION_QUERY:
            break
        if line.startswith("{"):
            out.append(json.loads(line))
    return out


# -- revisions ---------------------------------------------------------------


def apply_tool_revision(tool: ToolSchema, revision: ToolSchema) -> ToolSchema:
    """Take descriptions from ``revision``; keep structure from ``tool``.

    Any change to the parameter-name set, a parameter type, or the required
    list raises RevisionRejected.
    """
    if revision.name != tool.name:
        raise RevisionRejected(f"revision for {revision.name!r} applied to {tool.name!r}")
    orig = {p.name: p for p in tool.parameters}
    new = {p.name: p for p in revision.parameters}
    if len(new) != len(revision.parameters):
        raise RevisionRejected(f"{tool.name}: duplicate parameter in revision")
    added = sorted(set(new) - set(orig))
    removed = sorted(set(orig) - set(new))
    if added or removed:
        raise RevisionRejected(f"{tool.name}: parameter set changed (added={added}, removed={removed})")
    for name, p in orig.items():
        if new[name].param_type != p.param_type:
            raise RevisionRejected(
                f"{tool.name}.{name}: type changed {p.param_type} -> {new[name].param_type}"
            )
    if list(revision.required) != list(tool.required):
        raise RevisionRejected(f"{tool.name}: required list changed")
    params = tuple(replace(p, description=new[p.name].description) for p in tool.parameters)
    return replace(tool, description=revision.description, parameters=params)
