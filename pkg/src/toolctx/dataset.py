"""Trace datasets: loading, split regimes, statistics and synthetic inventories."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import slots
from .schema import ParameterSpec, ToolSchema, dump_json, tool_from_dict, tool_to_dict

SPLITS = ("train", "val", "test", "unused")


class ParseError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class InsufficientExamples(ValueError):
    pass


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ToolCall:
    tool: str
    arguments: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tool": self.tool, "arguments": dict(self.arguments)}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolCall":
        if not isinstance(d, dict):
            raise ParseError(f"tool call must be an object, got {type(d).__name__}")
        tool = d.get("tool", d.get("name"))
        if not isinstance(tool, str) or not tool:
            raise ParseError("tool call needs a nonempty 'tool'")
        args = d.get("arguments") or {}
        if not isinstance(args, dict):
            raise ParseError(f"arguments of {tool!r} must be an object")
        if any(not isinstance(k, str) or not k for k in args):
            raise ParseError(f"arguments of {tool!r} have an empty key")
        return cls(tool, dict(args))


@dataclass(frozen=True)
class Example:
    id: str
    query: str
    gold_calls: tuple[ToolCall, ...] = ()
    split: str = "train"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "gold_calls": [c.to_dict() for c in self.gold_calls],
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Example":
        try:
            ex = cls(
                id=str(d["id"]),
                query=str(d["query"]),
                gold_calls=tuple(ToolCall.from_dict(c) for c in d.get("gold_calls") or []),
                split=str(d.get("split", "train")),
            )
        except (KeyError, TypeError) as e:
            raise ParseError(f"bad example record: {e}") from e
        if ex.split not in SPLITS:
            raise ParseError(f"example {ex.id}: unknown split {ex.split!r}")
        return ex


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    tools: tuple[ToolSchema, ...]
    # family -> [(tool, parameter)] for synthesized inventories; empty otherwise
    ledger: dict[str, list[tuple[str, str]]] = field(default_factory=dict, compare=False)

    def split(self, name: str) -> list[Example]:
        return [e for e in self.examples if e.split == name]


def check_dataset(examples, tools) -> None:
    by_name = {t.name: t for t in tools}
    for ex in examples:
        for call in ex.gold_calls:
            tool = by_name.get(call.tool)
            if tool is None:
                raise SchemaMismatch(f"example {ex.id}: unknown tool {call.tool!r}")
            names = set(tool.param_names)
            for key in call.arguments:
                if key not in names:
                    raise SchemaMismatch(f"example {ex.id}: tool {call.tool!r} has no parameter {key!r}")


def load_tools(path) -> tuple[ToolSchema, ...]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of tools")
    try:
        return tuple(tool_from_dict(t) for t in raw)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def load_examples(path) -> tuple[Example, ...]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Example.from_dict(json.loads(line)))
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{lineno}: {e}") from e
    return tuple(out)


def load_dataset(tools_path, examples_path) -> Dataset:
    tools = load_tools(tools_path)
    examples = load_examples(examples_path)
    check_dataset(examples, tools)
    return Dataset(examples, tools)


def load_dataset_dir(path) -> Dataset:
    path = Path(path)
    return load_dataset(path / "tools.json", path / "examples.jsonl")


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tools.json").write_text(dump_json([tool_to_dict(t) for t in ds.tools]))
    lines = [json.dumps(e.to_dict(), ensure_ascii=False) for e in ds.examples]
    (out / "examples.jsonl").write_text("".join(line + "\n" for line in lines))


def _primary_tool(ex: Example) -> str | None:
    return ex.gold_calls[0].tool if ex.gold_calls else None


def make_train_regime(ds: Dataset, n: int, seed: int) -> Dataset:
    """Relabel non-test examples so every tool has exactly ``n`` train and ``n`` val.

    An example belongs to the tool of its first gold call. Non-test examples
    that are not picked (and no-tool examples) move to the ``unused`` split.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = random.Random(seed)
    pools: dict[str, list[Example]] = {t.name: [] for t in ds.tools}
    for ex in ds.examples:
        tool = _primary_tool(ex)
        if ex.split != "test" and tool is not None:
            pools[tool].append(ex)
    labels: dict[str, str] = {}
    for tool in ds.tools:
        cands = sorted(pools[tool.name], key=lambda e: e.id)
        if len(cands) < 2 * n:
            raise InsufficientExamples(
                f"tool {tool.name!r} has {len(cands)} non-test examples, needs {2 * n}"
            )
        rng.shuffle(cands)
        for ex in cands[:n]:
            labels[ex.id] = "train"
        for ex in cands[n : 2 * n]:
            labels[ex.id] = "val"
    examples = tuple(
        ex if ex.split == "test" else replace(ex, split=labels.get(ex.id, "unused"))
        for ex in ds.examples
    )
    return Dataset(examples, ds.tools, ds.ledger)


@dataclass(frozen=True)
class StatsTable:
    n_tools: int
    avg_total_args: float
    max_total_args: int
    avg_required_args: float
    max_required_args: int

    def as_row(self) -> tuple:
        return (self.n_tools, self.avg_total_args, self.max_total_args, self.avg_required_args, self.max_required_args)


def dataset_stats(ds: Dataset | list[ToolSchema]) -> StatsTable:
    tools = ds.tools if isinstance(ds, Dataset) else tuple(ds)
    if not tools:
        return StatsTable(0, 0.0, 0, 0.0, 0)
    totals = [len(t.parameters) for t in tools]
    reqs = [len(t.required) for t in tools]
    return StatsTable(
        n_tools=len(tools),
        avg_total_args=sum(totals) / len(tools),
        max_total_args=max(totals),
        avg_required_args=sum(reqs) / len(tools),
        max_required_args=max(reqs),
    )


# -- synthesis ---------------------------------------------------------------


@dataclass(frozen=True)
class SlotFamilySpec:
    family_name: str
    member_field_names: tuple[str, ...] = ()
    applies_fraction: float = 0.5


@dataclass(frozen=True)
class SynthSpec:
    n_tools: int
    slot_families: tuple[SlotFamilySpec, ...] = ()
    examples_per_tool: int = 3
    ambiguity_pairs: int = 0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        fams = []
        for f in d.get("slot_families") or []:
            if isinstance(f, dict):
                fams.append(
                    SlotFamilySpec(
                        f["family_name"], tuple(f.get("member_field_names") or ()), float(f["applies_fraction"])
                    )
                )
            else:
                name, members, frac = f
                fams.append(SlotFamilySpec(name, tuple(members or ()), float(frac)))
        return cls(
            n_tools=int(d["n_tools"]),
            slot_families=tuple(fams),
            examples_per_tool=int(d.get("examples_per_tool", 3)),
            ambiguity_pairs=int(d.get("ambiguity_pairs", 0)),
            seed=int(d.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "n_tools": self.n_tools,
            "slot_families": [
                {
                    "family_name": f.family_name,
                    "member_field_names": list(f.member_field_names),
                    "applies_fraction": f.applies_fraction,
                }
                for f in self.slot_families
            ],
            "examples_per_tool": self.examples_per_tool,
            "ambiguity_pairs": self.ambiguity_pairs,
            "seed": self.seed,
        }


_VERBS = ("get", "list", "search", "create", "update", "export", "summarize", "track")
_DOMAINS = ("inventory", "finance", "support", "schedule", "report", "analytics", "sales", "ops", "billing", "catalog")
_OBJECTS = (
    "orders", "items", "tickets", "shipments", "invoices", "accounts", "metrics",
    "alerts", "forecasts", "returns", "budgets", "vendors",
)
_SCOPES = (
    ("general requests", "investing contexts"),
    ("internal teams", "external partners"),
    ("daily summaries", "quarterly audits"),
    ("retail stores", "wholesale channels"),
    ("draft records", "approved records"),
    ("domestic regions", "international regions"),
)

# tool-local fields: (name, type, description, value vocabulary)
_LOCAL_FIELDS = (
    ("itemName", "string", "Name of the item to look up.", ("widget", "gasket", "bracket", "sensor", "valve")),
    ("locationName", "string", "Site where the records are kept.", ("north depot", "river yard", "hub seven", "east annex")),
    ("category", "string", "Record category to restrict the results to.", ("hardware", "services", "logistics", "supplies")),
    ("region", "string", "Sales region code.", ("EMEA", "APAC", "NA", "LATAM")),
    ("status", "string", "Workflow status filter.", ("open", "closed", "pending", "escalated")),
    ("priority", "integer", "Priority level from 1 (highest) to 5.", (1, 2, 3, 4, 5)),
    ("channel", "string", "Channel the request came through.", ("web", "phone", "partner", "store")),
    ("department", "string", "Owning department.", ("procurement", "logistics", "treasury", "field service")),
    ("keyword", "string", "Free-text keyword matched against titles.", ("delay", "refund", "backorder", "audit")),
    ("quantity", "integer", "Number of units involved.", (1, 5, 10, 25, 100)),
    ("reportType", "string", "Layout of the generated report.", ("summary", "detailed", "variance")),
    ("warehouseName", "string", "Warehouse that fulfils the request.", ("central", "overflow", "coastal")),
)

_MEMBER_LABELS = {
    "accountId": "Account the request applies to.",
    "recordId": "Record to operate on.",
    "startDate": "Start of the reporting window.",
    "endDate": "End of the reporting window.",
    "rangeMinimum": "Lower limit for the measured value.",
    "rangeMaximum": "Upper limit for the measured value.",
    "rangeMinimumInclusive": "Whether the lower limit itself counts as a match.",
    "includeArchived": "Whether archived records are returned.",
    "sortBy": "Field used to order the results.",
    "sortOrder": "Direction of the ordering.",
    "currency": "Currency of monetary amounts.",
    "unit": "Measurement unit of quantities.",
}

_MEMBER_TYPES = {
    slots.IDENTIFIER: "string",
    slots.DATETIME: "string",
    slots.NUMERIC_BOUNDS: "number",
    slots.BOOLEAN: "boolean",
    slots.SORTING: "string",
    slots.CURRENCY: "string",
}


def _family_value(family: str, member: str, rng: random.Random, ctx: dict) -> Any:
    if family == slots.IDENTIFIER:
        prefix = "ACC" if "account" in member.lower() else "REC"
        return f"{prefix}-{rng.randint(10000, 99999)}"
    if family == slots.DATETIME:
        if "start" not in ctx:
            month = rng.randint(1, 11)
            ctx["start"] = (2024, month, rng.randint(1, 28))
            ctx["end"] = (2024, month + 1, rng.randint(1, 28))
        y, m, d = ctx["end"] if member.lower().startswith(("end", "to")) else ctx["start"]
        return f"{y:04d}-{m:02d}-{d:02d}"
    if family == slots.NUMERIC_BOUNDS:
        if "lo" not in ctx:
            lo = rng.randint(0, 500)
            ctx["lo"], ctx["hi"] = lo, lo + rng.randint(0, 500)
        return ctx["hi"] if "max" in member.lower() else ctx["lo"]
    if family == slots.BOOLEAN:
        return rng.random() < 0.5
    if family == slots.SORTING:
        if "by" in member.lower():
            return rng.choice(("created", "amount", "name", "updated"))
        return rng.choice(("asc", "desc"))
    if family == slots.CURRENCY:
        if "currency" in member.lower():
            return rng.choice(("USD", "EUR", "GBP", "JPY"))
        return rng.choice(("kg", "km", "l", "pcs"))
    raise SpecError(f"no value generator for family {family}")


def _member_variants(family: str, member: str) -> tuple[str, ...]:
    return slots.VARIANTS.get(family, {}).get(member, (member,))


def synthesize_inventory(spec: SynthSpec) -> Dataset:
    """Generate a privacy-safe enterprise-style inventory with gold examples.

    Each slot family is planted in exactly ``ceil(applies_fraction * n_tools)``
    tools; ``ambiguity_pairs`` tool pairs share a cloned description and differ
    only in a scope clause. All values come from closed synthetic vocabularies.
    """
    if spec.n_tools < 1 or spec.examples_per_tool < 1 or spec.ambiguity_pairs < 0:
        raise SpecError("counts must be positive")
    if 2 * spec.ambiguity_pairs > spec.n_tools:
        raise SpecError("ambiguity_pairs needs two distinct tools per pair")
    max_tools = len(_VERBS) * len(_DOMAINS) * len(_OBJECTS)
    if spec.n_tools > max_tools:
        raise SpecError(f"at most {max_tools} tools can be named")
    families: list[tuple[str, tuple[str, ...], int]] = []
    for f in spec.slot_families:
        if not (0 < f.applies_fraction <= 1):
            raise SpecError(f"family {f.family_name}: applies_fraction must be in (0, 1]")
        try:
            fam = slots.canonical_family(f.family_name)
        except KeyError as e:
            raise SpecError(str(e)) from e
        if any(fam == g for g, _, _ in families):
            raise SpecError(f"family {fam} listed twice")
        members = f.member_field_names or slots.DEFAULT_MEMBERS[fam]
        for m in members:
            if slots.classify_parameter(m, _MEMBER_TYPES[fam]) != fam:
                raise SpecError(f"member {m!r} is not recognisable as {fam}")
        families.append((fam, tuple(members), math.ceil(f.applies_fraction * spec.n_tools - 1e-9)))

    rng = random.Random(spec.seed)
    combos = [(v, d, o) for v in _VERBS for d in _DOMAINS for o in _OBJECTS]
    rng.shuffle(combos)
    names = [f"{v}_{d}_{o}" for v, d, o in combos[: spec.n_tools]]

    # plant families
    placement: dict[int, list[tuple[str, str]]] = {i: [] for i in range(spec.n_tools)}
    ledger: dict[str, list[tuple[str, str]]] = {}
    for fam, members, count in families:
        chosen = sorted(rng.sample(range(spec.n_tools), count))
        ledger[fam] = []
        for i in chosen:
            for m in members:
                variant = rng.choice(_member_variants(fam, m))
                placement[i].append((fam, variant))
                ledger[fam].append((names[i], variant))

    pair_idx = rng.sample(range(spec.n_tools), 2 * spec.ambiguity_pairs)
    pairs = [(pair_idx[2 * k], pair_idx[2 * k + 1]) for k in range(spec.ambiguity_pairs)]

    tools: list[ToolSchema] = []
    local_choice: dict[int, list[tuple]] = {}
    for i, name in enumerate(names):
        verb, domain, obj = combos[i]
        n_local = rng.randint(1, 3)
        locals_ = rng.sample(_LOCAL_FIELDS, n_local)
        local_choice[i] = locals_
        params = []
        required = []
        for fam, variant in placement[i]:
            member = next(
                (m for m, vs in slots.VARIANTS.get(fam, {}).items() if variant in vs), variant
            )
            label = _MEMBER_LABELS.get(member, f"The {variant} field.")
            params.append(
                ParameterSpec(variant, f"{label} {slots.CONVENTION_SENTENCE[fam]}", _MEMBER_TYPES[fam])
            )
            if fam == slots.IDENTIFIER:
                required.append(variant)
        for lname, ltype, ldesc, _ in locals_:
            params.append(ParameterSpec(lname, ldesc, ltype))
        if not required:
            required.append(locals_[0][0])
        desc = f"{verb.capitalize()} {obj} from the {domain} system."
        tools.append(ToolSchema(name, desc, tuple(params), tuple(required)))

    # ambiguous pairs: clone the first description, vary one scope clause
    scope_of: dict[int, str] = {}
    for k, (a, b) in enumerate(pairs):
        general, specific = _SCOPES[k % len(_SCOPES)]
        base = tools[a].description
        tools[a] = replace(tools[a], description=f"{base} Use for {general}.")
        tools[b] = replace(tools[b], description=f"{base} Use for {specific}.")
        scope_of[a], scope_of[b] = general, specific

    examples: list[Example] = []
    split_cycle = ("train", "val", "test")
    for i, tool in enumerate(tools):
        verb, domain, obj = combos[i]
        for j in range(spec.examples_per_tool):
            vctxs: dict[str, dict] = {}
            args: dict[str, Any] = {}
            fam_of = {v: fam for fam, v in placement[i]}
            for p in tool.parameters:
                fam = fam_of.get(p.name)
                include = p.name in tool.required or rng.random() < 0.6
                fctx = vctxs.setdefault(fam, {}) if fam else {}
                if fam in (slots.NUMERIC_BOUNDS, slots.DATETIME):
                    include = include or bool(fctx)
                if not include:
                    continue
                if fam is not None:
                    args[p.name] = _family_value(fam, p.name, rng, fctx)
                else:
                    vocab = next(v for n, _, _, v in local_choice[i] if n == p.name)
                    args[p.name] = rng.choice(vocab)
            phrase = f"{verb} the {obj} in {domain}"
            if i in scope_of:
                phrase += f" for {scope_of[i]}"
            details = ", ".join(f"{k} {v}" for k, v in args.items())
            query = f"Please {phrase}" + (f" with {details}." if details else ".")
            examples.append(
                Example(
                    id=f"{tool.name}-{j:03d}",
                    query=query,
                    gold_calls=(ToolCall(tool.name, args),),
                    split=split_cycle[j % 3],
                )
            )
    ds = Dataset(tuple(examples), tuple(tools), ledger)
    check_dataset(ds.examples, ds.tools)
    return ds


def ambiguous_pairs(ds: Dataset) -> list[tuple[str, str]]:
    """Recover (general, specific) tool pairs from cloned descriptions."""
    by_base: dict[str, list[ToolSchema]] = {}
    for t in ds.tools:
        if " Use for " in t.description:
            by_base.setdefault(t.description.split(" Use for ")[0], []).append(t)
    generals = {g for g, _ in _SCOPES}
    out = []
    for group in by_base.values():
        if len(group) != 2:
            continue
        a, b = group
        if a.description.split(" Use for ")[1].rstrip(".") not in generals:
            a, b = b, a
        out.append((a.name, b.name))
    return out
