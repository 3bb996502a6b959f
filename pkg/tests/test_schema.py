import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_tool, tool_st
from toolctx.schema import (
    CandidateContext,
    GlobalRule,
    InvalidContext,
    ParameterSpec,
    RevisionRejected,
    ToolSchema,
    apply_tool_revision,
    context_from_dict,
    context_to_dict,
    render_context,
    tool_from_dict,
    tool_to_dict,
    tools_in_rendered,
    validate_context,
    validate_inventory,
)


def messages(report):
    return [i.message for i in report.errors]


def test_duplicate_tool_name_is_an_error():
    report = validate_inventory([make_tool("search"), make_tool("search")])
    assert not report.ok
    assert "duplicate tool name" in messages(report)


def test_dangling_required_is_an_error():
    report = validate_inventory([make_tool("t", (("y", "string"),), ("x",))])
    assert not report.ok
    assert any("dangling required" in m for m in messages(report))


def test_empty_description_is_only_a_warning():
    report = validate_inventory([make_tool("t", description="")])
    assert report.ok
    assert [i.severity for i in report.issues] == ["warning"]


def test_synthesized_inventory_validates(etid_ds):
    report = validate_inventory(etid_ds.tools)
    assert len(etid_ds.tools) == 124
    assert report.ok and not report.errors


def test_unresolved_pointer_needs_rules_to_be_an_error():
    tool = ToolSchema("t", "Uses @rule:dates.", (), ())
    assert validate_inventory([tool]).ok
    assert not validate_inventory([tool], []).ok
    assert validate_inventory([tool], [GlobalRule("dates", "Dates are ISO.")]).ok


def test_param_type_synonyms_and_bad_type():
    assert ParameterSpec("a", "", "dict").param_type == "object"
    assert ParameterSpec("a", "", "int").param_type == "integer"
    with pytest.raises(ValueError):
        ParameterSpec("a", "", "tuple-ish")


def test_render_structure_and_determinism(small_ctx):
    text = render_context(small_ctx, "q")
    assert text.endswith("q")
    assert "search" in text and "get_item" in text
    assert text == render_context(small_ctx, "q")
    order = [text.index(h) for h in ("## Global Instructions", "## Global Rules", "## Example-Specific", "## Tools", "## Query")]
    assert order == sorted(order)
    assert [t["name"] for t in tools_in_rendered(text)] == ["search", "get_item"]


def test_rule_body_rendered_once_in_rules_section():
    body = "Dates use ISO-8601."
    tool = ToolSchema("t", "d", (ParameterSpec("start", "@rule:DateTimeFields", "string"),), ())
    ctx = CandidateContext(tools=(tool,), global_rules=(GlobalRule("DateTimeFields", body),))
    text = render_context(ctx, "q")
    assert text.count(body) == 1
    rules_at = text.index("## Global Rules")
    assert rules_at < text.index(body) < text.index("## Example-Specific")


def test_render_rejects_invalid_context():
    with pytest.raises(InvalidContext):
        render_context(CandidateContext(tools=()), "q")
    bad = CandidateContext(tools=(ToolSchema("t", "see @rule:missing", (), ()),))
    with pytest.raises(InvalidContext):
        render_context(bad, "q")


def test_revision_changes_descriptions_only():
    tool = make_tool("t", (("id", "string"), ("n", "integer")), ("id",))
    rev = ToolSchema(
        "t", "New.", (ParameterSpec("id", "New id.", "string"), ParameterSpec("n", "New n.", "integer")), ("id",)
    )
    out = apply_tool_revision(tool, rev)
    assert out.description == "New."
    assert [p.description for p in out.parameters] == ["New id.", "New n."]
    assert [(p.name, p.param_type) for p in out.parameters] == [("id", "string"), ("n", "integer")]
    assert out.required == ("id",)


def test_revision_adding_parameter_rejected():
    tool = make_tool("t", (("id", "string"),), ("id",))
    rev = ToolSchema("t", "x", (ParameterSpec("id", "", "string"), ParameterSpec("extra", "", "string")), ("id",))
    with pytest.raises(RevisionRejected):
        apply_tool_revision(tool, rev)


def test_revision_dropping_required_rejected():
    tool = make_tool("t", (("id", "string"),), ("id",))
    rev = ToolSchema("t", "x", (ParameterSpec("id", "", "string"),), ())
    with pytest.raises(RevisionRejected):
        apply_tool_revision(tool, rev)


def test_revision_changing_type_or_name_rejected():
    tool = make_tool("t", (("id", "string"),), ("id",))
    with pytest.raises(RevisionRejected):
        apply_tool_revision(tool, ToolSchema("t", "x", (ParameterSpec("id", "", "integer"),), ("id",)))
    with pytest.raises(RevisionRejected):
        apply_tool_revision(tool, ToolSchema("u", "x", (ParameterSpec("id", "", "string"),), ("id",)))


@given(tool_st(name="t"), st.data())
def test_revision_never_changes_structure(tool, data):
    descs = [data.draw(st.text(max_size=20)) for _ in tool.parameters]
    rev = ToolSchema(
        "t",
        data.draw(st.text(max_size=20)),
        tuple(ParameterSpec(p.name, d, p.param_type) for p, d in zip(tool.parameters, descs)),
        tool.required,
    )
    out = apply_tool_revision(tool, rev)
    assert [p.name for p in out.parameters] == [p.name for p in tool.parameters]
    assert {p.name: p.param_type for p in out.parameters} == {p.name: p.param_type for p in tool.parameters}
    assert out.required == tool.required


@given(st.lists(tool_st(), max_size=4, unique_by=lambda t: t.name), st.text(max_size=30))
def test_valid_inventory_always_renders(tools, query):
    ctx = CandidateContext(tools=tuple(tools))
    if validate_context(ctx).ok:
        assert render_context(ctx, query) == render_context(ctx, query)


def test_wire_format_round_trip(small_ctx):
    ctx = CandidateContext(
        global_instructions="G",
        example_specific_instructions="- hint",
        tools=small_ctx.tools,
        global_rules=(GlobalRule("r", "text"),),
    )
    d = context_to_dict(ctx)
    assert context_from_dict(json.loads(json.dumps(d))) == ctx
    assert d["global_rules"] == [{"name": "r", "text": "text"}]
    t = tool_to_dict(ctx.tools[0])
    assert t["parameters"]["type"] == "dict"
    assert tool_from_dict(t) == ctx.tools[0]
