import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_tool
from toolctx.backends import MockCompletionBackend
from toolctx.dataset import ToolCall
from toolctx.diagnose import FailureSignal
from toolctx.reflection import (
    FORMAT_REMINDER,
    EditSet,
    FeedbackBundle,
    FeedbackItem,
    MergeBackendFailure,
    ParseFailure,
    SchemaFailure,
    apply_edits,
    build_reflection_prompt,
    merge_lines,
    merge_with_best,
    parse_reflector_output,
    propose_edits,
    render_edit_set,
)
from toolctx.schema import CandidateContext, GlobalRule, ParameterSpec, RevisionRejected, ToolSchema, tool_to_dict

TOOLS = tuple(make_tool(f"tool_{i}", (("id", "string"), ("n", "integer")), ("id",)) for i in range(20))
CTX = CandidateContext("Global rules here.", "- keep me", TOOLS)


def item(eid, kind="wrong_tool"):
    if kind == "wrong_tool":
        sig = FailureSignal(eid, kind, expected_tool="tool_1", predicted_tool="tool_2")
    else:
        sig = FailureSignal(eid, kind, expected_tool="tool_1", slot="id", expected_value="X")
    return FeedbackItem(eid, "what is the rate", (ToolCall("tool_2"),), (ToolCall("tool_1", {"id": "X"}),), (sig,))


def revised(tool, text="Better."):
    return ToolSchema(
        tool.name, text, tuple(ParameterSpec(p.name, text, p.param_type) for p in tool.parameters), tool.required
    )


# -- prompt ------------------------------------------------------------------


def test_prompt_contains_filled_sections():
    prompt = build_reflection_prompt(CTX, FeedbackBundle((item("ex-1"),)))
    assert "called the wrong tool instead of the correct one" in prompt
    assert "Global rules here." in prompt and "- keep me" in prompt
    assert "<curr_instructions>" not in prompt and "<dataset_with_feedback>" not in prompt
    assert '"name": "tool_19"' in prompt
    assert prompt.rstrip().endswith("Answer: must be followed by only the JSON object.")


def test_prompt_is_deterministic():
    fb = FeedbackBundle((item("a"), item("b", "missing_slot")))
    assert build_reflection_prompt(CTX, fb) == build_reflection_prompt(CTX, fb)


def test_each_example_id_once():
    fb = FeedbackBundle(tuple(item(f"case-{k}-zz") for k in range(3)))
    prompt = build_reflection_prompt(CTX, fb)
    for k in range(3):
        assert prompt.count(f"case-{k}-zz") == 1


def test_placeholder_text_in_instructions_is_not_refilled():
    ctx = CandidateContext("literal <tools_list_to_update> token", "", TOOLS[:1])
    prompt = build_reflection_prompt(ctx, FeedbackBundle((item("x"),)))
    assert "literal <tools_list_to_update> token" in prompt


def test_prompt_needs_feedback():
    with pytest.raises(ValueError):
        build_reflection_prompt(CTX, FeedbackBundle(()))


# -- parsing -----------------------------------------------------------------


def test_parse_basic():
    text = 'Answer: {"global_instructions":"X","example_specific_instructions":"Y","tool_revisions":[]}'
    assert parse_reflector_output(text) == EditSet("X", "Y", ())


def test_parse_without_marker():
    with pytest.raises(ParseFailure):
        parse_reflector_output("I think the tools are fine.")
    with pytest.raises(ParseFailure):
        parse_reflector_output("Answer: {broken")


def test_parse_unknown_tool():
    text = "Answer: " + json.dumps({"tool_revisions": [{"name": "ghost", "description": "x"}]})
    with pytest.raises(SchemaFailure):
        parse_reflector_output(text, TOOLS)


def test_parse_uses_last_marker_and_ignores_extras():
    text = 'Prose mentioning Answer: maybe.\nAnswer: {"global_instructions": "G", "unknown": 1}'
    edits = parse_reflector_output(text)
    assert edits.global_instructions == "G" and edits.tool_revisions == ()


def test_parse_marker_inside_instructions():
    edits = EditSet("Reply starts with Answer: always", None, ())
    assert parse_reflector_output(render_edit_set(edits)) == edits


def test_parse_missing_parameters_keeps_original():
    text = "Answer: " + json.dumps({"tool_revisions": [{"name": "tool_3", "description": "New.", "required": None}]})
    edits = parse_reflector_output(text, TOOLS)
    assert edits.tool_revisions[0].param_names == ("id", "n")


def test_parse_fenced_output():
    text = 'Answer:\n```json\n{"global_instructions": "G"}\n```'
    assert parse_reflector_output(text).global_instructions == "G"


edit_text = st.one_of(st.none(), st.text(min_size=1, max_size=40).filter(lambda s: s.strip()))


@given(edit_text, edit_text, st.lists(st.integers(0, 19), unique=True, max_size=4), st.text(max_size=30))
def test_round_trip(gi, esi, which, desc):
    edits = EditSet(gi, esi, tuple(revised(TOOLS[i], desc) for i in which))
    assert parse_reflector_output(render_edit_set(edits), TOOLS) == edits


def _structural_mutations(tool, rng):
    d = tool_to_dict(tool)
    kind = rng.randrange(4)
    props = d["parameters"]["properties"]
    if kind == 0:
        props[f"extra_{rng.randrange(100)}"] = {"description": "new", "type": "string"}
    elif kind == 1:
        props.pop(rng.choice(list(props)))
    elif kind == 2:
        d["parameters"]["required"] = rng.choice([[], ["id", "n"], ["n"]])
    else:
        name = rng.choice(list(props))
        props[name]["type"] = "boolean" if props[name]["type"] != "boolean" else "string"
    return d


def test_fuzzed_structural_revisions_always_rejected():
    rng = random.Random(7)
    for _ in range(1000):
        tool = rng.choice(TOOLS)
        rev = _structural_mutations(tool, rng)
        with pytest.raises(SchemaFailure):
            parse_reflector_output("Answer: " + json.dumps({"tool_revisions": [rev]}), TOOLS)


# -- apply and merge ---------------------------------------------------------


def test_apply_instruction_only():
    out = apply_edits(CTX, EditSet("New global.", "Check ids.", ()))
    assert out.global_instructions == "New global."
    assert out.tools == CTX.tools
    assert out.example_specific_instructions == "- keep me\n- Check ids."


def test_apply_empty_means_keep():
    assert apply_edits(CTX, EditSet(None, None, ())) == CTX


def test_apply_one_revision_is_local():
    out = apply_edits(CTX, EditSet(None, None, (revised(TOOLS[4]),)))
    changed = [a.name for a, b in zip(out.tools, CTX.tools) if a != b]
    assert changed == ["tool_4"]


def test_apply_unknown_revision():
    with pytest.raises(RevisionRejected):
        apply_edits(CTX, EditSet(None, None, (make_tool("ghost"),)))


@given(st.lists(st.text(alphabet="abc -", min_size=1, max_size=8), max_size=5), st.text(alphabet="abc\n -", max_size=30))
def test_appended_bullets_preserve_prior_text(prior_lines, new):
    prior = "\n".join("- " + l for l in prior_lines)
    ctx = CandidateContext("", prior, TOOLS[:1])
    out = apply_edits(ctx, EditSet(None, new, ()))
    assert out.example_specific_instructions.startswith(prior)


def test_merge_deterministic_example():
    assert merge_lines("B\nC", "A\nB") == "A\nB\nC"
    best = CandidateContext("A\nB", "", TOOLS)
    draft = CandidateContext("B\nC", "", TOOLS)
    assert merge_with_best(draft, best).global_instructions == "A\nB\nC"
    assert merge_with_best(best, best) == best


@given(st.lists(st.sampled_from(["a", "b", "c", " a", "d e", ""]), max_size=6), st.lists(st.sampled_from(["a", "b", "x", "y", " b "]), max_size=6))
def test_merge_keeps_best_lines_and_is_idempotent(d_lines, b_lines):
    draft, best = "\n".join(d_lines), "\n".join(b_lines)
    merged = merge_lines(draft, best)
    for line in best.splitlines():
        assert line in merged.splitlines()
    assert merge_lines(merged, best) == merged


def test_merge_tools_draft_wins_only_when_revised():
    best = CandidateContext("", "", tuple(revised(t, "best") for t in TOOLS), (GlobalRule("r1", "one"),))
    draft = CandidateContext("", "", tuple(revised(t, "draft") for t in TOOLS), (GlobalRule("r2", "two"),))
    out = merge_with_best(draft, best, revised={"tool_0"})
    assert out.tools[0].description == "draft"
    assert all(t.description == "best" for t in out.tools[1:])
    assert [r.rule_name for r in out.global_rules] == ["r1", "r2"]


def test_merge_llm_mode():
    backend = MockCompletionBackend([{"match": "instruction merger", "response": "Merged rules.\n"}])
    best = CandidateContext("A", "", TOOLS)
    out = merge_with_best(CandidateContext("B", "", TOOLS), best, "llm", backend)
    assert out.global_instructions == "Merged rules."
    with pytest.raises(MergeBackendFailure):
        merge_with_best(best, best, "llm", MockCompletionBackend([]))
    with pytest.raises(ValueError):
        merge_with_best(best, best, "llm", None)


# -- propose with retry ------------------------------------------------------


class Counting:
    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []
        self.identity = "counting"

    def complete(self, prompt):
        self.prompts.append(prompt)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


FB = FeedbackBundle((item("e"),))
GOOD = 'Answer: {"global_instructions": "ok"}'


def test_retry_then_success():
    backend = Counting(["no marker here", GOOD])
    edits, calls = propose_edits(CTX, FB, backend)
    assert edits.global_instructions == "ok" and calls == 2
    assert backend.prompts[1].endswith(FORMAT_REMINDER)


def test_retry_then_skip():
    backend = Counting(["junk", "Answer: [1]", "Answer: {bad"])
    edits, calls = propose_edits(CTX, FB, backend, retry_limit=2)
    assert edits is None and calls == 3


def test_schema_failure_is_retried():
    bad = "Answer: " + json.dumps({"tool_revisions": [{"name": "ghost", "description": "x"}]})
    edits, calls = propose_edits(CTX, FB, Counting([bad, GOOD]))
    assert edits is not None and calls == 2


def test_backend_error_skips():
    edits, calls = propose_edits(CTX, FB, Counting([RuntimeError("down")]))
    assert edits is None and calls == 1
