import random

import pytest
from hypothesis import given

from conftest import make_tool, random_trace, trace_st
from toolctx.dataset import ToolCall
from toolctx.diagnose import FailureSignal, diagnose, format_problem
from toolctx.metrics import eval_example, match_calls, value_equal
from toolctx.schema import ParameterSpec, ToolSchema

TOOLS = (
    make_tool("A", (("x", "string"), ("y", "string"), ("z", "string"))),
    make_tool("B", (("x", "string"), ("y", "string"), ("z", "string"))),
    make_tool("C", (("x", "string"), ("y", "string"), ("z", "string"))),
)


def kinds(signals):
    return [s.kind for s in signals]


def test_perfect_trace_has_no_signals():
    call = ToolCall("A", {"x": "1"})
    assert diagnose([call], [call], TOOLS) == []


def test_single_wrong_tool():
    sigs = diagnose([ToolCall("B")], [ToolCall("A")], TOOLS, "e1")
    assert kinds(sigs) == ["wrong_tool"]
    assert (sigs[0].expected_tool, sigs[0].predicted_tool, sigs[0].example_id) == ("A", "B", "e1")


def test_missed_and_extra_tools():
    assert kinds(diagnose([], [ToolCall("A")], TOOLS)) == ["missed_tool"]
    assert kinds(diagnose([ToolCall("A")], [], TOOLS)) == ["extra_tool"]


def test_wrong_tool_pairs_by_description_similarity():
    tools = (
        ToolSchema("get_rates", "Get currency exchange rates for a date.", (), ()),
        ToolSchema("get_weather", "Get the weather forecast for a city.", (), ()),
        ToolSchema("fx_quote", "Quote currency exchange rates now.", (), ()),
        ToolSchema("forecast", "Weather forecast for a city by day.", (), ()),
    )
    sigs = diagnose([ToolCall("forecast"), ToolCall("fx_quote")], [ToolCall("get_rates"), ToolCall("get_weather")], tools)
    pairs = sorted((s.expected_tool, s.predicted_tool) for s in sigs)
    assert pairs == [("get_rates", "fx_quote"), ("get_weather", "forecast")]


def test_date_format_violation():
    tool = ToolSchema("book", "Book.", (ParameterSpec("date", "Day.", "string"),), ())
    sigs = diagnose([ToolCall("book", {"date": "Jan 5 2024"})], [ToolCall("book", {"date": "2024-01-05"})], [tool])
    assert kinds(sigs) == ["wrong_value", "format_violation"]
    assert all(s.slot == "date" for s in sigs)


def test_missing_slot_and_type_problem():
    tool = ToolSchema("t", "T.", (ParameterSpec("n", "N.", "integer"), ParameterSpec("ok", "Flag.", "boolean")), ())
    sigs = diagnose([ToolCall("t", {"ok": "yes"})], [ToolCall("t", {"n": 3, "ok": True})], [tool])
    assert kinds(sigs) == ["missing_slot", "wrong_value", "format_violation"]
    assert format_problem(tool, "n", "3") == "expected integer, got str"
    assert format_problem(tool, "ok", True) is None


def test_matching_value_is_never_flagged():
    tool = ToolSchema("t", "T.", (ParameterSpec("n", "N.", "integer"),), ())
    assert diagnose([ToolCall("t", {"n": "3"})], [ToolCall("t", {"n": 3})], [tool]) == []


def test_signal_invariants():
    with pytest.raises(ValueError):
        FailureSignal("e", "wrong_tool", expected_tool="A")
    with pytest.raises(ValueError):
        FailureSignal("e", "missing_slot")
    with pytest.raises(ValueError):
        FailureSignal("e", "mystery")


def _bound(pred, gold):
    """|gold slots| + |gold calls| + |predicted calls| + |mismatched slots|."""
    mismatched = 0
    for p, g in match_calls(pred, gold).pairs:
        pa, ga = pred[p].arguments, gold[g].arguments
        mismatched += sum(1 for k in ga if k in pa and not value_equal(pa[k], ga[k]))
        mismatched += sum(1 for k in pa if k not in ga)
    return sum(len(c.arguments) for c in gold) + len(gold) + len(pred) + mismatched


@given(trace_st, trace_st)
def test_empty_iff_full_success(pred, gold):
    sigs = diagnose(pred, gold, TOOLS)
    m = eval_example(pred, gold)
    assert (sigs == []) == (m.osr == 1)
    assert len(sigs) <= _bound(pred, gold)


def test_empty_iff_full_success_randomized():
    rng = random.Random(2)
    for _ in range(500):
        pred, gold = random_trace(rng), random_trace(rng)
        assert (diagnose(pred, gold, TOOLS) == []) == (eval_example(pred, gold).osr == 1)
