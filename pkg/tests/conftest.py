import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from toolctx.dataset import SlotFamilySpec, SynthSpec, ToolCall, synthesize_inventory
from toolctx.schema import CandidateContext, ParameterSpec, ToolSchema

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TOOL_NAMES = ("A", "B", "C")
ARG_KEYS = ("x", "y", "z")
VALUES = (1, 2, "1", " 1 ", "2", "a", "A", " a", True, False, "true", "TRUE", "false", [1, 2], [2, 1], None, 1.0)


def random_call(rng: random.Random) -> ToolCall:
    keys = rng.sample(ARG_KEYS, rng.randint(0, len(ARG_KEYS)))
    return ToolCall(rng.choice(TOOL_NAMES), {k: rng.choice(VALUES) for k in keys})


def random_trace(rng: random.Random, max_calls: int = 5) -> list[ToolCall]:
    return [random_call(rng) for _ in range(rng.randint(0, max_calls))]


values_st = st.sampled_from(VALUES)
call_st = st.builds(
    ToolCall,
    st.sampled_from(TOOL_NAMES),
    st.dictionaries(st.sampled_from(ARG_KEYS), values_st, max_size=3),
)
trace_st = st.lists(call_st, max_size=4)

ident = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)
param_type_st = st.sampled_from(("string", "integer", "number", "boolean", "array", "object"))


@st.composite
def tool_st(draw, name=None):
    pnames = draw(st.lists(ident, unique=True, max_size=5))
    params = tuple(
        ParameterSpec(p, draw(st.text(max_size=30)), draw(param_type_st)) for p in pnames
    )
    required = tuple(p for p in pnames if draw(st.booleans()))
    return ToolSchema(name or draw(ident), draw(st.text(max_size=40)), params, required)


def make_tool(name, params=(("id", "string"),), required=(), description="A tool."):
    return ToolSchema(
        name,
        description,
        tuple(ParameterSpec(p, f"The {p}.", t) for p, t in params),
        tuple(required),
    )


def etid_spec(seed=0, examples_per_tool=3):
    """124 tools with the identifier family in 77 of them (77/124 = 0.62...)."""
    return SynthSpec(
        n_tools=124,
        slot_families=(
            SlotFamilySpec("identifier", (), 77 / 124),
            SlotFamilySpec("datetime", (), 0.4),
            SlotFamilySpec("bounds", (), 0.3),
            SlotFamilySpec("boolean", ("includeArchived",), 0.25),
        ),
        examples_per_tool=examples_per_tool,
        ambiguity_pairs=5,
        seed=seed,
    )


@pytest.fixture(scope="session")
def etid_ds():
    return synthesize_inventory(etid_spec())


@pytest.fixture
def small_ctx():
    return CandidateContext(
        global_instructions="Be precise.",
        tools=(make_tool("search", (("q", "string"),), ("q",)), make_tool("get_item", (("id", "string"),), ("id",))),
    )


# -- acceptance report -------------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.skipped:
        _ACCEPTANCE[name] = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    elif report.failed:
        _ACCEPTANCE[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for name, label in CRITERIA.items():
        if name in _ACCEPTANCE:
            status = _ACCEPTANCE[name]
            if status == "SKIP":
                status = "SKIP (unavailable)"
            terminalreporter.write_line(f"criterion {label}: {status}")
