import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_tool
from oracles import brute_front, brute_wins
from toolctx.pool import (
    EmptyPool,
    Pool,
    PoolEntry,
    add_to_pool,
    non_dominated,
    pareto_select,
    selection_weights,
    update_front,
    win_counts,
)
from toolctx.schema import CandidateContext

CTX = CandidateContext(tools=(make_tool("t"),))


def entry(eid, scores, val=None, it=0):
    return PoolEntry(CTX, {f"i{k}": s for k, s in enumerate(scores)}, val, it, eid)


def ids(pool):
    return [e.id for e in pool.entries]


def test_incomparable_entries_kept():
    pool = update_front(Pool((entry("e1", [1, 0]), entry("e2", [0, 1]))))
    assert ids(pool) == ["e1", "e2"]


def test_dominating_entry_prunes():
    pool = update_front(Pool((entry("e1", [1, 0]), entry("e2", [0, 1]), entry("e3", [1, 1]))))
    assert ids(pool) == ["e3"]


def test_equal_entries_both_kept():
    pool = update_front(Pool((entry("a", [1, 1]), entry("b", [1, 1]))))
    assert ids(pool) == ["a", "b"]


score_rows = st.integers(1, 6).flatmap(
    lambda k: st.lists(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=k, max_size=k), min_size=1, max_size=8)
)


@given(score_rows)
def test_front_matches_brute_force(rows):
    pool = Pool(tuple(entry(f"e{i}", r) for i, r in enumerate(rows)), capacity=8)
    assert ids(update_front(pool)) == [f"e{i}" for i in brute_front(rows)]
    assert win_counts(pool.entries) == brute_wins(rows)


@given(score_rows)
def test_front_has_no_domination_and_keeps_winners(rows):
    pool = update_front(Pool(tuple(entry(f"e{i}", r) for i, r in enumerate(rows)), capacity=8))
    kept = [[e.per_instance_scores[f"i{k}"] for k in range(len(rows[0]))] for e in pool.entries]
    assert brute_front(kept) == list(range(len(kept)))
    for k in range(len(rows[0])):
        top = max(r[k] for r in rows)
        assert any(r[k] == top for r in kept)


@given(score_rows)
def test_dominated_weight_is_zero(rows):
    pool = Pool(tuple(entry(f"e{i}", r) for i, r in enumerate(rows)), capacity=8)
    front = set(brute_front(rows))
    for i, w in enumerate(selection_weights(pool)):
        if i not in front:
            assert w == 0


def test_single_entry_always_selected():
    pool = Pool((entry("only", [0.3]),))
    rng = random.Random(0)
    assert {pareto_select(pool, rng).id for _ in range(50)} == {"only"}


def test_empty_pool():
    with pytest.raises(EmptyPool):
        pareto_select(Pool(()), random.Random(0))


def test_proportional_sampling():
    pool = Pool((entry("a", [1, 1, 0]), entry("b", [0, 0, 1])))
    assert win_counts(pool.entries) == [2, 1]
    rng = random.Random(123)
    n = 100_000
    freq = Counter(pareto_select(pool, rng).id for _ in range(n))
    assert abs(freq["a"] / n - 2 / 3) <= 0.02
    assert abs(freq["b"] / n - 1 / 3) <= 0.02


def test_ties_give_uniform_selection():
    pool = Pool((entry("a", [1, 1]), entry("b", [1, 1]), entry("c", [1, 1])))
    rng = random.Random(5)
    freq = Counter(pareto_select(pool, rng).id for _ in range(30_000))
    for k in "abc":
        assert abs(freq[k] / 30_000 - 1 / 3) <= 0.02


def test_selection_is_seeded():
    pool = Pool((entry("a", [1, 0]), entry("b", [0, 1])))
    draw = lambda: [pareto_select(pool, random.Random(9)).id for _ in range(5)]  # noqa: E731
    assert draw() == draw()


def test_eviction_lowest_non_best():
    pool = Pool((entry("best", [1], 0.5, 1), entry("low", [0], 0.3, 2)), capacity=2, best_id="best")
    out = add_to_pool(pool, entry("mid", [0.5], 0.4, 3))
    assert ids(out) == ["best", "mid"] and out.best_id == "best"


def test_equal_val_joins_without_moving_best():
    pool = Pool((entry("best", [1], 0.5, 1),), capacity=3, best_id="best")
    out = add_to_pool(pool, entry("tie", [1], 0.5, 2))
    assert ids(out) == ["best", "tie"] and out.best_id == "best"


def test_eviction_tie_breaks_on_age():
    pool = Pool((entry("b", [1], 0.9, 1), entry("old", [0], 0.2, 2), entry("new", [0], 0.2, 3)), capacity=3, best_id="b")
    out = add_to_pool(pool, entry("x", [0], 0.5, 4))
    assert "old" not in ids(out) and "new" in ids(out)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 4))
def test_best_survives_and_never_decreases(vals, cap):
    pool = Pool((), capacity=cap)
    best_seen = -1.0
    for i, v in enumerate(vals):
        pool = add_to_pool(pool, entry(f"e{i}", [v], v, i))
        assert len(pool.entries) <= cap
        assert pool.best is not None
        assert pool.best.val_score >= best_seen
        best_seen = pool.best.val_score
        assert pool.best.val_score == max(vals[: i + 1])


def test_serialization_round_trip():
    pool = Pool((entry("a", [1, 0], 0.5, 1), entry("b", [0, 1], None, 2)), capacity=4, best_id="a")
    assert Pool.from_dict(pool.to_dict()) == pool


def test_non_dominated_helper():
    es = [entry("a", [1, 0]), entry("b", [0.5, 0]), entry("c", [0, 1])]
    assert [e.id for e in non_dominated(es)] == ["a", "c"]
