"""Call-level correctness: tool selection, slot filling, overall success, loss."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataset import ToolCall


class EmptyResults(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_tsa: float = 1.0
    lambda_sfa: float = 1.0
    lambda_osr: float = 1.0

    def __post_init__(self):
        ws = (self.lambda_tsa, self.lambda_sfa, self.lambda_osr)
        if any(w < 0 or math.isnan(w) for w in ws):
            raise ValueError("loss weights must be nonnegative")
        if sum(ws) == 0:
            raise ValueError("loss weights must not all be zero")

    @property
    def total(self) -> float:
        return self.lambda_tsa + self.lambda_sfa + self.lambda_osr


@dataclass(frozen=True)
class RolloutMetrics:
    tsa: int
    sfa: float | None
    osr: int
    loss: float
    example_id: str | None = None

    def to_dict(self) -> dict:
        return {"id": self.example_id, "tsa": self.tsa, "sfa": self.sfa, "osr": self.osr, "loss": self.loss}

    @classmethod
    def from_dict(cls, d: dict) -> "RolloutMetrics":
        sfa = d.get("sfa")
        return cls(int(d["tsa"]), None if sfa is None else float(sfa), int(d["osr"]), float(d["loss"]), d.get("id"))


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]
    unmatched_predicted: tuple[int, ...]
    unmatched_gold: tuple[int, ...]


# -- value comparison --------------------------------------------------------


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _as_float(x: Any) -> float | None:
    if _is_number(x):
        return float(x)
    if isinstance(x, str):
        try:
            return float(x.strip())
        except ValueError:
            return None
    return None


def _as_bool(x: Any) -> bool | None:
    if isinstance(x, bool):
        return x
    if isinstance(x, str):
        t = x.strip().lower()
        if t in ("true", "false"):
            return t == "true"
    return None


def value_equal(a: Any, b: Any) -> bool:
    """Canonicalised equality used for slot values.

    Strings compare after trimming (case kept); a number matches a numeric
    string; booleans match ``"true"``/``"false"`` in any case; lists compare
    element-wise in order and objects key-wise.
    """
    if isinstance(a, bool) or isinstance(b, bool):
        x, y = _as_bool(a), _as_bool(b)
        return x is not None and x == y
    if _is_number(a) or _is_number(b):
        x, y = _as_float(a), _as_float(b)
        return x is not None and y is not None and x == y
    if isinstance(a, str) and isinstance(b, str):
        return a.strip() == b.strip()
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(value_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(value_equal(a[k], b[k]) for k in a)
    return a is None and b is None


def slot_agreements(pred: ToolCall, gold: ToolCall) -> int:
    """Number of gold slots reproduced by ``pred`` with an equal value."""
    return sum(1 for k, v in gold.arguments.items() if k in pred.arguments and value_equal(pred.arguments[k], v))


def arguments_exact(pred: ToolCall, gold: ToolCall) -> bool:
    return pred.arguments.keys() == gold.arguments.keys() and slot_agreements(pred, gold) == len(gold.arguments)


# -- matching ----------------------------------------------------------------


def _best_total(weights: np.ndarray) -> float:
    if weights.shape[0] == 0 or weights.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum())


def _match_group(agree: np.ndarray) -> list[tuple[int, int]]:
    """Lexicographically first maximum-agreement matching of full cardinality.

    Rows are visited in order; each takes the lowest column that still allows
    an optimal completion, or stays unmatched if only that is optimal.
    """
    rows = list(range(agree.shape[0]))
    cols = list(range(agree.shape[1]))
    target = _best_total(agree)
    out = []
    while rows and cols:
        i = rows[0]
        rest_rows = rows[1:]
        chosen = None
        for j in cols:
            rest_cols = [c for c in cols if c != j]
            value = agree[i, j] + _best_total(agree[np.ix_(rest_rows, rest_cols)])
            if value == target:
                chosen = j
                break
        rows = rest_rows
        if chosen is None:
            # row i is left unmatched; only possible when rows outnumber columns
            continue
        out.append((i, chosen))
        target -= agree[i, chosen]
        cols = [c for c in cols if c != chosen]
    return out


def match_calls(predicted: Sequence[ToolCall], gold: Sequence[ToolCall]) -> Matching:
    """Pair predicted with gold calls of the same tool.

    The matching has maximum cardinality, then maximum slot agreement; ties go
    to the lexicographically smallest assignment by predicted index.
    """
    pairs: list[tuple[int, int]] = []
    names = sorted({c.tool for c in predicted} & {c.tool for c in gold})
    for name in names:
        p_idx = [i for i, c in enumerate(predicted) if c.tool == name]
        g_idx = [j for j, c in enumerate(gold) if c.tool == name]
        agree = np.array(
            [[slot_agreements(predicted[i], gold[j]) for j in g_idx] for i in p_idx], dtype=float
        )
        for a, b in _match_group(agree):
            pairs.append((p_idx[a], g_idx[b]))
    pairs.sort()
    mp = {p for p, _ in pairs}
    mg = {g for _, g in pairs}
    return Matching(
        pairs=tuple(pairs),
        unmatched_predicted=tuple(i for i in range(len(predicted)) if i not in mp),
        unmatched_gold=tuple(j for j in range(len(gold)) if j not in mg),
    )


# -- per-example and aggregate ----------------------------------------------


def eval_example(
    predicted: Sequence[ToolCall],
    gold: Sequence[ToolCall],
    weights: LossWeights = LossWeights(),
    example_id: str | None = None,
) -> RolloutMetrics:
    tsa = int(Counter(c.tool for c in predicted) == Counter(c.tool for c in gold))
    sfa: float | None = None
    osr = 0
    if tsa:
        matching = match_calls(predicted, gold)
        total = sum(len(g.arguments) for g in gold)
        hit = sum(slot_agreements(predicted[p], gold[g]) for p, g in matching.pairs)
        sfa = 1.0 if total == 0 else hit / total
        osr = int(all(arguments_exact(predicted[p], gold[g]) for p, g in matching.pairs))
    loss = (
        weights.lambda_tsa * (1 - tsa)
        + weights.lambda_sfa * tsa * (1 - (sfa if sfa is not None else 0.0))
        + weights.lambda_osr * (1 - osr)
    )
    return RolloutMetrics(tsa, sfa, osr, loss, example_id)


def example_score(m: RolloutMetrics, weights: LossWeights = LossWeights()) -> float:
    sfa = m.sfa if (m.tsa and m.sfa is not None) else 0.0
    raw = weights.lambda_tsa * m.tsa + weights.lambda_sfa * m.tsa * sfa + weights.lambda_osr * m.osr
    return raw / weights.total


def score(results: Sequence[RolloutMetrics], weights: LossWeights = LossWeights()) -> float:
    """Mean weighted correctness in [0, 1].

    Per example this is ``1 - loss / sum(lambda)`` when the tools are right; a
    wrong-tool example scores 0 even though its loss omits the SFA term.
    """
    if not results:
        raise EmptyResults("cannot score an empty result list")
    return sum(example_score(m, weights) for m in results) / len(results)


@dataclass(frozen=True)
class Aggregate:
    tsa: float | None
    sfa: float | None
    osr: float | None
    n: int

    def to_dict(self) -> dict:
        return {"tsa_pct": self.tsa, "sfa_pct": self.sfa, "osr_pct": self.osr, "n": self.n}


def aggregate(results: Sequence[RolloutMetrics]) -> Aggregate:
    """Percentages as reported in result tables; SFA is over TSA-correct examples."""
    n = len(results)
    if n == 0:
        return Aggregate(None, None, None, 0)
    tsa = 100.0 * sum(m.tsa for m in results) / n
    sfas = [m.sfa for m in results if m.tsa and m.sfa is not None]
    sfa = 100.0 * sum(sfas) / len(sfas) if sfas else None
    osr = 100.0 * sum(m.osr for m in results) / n
    return Aggregate(tsa, sfa, osr, n)


METRICS_COLUMNS = ("dataset", "candidate", "tsa_pct", "sfa_pct", "osr_pct")


def write_metrics_csv(rows: Sequence[tuple[str, str, Aggregate]], path) -> None:
    """One line per (dataset, candidate) with the three percentages; undefined SFA is blank."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for dataset, candidate, agg in rows:
            w.writerow((dataset, candidate, *("" if v is None else repr(v) for v in (agg.tsa, agg.sfa, agg.osr))))
