"""Candidate pool with Pareto retention and win-count biased sampling."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Sequence

from .schema import CandidateContext, context_from_dict, context_to_dict


class EmptyPool(ValueError):
    pass


@dataclass(frozen=True)
class PoolEntry:
    candidate: CandidateContext
    per_instance_scores: dict[str, float] = field(default_factory=dict)
    val_score: float | None = None
    created_iter: int = 0
    id: str = "c0"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "created_iter": self.created_iter,
            "val_score": self.val_score,
            "per_instance_scores": dict(sorted(self.per_instance_scores.items())),
            "candidate": context_to_dict(self.candidate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoolEntry":
        return cls(
            candidate=context_from_dict(d["candidate"]),
            per_instance_scores={k: float(v) for k, v in d["per_instance_scores"].items()},
            val_score=d.get("val_score"),
            created_iter=int(d["created_iter"]),
            id=str(d["id"]),
        )


@dataclass(frozen=True)
class Pool:
    entries: tuple[PoolEntry, ...] = ()
    capacity: int = 8
    best_id: str | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("pool capacity must be positive")
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def best(self) -> PoolEntry | None:
        for e in self.entries:
            if e.id == self.best_id:
                return e
        return None

    def get(self, entry_id: str) -> PoolEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "best_id": self.best_id, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pool":
        return cls(tuple(PoolEntry.from_dict(e) for e in d["entries"]), int(d["capacity"]), d.get("best_id"))


def _instances(entries: Sequence[PoolEntry]) -> list[str]:
    keys: set[str] = set()
    for e in entries:
        keys.update(e.per_instance_scores)
    return sorted(keys)


def dominates(a: PoolEntry, b: PoolEntry, instances: Sequence[str]) -> bool:
    """``a`` is at least as good everywhere and strictly better somewhere."""
    strictly = False
    for k in instances:
        sa = a.per_instance_scores.get(k, 0.0)
        sb = b.per_instance_scores.get(k, 0.0)
        if sa < sb:
            return False
        if sa > sb:
            strictly = True
    return strictly


def non_dominated(entries: Sequence[PoolEntry]) -> list[PoolEntry]:
    inst = _instances(entries)
    return [e for e in entries if not any(dominates(o, e, inst) for o in entries if o is not e)]


def _rebest(entries: Sequence[PoolEntry], current: str | None) -> str | None:
    ids = {e.id for e in entries}
    if current in ids:
        return current
    scored = [e for e in entries if e.val_score is not None]
    if not scored:
        return None
    # highest val score; earliest entry wins ties
    return max(scored, key=lambda e: (e.val_score, -e.created_iter)).id


def update_front(pool: Pool) -> Pool:
    """Drop every strictly dominated entry."""
    kept = tuple(non_dominated(pool.entries))
    return replace(pool, entries=kept, best_id=_rebest(kept, pool.best_id))


def win_counts(entries: Sequence[PoolEntry]) -> list[int]:
    """Instances on which each entry attains the instance-wise maximum (ties all win)."""
    inst = _instances(entries)
    wins = [0] * len(entries)
    for k in inst:
        scores = [e.per_instance_scores.get(k, 0.0) for e in entries]
        top = max(scores)
        for i, s in enumerate(scores):
            if s == top:
                wins[i] += 1
    return wins


def selection_weights(pool: Pool) -> list[float]:
    """Sampling weight per entry; dominated entries always get zero."""
    entries = pool.entries
    if not entries:
        return []
    front = {id(e) for e in non_dominated(entries)}
    wins = win_counts(entries)
    weights = [float(w) if id(e) in front else 0.0 for e, w in zip(entries, wins)]
    if sum(weights) == 0:
        weights = [1.0 if id(e) in front else 0.0 for e in entries]
    return weights


def pareto_select(pool: Pool, rng: random.Random) -> PoolEntry:
    if not pool.entries:
        raise EmptyPool("cannot select from an empty pool")
    weights = selection_weights(pool)
    return rng.choices(pool.entries, weights=weights, k=1)[0]


def add_to_pool(pool: Pool, entry: PoolEntry) -> Pool:
    """Insert ``entry``; over capacity, evict the weakest entry that is not the best.

    The best pointer moves only on a strictly higher validation score.
    """
    if any(e.id == entry.id for e in pool.entries):
        raise ValueError(f"duplicate pool entry id {entry.id}")
    entries = list(pool.entries) + [entry]
    best_id = pool.best_id
    best = pool.best
    if entry.val_score is not None and (best is None or best.val_score is None or entry.val_score > best.val_score):
        best_id = entry.id
    while len(entries) > pool.capacity:
        victims = [e for e in entries if e.id != best_id]
        victim = min(
            victims,
            key=lambda e: (float("-inf") if e.val_score is None else e.val_score, e.created_iter),
        )
        entries.remove(victim)
    return replace(pool, entries=tuple(entries), best_id=best_id)
