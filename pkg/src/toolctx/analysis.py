"""Disambiguation and reporting analyses over inventories and run results."""

from __future__ import annotations

import csv
import itertools
import math
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .schema import ToolSchema
from .slots import text_tokens


class GroupTooSmall(ValueError):
    pass


class InventoryMismatch(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class EmbedBackendFailure(RuntimeError):
    pass


def token_jaccard(a: str, b: str) -> float:
    ta, tb = set(text_tokens(a)), set(text_tokens(b))
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


# -- confusable groups -------------------------------------------------------


@dataclass(frozen=True)
class ConfusableGroup:
    prefix: str
    tool_names: tuple[str, ...]

    @property
    def label(self) -> str:
        return f"{self.prefix}_*"


def confusable_groups(tools: Sequence[ToolSchema], min_prefix_tokens: int = 2) -> list[ConfusableGroup]:
    """Group tools that share a leading run of underscore-separated name tokens.

    Prefixes are tried longest first (ties in lexicographic order); a prefix
    forms a group when at least two still-ungrouped tools carry it, so each
    tool lands in the group of the longest prefix it shares.
    """
    toks = {t.name: tuple(t.name.split("_")) for t in tools}
    prefixes: dict[tuple[str, ...], list[str]] = {}
    for name, tk in toks.items():
        for n in range(min_prefix_tokens, len(tk) + 1):
            prefixes.setdefault(tk[:n], []).append(name)
    order = sorted(prefixes, key=lambda p: (-len(p), p))
    taken: set[str] = set()
    groups = []
    for prefix in order:
        members = [n for n in prefixes[prefix] if n not in taken]
        if len(members) >= 2:
            taken.update(members)
            groups.append(ConfusableGroup("_".join(prefix), tuple(sorted(members))))
    groups.sort(key=lambda g: g.prefix)
    return groups


# -- embeddings --------------------------------------------------------------


def tfidf_vectors(docs: Sequence[str]) -> list[dict[str, float]]:
    """Raw-count TF times smoothed IDF, ``ln((1 + N) / (1 + df)) + 1``."""
    counts = [Counter(text_tokens(d)) for d in docs]
    n = len(docs)
    df: Counter = Counter()
    for c in counts:
        df.update(c.keys())
    idf = {t: math.log((1 + n) / (1 + k)) + 1.0 for t, k in df.items()}
    return [{t: tf * idf[t] for t, tf in c.items()} for c in counts]


def _cos_sparse(u: Mapping[str, float], v: Mapping[str, float]) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(x * v.get(t, 0.0) for t, x in u.items()) / (nu * nv)


def _cos_dense(u: Sequence[float], v: Sequence[float]) -> float:
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(x * y for x, y in zip(u, v)) / (nu * nv)


class HttpEmbedder:
    """Embedding endpoint speaking the common ``POST {base_url}/embeddings`` shape."""

    def __init__(self, base_url: str, model: str, api_key_env: str | None = None, timeout_s: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self._cache: dict[str, list[float]] = {}

    @classmethod
    def from_config(cls, cfg: dict) -> "HttpEmbedder":
        return cls(cfg["base_url"], cfg["model"], cfg.get("api_key_env"), float(cfg.get("timeout_s", 30)))

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        import requests

        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if missing:
            headers = {"Content-Type": "application/json"}
            if self.api_key_env and os.environ.get(self.api_key_env):
                headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
            try:
                resp = requests.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": missing},
                    headers=headers,
                    timeout=self.timeout_s,
                )
                resp.raise_for_status()
                data = resp.json()["data"]
                vecs = [item["embedding"] for item in sorted(data, key=lambda d: d.get("index", 0))]
            except Exception as e:  # network, HTTP status, or payload shape
                raise EmbedBackendFailure(f"embedding request failed: {e}") from e
            if len(vecs) != len(missing):
                raise EmbedBackendFailure("embedding count does not match inputs")
            self._cache.update(zip(missing, vecs))
        return [self._cache[t] for t in texts]


def embed_and_cosine(
    a: str,
    b: str,
    embedder: str | HttpEmbedder = "tfidf_local",
    corpus: Sequence[str] | None = None,
) -> float:
    """Cosine similarity of two texts.

    ``tfidf_local`` fits IDF on ``corpus`` (default: just the two texts).
    Passing an :class:`HttpEmbedder` uses its sentence embeddings instead.
    """
    if not a.strip() or not b.strip():
        raise ValueError("texts must be nonempty")
    if isinstance(embedder, HttpEmbedder):
        u, v = embedder.embed([a, b])
        return _cos_dense(u, v)
    if embedder != "tfidf_local":
        raise ValueError(f"unknown embedder {embedder!r}")
    docs = list(corpus) if corpus is not None else []
    docs += [t for t in (a, b) if t not in docs]
    vecs = dict(zip(docs, tfidf_vectors(docs)))
    return _cos_sparse(vecs[a], vecs[b])


def intra_group_similarity(
    group: ConfusableGroup,
    descriptions: Mapping[str, str],
    embedder: str | HttpEmbedder = "tfidf_local",
) -> float:
    """Mean cosine over unordered description pairs within the group."""
    if len(group.tool_names) < 2:
        raise GroupTooSmall(f"group {group.prefix} has fewer than two tools")
    texts = [descriptions[n] for n in group.tool_names]
    sims = [embed_and_cosine(x, y, embedder, corpus=texts) for x, y in itertools.combinations(texts, 2)]
    return sum(sims) / len(sims)


@dataclass(frozen=True)
class SimilarityReport:
    group: ConfusableGroup
    before: float
    after: float

    @property
    def delta(self) -> float:
        return self.after - self.before


def disambiguation_report(
    before: Sequence[ToolSchema],
    after: Sequence[ToolSchema],
    min_prefix_tokens: int = 2,
    embedder: str | HttpEmbedder = "tfidf_local",
) -> list[SimilarityReport]:
    """Per-group before/after similarity, most improved (lowest delta) first."""
    _check_same_names(before, after)
    b_desc = {t.name: t.description for t in before}
    a_desc = {t.name: t.description for t in after}
    reports = [
        SimilarityReport(
            g, intra_group_similarity(g, b_desc, embedder), intra_group_similarity(g, a_desc, embedder)
        )
        for g in confusable_groups(before, min_prefix_tokens)
    ]
    reports.sort(key=lambda r: (r.delta, r.group.prefix))
    return reports


# -- description lengths -----------------------------------------------------


@dataclass(frozen=True)
class DeltaReport:
    total: int
    modified: int
    mean_len_before: float
    mean_len_after: float
    per_tool: tuple[tuple[str, int, int], ...]

    @property
    def modified_fraction(self) -> float:
        return self.modified / self.total if self.total else 0.0

    @property
    def relative_increase(self) -> float:
        if self.mean_len_before == 0:
            return 0.0
        return (self.mean_len_after - self.mean_len_before) / self.mean_len_before

    def changes(self) -> list[tuple[str, int]]:
        """Length change of each modified tool."""
        return [(n, a - b) for n, b, a in self.per_tool if a != b]


def _check_same_names(before, after) -> None:
    bn = [t.name for t in before]
    an = [t.name for t in after]
    if sorted(bn) != sorted(an):
        raise InventoryMismatch(
            f"tool name sets differ: only before={sorted(set(bn) - set(an))}, only after={sorted(set(an) - set(bn))}"
        )


def description_delta(before: Sequence[ToolSchema], after: Sequence[ToolSchema]) -> DeltaReport:
    _check_same_names(before, after)
    a_by = {t.name: t for t in after}
    rows = tuple((t.name, len(t.description), len(a_by[t.name].description)) for t in before)
    modified = sum(1 for t in before if t.description != a_by[t.name].description)
    n = len(rows)
    return DeltaReport(
        total=n,
        modified=modified,
        mean_len_before=sum(r[1] for r in rows) / n if n else 0.0,
        mean_len_after=sum(r[2] for r in rows) / n if n else 0.0,
        per_tool=rows,
    )


# -- run results -------------------------------------------------------------


def per_example_improvement(base, opt, criterion: str = "osr") -> tuple[int, int, float]:
    """Count examples where ``opt`` strictly beats ``base`` on ``sfa`` or ``osr``.

    An undefined SFA (wrong tool) counts as 0.
    """
    if criterion not in ("sfa", "osr"):
        raise ValueError("criterion must be 'sfa' or 'osr'")
    if len(base) != len(opt):
        raise AlignmentError(f"length mismatch: {len(base)} vs {len(opt)}")
    improved = 0
    for b, o in zip(base, opt):
        if b.example_id is not None and o.example_id is not None and b.example_id != o.example_id:
            raise AlignmentError(f"example ids differ: {b.example_id} vs {o.example_id}")
        if criterion == "osr":
            better = o.osr > b.osr
        else:
            better = (o.sfa or 0.0) > (b.sfa or 0.0)
        improved += int(better)
    total = len(base)
    return improved, total, (improved / total if total else 0.0)


CONVERGENCE_COLUMNS = ("iter", "minibatch_before", "minibatch_after", "accepted", "val_score", "best_val_score")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def export_convergence(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for r in history:
            w.writerow(
                [
                    _fmt(r.iter),
                    _fmt(r.minibatch_score_before),
                    _fmt(r.minibatch_score_after),
                    _fmt(r.accepted),
                    _fmt(r.val_score),
                    _fmt(r.best_val_score),
                ]
            )
    return path


def write_disambiguation_csv(reports: Sequence[SimilarityReport], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("group", "size", "before", "after", "delta"))
        for r in reports:
            w.writerow((r.group.label, len(r.group.tool_names), f"{r.before:.6f}", f"{r.after:.6f}", f"{r.delta:.6f}"))


def write_lengths_csv(report: DeltaReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tool", "before_len", "after_len"))
        for name, b, a in report.per_tool:
            w.writerow((name, b, a))


def write_improvement_csv(base, opt, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id", "base_sfa", "opt_sfa", "base_osr", "opt_osr", "sfa_improved", "osr_improved"))
        for b, o in zip(base, opt):
            w.writerow(
                (
                    b.example_id or "",
                    _fmt(b.sfa),
                    _fmt(o.sfa),
                    b.osr,
                    o.osr,
                    int((o.sfa or 0.0) > (b.sfa or 0.0)),
                    int(o.osr > b.osr),
                )
            )
