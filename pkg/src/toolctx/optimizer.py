"""The reflective co-optimization loop over instructions and tool schemas."""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .backends import AgentBackendFailure
from .dataset import Dataset, Example
from .diagnose import FailureSignal, diagnose
from .globalize import detect_slot_families, globalize, llm_globalize
from .metrics import Aggregate, LossWeights, RolloutMetrics, aggregate, eval_example, example_score, score
from .pool import Pool, PoolEntry, add_to_pool, pareto_select, update_front
from .reflection import (
    FeedbackBundle,
    FeedbackItem,
    MergeBackendFailure,
    apply_edits,
    merge_with_best,
    propose_edits,
)
from .schema import (
    CandidateContext,
    RevisionRejected,
    context_from_dict,
    context_to_dict,
    dump_json,
    render_context,
    validate_context,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


MERGE_MODES = ("deterministic", "llm")


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 5
    batch_size: int = 8
    pool_capacity: int = 8
    weights: LossWeights = LossWeights()
    seed: int = 0
    globalize_enabled: bool = True
    merge_mode: str = "deterministic"
    retry_limit: int = 2
    llm_globalize: bool = False
    min_family_tools: int = 5
    min_family_fraction: float = 0.1
    workers: int = 1
    eval_test: bool = True

    def __post_init__(self):
        for name in ("iterations", "batch_size", "pool_capacity", "workers"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if self.merge_mode not in MERGE_MODES:
            raise ConfigError(f"merge_mode must be one of {MERGE_MODES}")
        if self.retry_limit < 0:
            raise ConfigError("retry_limit must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        w = kwargs.pop("weights", None)
        try:
            if isinstance(w, dict):
                kwargs["weights"] = LossWeights(**w)
            elif isinstance(w, (list, tuple)):
                kwargs["weights"] = LossWeights(*w)
            elif w is not None:
                raise ConfigError("weights must be an object or a 3-element list")
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    selected_candidate: str
    minibatch_score_before: float | None
    minibatch_score_after: float | None
    accepted: bool
    added: bool
    val_score: float | None
    best_val_score: float
    rollouts: int
    note: str = ""


HISTORY_COLUMNS = tuple(f.name for f in fields(IterationRecord))


@dataclass
class OptimizationResult:
    best_context: CandidateContext
    history: list[IterationRecord]
    best_val_score: float
    pool: Pool
    rollouts: int
    final_test_metrics: Aggregate | None = None
    test_results: list[RolloutMetrics] = field(default_factory=list)


# -- rollouts ----------------------------------------------------------------


def _one(ctx: CandidateContext, ex: Example, agent, weights: LossWeights):
    text = render_context(ctx, ex.query)
    try:
        pred = list(agent.predict(text, ex.query))
    except Exception as e:  # one failing query must not stop the batch
        if not isinstance(e, AgentBackendFailure):
            log.warning("agent raised %s on %s", type(e).__name__, ex.id)
        m = RolloutMetrics(0, None, 0, weights.lambda_tsa + weights.lambda_osr, ex.id)
        sig = FailureSignal(ex.id, "backend_error", note=str(e)[:200])
        return m, FeedbackItem(ex.id, ex.query, (), tuple(ex.gold_calls), (sig,))
    m = eval_example(pred, ex.gold_calls, weights, ex.id)
    signals = diagnose(pred, ex.gold_calls, ctx.tools, ex.id)
    item = FeedbackItem(ex.id, ex.query, tuple(pred), tuple(ex.gold_calls), tuple(signals)) if signals else None
    return m, item


def rollout(
    candidate: CandidateContext,
    examples: Sequence[Example],
    agent,
    weights: LossWeights = LossWeights(),
    workers: int = 1,
) -> tuple[list[RolloutMetrics], FeedbackBundle]:
    """Run the agent on every example; results keep the example order."""
    report = validate_context(candidate)
    if not report.ok:
        raise RevisionRejected("; ".join(i.message for i in report.errors))
    job = lambda ex: _one(candidate, ex, agent, weights)  # noqa: E731
    if workers > 1 and len(examples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(job, examples))
    else:
        outs = [job(ex) for ex in examples]
    metrics = [m for m, _ in outs]
    items = tuple(i for _, i in outs if i is not None)
    return metrics, FeedbackBundle(items)


# -- run directory -----------------------------------------------------------


def _write_history(path: Path, history: Sequence[IterationRecord]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            row = []
            for name in HISTORY_COLUMNS:
                v = getattr(r, name)
                if v is None:
                    row.append("")
                elif isinstance(v, bool):
                    row.append("1" if v else "0")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(str(v))
            w.writerow(row)


def read_history(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _metrics_lines(phase: str, results: Sequence[RolloutMetrics]) -> list[str]:
    return [json.dumps(dict(phase=phase, **m.to_dict())) for m in results]


class _RunDir:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            (path / "per_example").mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.path is not None:
            (self.path / name).write_text(text)

    def per_example(self, key: str, lines: list[str]) -> None:
        if self.path is not None and lines:
            (self.path / "per_example" / f"{key}.jsonl").write_text("".join(l + "\n" for l in lines))


# -- main loop ---------------------------------------------------------------


def _encode_rng(state) -> list:
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _decode_rng(data) -> tuple:
    version, internal, gauss = data
    return (version, tuple(internal), gauss)


class _Loop:
    def __init__(self, config, dataset, agent, reflector, seed_context, run_dir):
        self.cfg = config
        self.ds = dataset
        self.agent = agent
        self.reflector = reflector
        self.train = dataset.split("train")
        self.val = dataset.split("val")
        if not self.train or not self.val:
            raise ConfigError("the dataset needs nonempty train and val splits")
        self.seed_context = seed_context or CandidateContext(tools=dataset.tools)
        report = validate_context(self.seed_context)
        if not report.ok:
            raise ConfigError("seed context is invalid: " + "; ".join(i.message for i in report.errors))
        self.dir = _RunDir(Path(run_dir) if run_dir is not None else None)
        self.rng = random.Random(config.seed)
        self.rollouts = 0
        self.s_star = -math.inf
        self.best = self.seed_context
        self.history: list[IterationRecord] = []
        self.pool: Pool | None = None
        self.start_iter = 1

    def _rollout(self, ctx, examples):
        self.rollouts += len(examples)
        return rollout(ctx, examples, self.agent, self.cfg.weights, self.cfg.workers)

    def _entry(self, ctx: CandidateContext, it: int, val_score: float | None, eid: str) -> PoolEntry:
        results, _ = self._rollout(ctx, self.train)
        per = {m.example_id: example_score(m, self.cfg.weights) for m in results}
        return PoolEntry(ctx, per, val_score, it, eid)

    def init_pool(self) -> None:
        self.pool = Pool((self._entry(self.seed_context, 0, None, "c0"),), self.cfg.pool_capacity, None)

    # -- persistence

    def checkpoint(self, it: int) -> None:
        if self.dir.path is None:
            return
        _write_history(self.dir.path / "history.csv", self.history)
        self.dir.write("best_context.json", dump_json(context_to_dict(self.best)))
        self.dir.write("pool.json", dump_json(self.pool.to_dict()))
        state = {
            "iteration": it,
            "rng_state": _encode_rng(self.rng.getstate()),
            "best_val_score": None if self.s_star == -math.inf else self.s_star,
            "rollouts": self.rollouts,
            "history": [asdict(r) for r in self.history],
        }
        self.dir.write("state.json", dump_json(state))

    def restore(self) -> bool:
        path = self.dir.path
        if path is None or not (path / "state.json").exists():
            return False
        state = json.loads((path / "state.json").read_text())
        self.rng.setstate(_decode_rng(state["rng_state"]))
        s = state["best_val_score"]
        self.s_star = -math.inf if s is None else float(s)
        self.rollouts = int(state["rollouts"])
        self.history = [IterationRecord(**r) for r in state["history"]]
        for r in self.history:
            if r.best_val_score is None:
                object.__setattr__(r, "best_val_score", -math.inf)
        self.pool = Pool.from_dict(json.loads((path / "pool.json").read_text()))
        self.best = context_from_dict(json.loads((path / "best_context.json").read_text()))
        self.start_iter = int(state["iteration"]) + 1
        log.info("resuming at iteration %d", self.start_iter)
        return True

    # -- one iteration

    def _record(self, it, parent_id, s_o, s_new, accepted=False, added=False, val=None, note=""):
        rec = IterationRecord(it, parent_id, s_o, s_new, accepted, added, val, self.s_star, self.rollouts, note)
        self.history.append(rec)
        log.info(
            "iter %d parent=%s before=%s after=%s accepted=%s val=%s best=%s %s",
            it, parent_id, s_o, s_new, accepted, val, self.s_star, note,
        )
        return rec

    def step(self, it: int) -> None:
        cfg = self.cfg
        batch = self.rng.sample(self.train, min(cfg.batch_size, len(self.train)))
        parent = pareto_select(self.pool, self.rng)
        res_o, feedback = self._rollout(parent.candidate, batch)
        s_o = score(res_o, cfg.weights)
        lines = _metrics_lines("parent", res_o)
        if not feedback:
            self.dir.per_example(str(it), lines)
            self._record(it, parent.id, s_o, None, note="no failures on minibatch")
            return
        edits, _ = propose_edits(parent.candidate, feedback, self.reflector, cfg.retry_limit)
        if edits is None:
            self.dir.per_example(str(it), lines)
            self._record(it, parent.id, s_o, None, note="reflector output unusable")
            return
        try:
            draft = apply_edits(parent.candidate, edits)
        except RevisionRejected as e:
            self.dir.per_example(str(it), lines)
            self._record(it, parent.id, s_o, None, note=f"edits rejected: {e}")
            return
        revised = {t.name for t in edits.tool_revisions}
        try:
            cand = merge_with_best(draft, self.best, cfg.merge_mode, self.reflector, revised)
        except MergeBackendFailure as e:
            log.warning("merge backend failed (%s); using deterministic merge", e)
            cand = merge_with_best(draft, self.best, "deterministic", None, revised)
        if cfg.globalize_enabled:
            families = detect_slot_families(cand.tools, cfg.min_family_tools, cfg.min_family_fraction)
            cand = globalize(cand, families)
            if cfg.llm_globalize:
                cand = llm_globalize(cand, self.reflector)
        if not validate_context(cand).ok:
            self.dir.per_example(str(it), lines)
            self._record(it, parent.id, s_o, None, note="candidate failed validation")
            return
        if cand == parent.candidate:
            # identical context: the minibatch score cannot change
            s_new = s_o
            note = "candidate identical to parent"
        else:
            res_new, _ = self._rollout(cand, batch)
            s_new = score(res_new, cfg.weights)
            lines += _metrics_lines("candidate", res_new)
            note = ""
        if not s_new > s_o:
            self.dir.per_example(str(it), lines)
            self._record(it, parent.id, s_o, s_new, note=note or "no minibatch gain")
            return
        res_val, _ = self._rollout(cand, self.val)
        s_val = score(res_val, cfg.weights)
        lines += _metrics_lines("val", res_val)
        self.dir.per_example(str(it), lines)
        added = False
        if s_val >= self.s_star:
            entry = self._entry(cand, it, s_val, f"c{it}")
            self.pool = update_front(add_to_pool(self.pool, entry))
            added = True
        if s_val > self.s_star:
            self.s_star = s_val
            self.best = cand
        self._record(it, parent.id, s_o, s_new, True, added, s_val, note)

    def run(self, resume: bool = False) -> OptimizationResult:
        if not (resume and self.restore()):
            if self.dir.path is not None:
                self.dir.write("config.json", dump_json(self.cfg.to_dict()))
            self.init_pool()
            self.checkpoint(0)
        for it in range(self.start_iter, self.cfg.iterations + 1):
            self.step(it)
            self.checkpoint(it)
        result = OptimizationResult(self.best, self.history, self.s_star, self.pool, self.rollouts)
        test = self.ds.split("test")
        if self.cfg.eval_test and test:
            res, _ = rollout(self.best, test, self.agent, self.cfg.weights, self.cfg.workers)
            result.test_results = res
            result.final_test_metrics = aggregate(res)
            self.dir.per_example("test", _metrics_lines("test", res))
            self.dir.write("test_metrics.json", dump_json(result.final_test_metrics.to_dict()))
        return result


def run(
    config: RunConfig,
    dataset: Dataset,
    agent,
    reflector,
    seed_context: CandidateContext | None = None,
    run_dir=None,
    resume: bool = False,
) -> OptimizationResult:
    """Optimize the seed context (default: the dataset's tools, empty instructions).

    With ``run_dir`` every iteration is checkpointed there; ``resume`` picks
    up from the last checkpoint.
    """
    return _Loop(config, dataset, agent, reflector, seed_context, run_dir).run(resume)
