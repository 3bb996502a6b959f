"""Command-line entry points: synth, optimize, eval, analyze, stats.

Every command prints one JSON object on stdout; diagnostics go to stderr.
Exit codes: 0 ok, 2 usage or config error, 3 data or backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .backends import BackendError, agent_from_config, completion_from_config
from .dataset import (
    Dataset,
    InsufficientExamples,
    ParseError,
    SchemaMismatch,
    SpecError,
    SynthSpec,
    dataset_stats,
    load_dataset,
    load_dataset_dir,
    load_tools,
    make_train_regime,
    save_dataset,
    synthesize_inventory,
)
from .globalize import detect_slot_families, families_report
from .metrics import LossWeights, RolloutMetrics, aggregate, write_metrics_csv
from .optimizer import ConfigError, RunConfig, rollout, run
from .scenario import disambiguation_scenario, scenario_run_config
from .schema import CandidateContext, context_from_dict, dump_json, tool_from_dict

log = logging.getLogger("toolctx")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _read_json(path, what: str, code: int = EXIT_CONFIG):
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {path}", code)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"{what} is not valid JSON: {e}", code) from e


def _load_data(ref) -> Dataset:
    """A dataset is a directory with tools.json and examples.jsonl, or an explicit pair."""
    try:
        if isinstance(ref, dict):
            return load_dataset(ref["tools"], ref["examples"])
        return load_dataset_dir(ref)
    except KeyError as e:
        raise CliError(f"dataset config missing {e.args[0]!r}", EXIT_CONFIG) from e
    except (OSError, ParseError, SchemaMismatch, ValueError) as e:
        raise CliError(f"cannot load dataset: {e}", EXIT_DATA) from e


def _load_context(path) -> CandidateContext:
    """A context file, or a bare tools list (which becomes a context with no instructions)."""
    data = _read_json(path, "context", EXIT_DATA)
    try:
        if isinstance(data, list):
            return CandidateContext(tools=tuple(tool_from_dict(t) for t in data))
        return context_from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"bad context file {path}: {e}", EXIT_DATA) from e


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    if args.scenario:
        sc = disambiguation_scenario(args.seed if args.seed is not None else 0)
        save_dataset(sc.dataset, out)
        (out / "config.json").write_text(dump_json(scenario_run_config(sc, str(out), str(out / "run"))))
        _emit({"out_dir": str(out), "tools": len(sc.dataset.tools), "examples": len(sc.dataset.examples)})
        return EXIT_OK
    if not args.spec:
        raise CliError("synth needs a spec file or --scenario", EXIT_CONFIG)
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise CliError(f"spec not found: {args.spec}", EXIT_CONFIG)
    raw = _read_json(spec_path, "spec")
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(raw)
        ds = synthesize_inventory(spec)
    except (SpecError, KeyError, TypeError, ValueError) as e:
        raise CliError(f"invalid spec: {e}", EXIT_CONFIG) from e
    save_dataset(ds, out)
    ledger = {fam: [list(m) for m in members] for fam, members in ds.ledger.items()}
    (out / "ledger.json").write_text(dump_json(ledger))
    _emit({"out_dir": str(out), "tools": len(ds.tools), "examples": len(ds.examples)})
    return EXIT_OK


# -- optimize ----------------------------------------------------------------


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    weights = dict(cfg.get("weights") or {})
    for flag, key in (("lambda_tsa", "lambda_tsa"), ("lambda_sfa", "lambda_sfa"), ("lambda_osr", "lambda_osr")):
        val = getattr(args, flag, None)
        if val is not None:
            weights[key] = val
    if weights:
        cfg["weights"] = weights
    if getattr(args, "no_globalize", False):
        cfg["globalize_enabled"] = False
    if getattr(args, "merge_mode", None):
        cfg["merge_mode"] = args.merge_mode
    backend = getattr(args, "backend", None)
    if backend:
        agent = dict(cfg.get("agent") or {})
        agent["type"] = backend
        cfg["agent"] = agent
        refl = dict(cfg.get("reflector") or {})
        if backend == "http":
            refl["type"] = "http"
        elif refl.get("type") == "http":
            refl["type"] = "scripted"
        cfg["reflector"] = refl
    return cfg


def cmd_optimize(args) -> int:
    cfg = _apply_overrides(_read_json(args.config, "config"), args)
    try:
        run_cfg = RunConfig.from_dict(cfg)
    except ConfigError as e:
        raise CliError(f"config error: {e}", EXIT_CONFIG) from e
    if "dataset" not in cfg:
        raise CliError("config error: no dataset given", EXIT_CONFIG)
    ds = _load_data(cfg["dataset"])
    if cfg.get("train_regime"):
        try:
            ds = make_train_regime(ds, int(cfg["train_regime"]), run_cfg.seed)
        except InsufficientExamples as e:
            raise CliError(str(e), EXIT_DATA) from e
    try:
        agent = agent_from_config(cfg.get("agent"), ds)
        reflector = completion_from_config(cfg.get("reflector"))
    except ValueError as e:
        raise CliError(f"config error: {e}", EXIT_CONFIG) from e
    seed_ctx = _load_context(cfg["seed_context"]) if cfg.get("seed_context") else None
    run_dir = args.run_dir or cfg.get("run_dir") or "run"
    try:
        result = run(run_cfg, ds, agent, reflector, seed_ctx, run_dir, resume=args.resume)
    except ConfigError as e:
        raise CliError(f"config error: {e}", EXIT_CONFIG) from e
    summary = {
        "run_dir": str(run_dir),
        "iterations": len(result.history),
        "best_val_score": None if result.best_val_score == float("-inf") else result.best_val_score,
        "rollouts": result.rollouts,
        "test": result.final_test_metrics.to_dict() if result.final_test_metrics else None,
    }
    _emit(summary)
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    ctx = _load_context(args.context)
    ds = _load_data(args.dataset)
    examples = ds.split(args.split)
    if not examples:
        raise CliError(f"no {args.split} examples", EXIT_DATA)
    agent_cfg = _read_json(args.agent_config, "agent config") if args.agent_config else None
    try:
        agent = agent_from_config(agent_cfg, ds)
        weights = LossWeights(
            *(v if v is not None else 1.0 for v in (args.lambda_tsa, args.lambda_sfa, args.lambda_osr))
        )
    except ValueError as e:
        raise CliError(f"config error: {e}", EXIT_CONFIG) from e
    results, _ = rollout(ctx, examples, agent, weights)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(json.dumps(m.to_dict()) + "\n" for m in results))
    agg = aggregate(results)
    metrics_csv = out.parent / "metrics.csv"
    write_metrics_csv([(Path(args.dataset).name, Path(args.context).stem, agg)], metrics_csv)
    _emit(dict(agg.to_dict(), per_example=str(out), metrics_csv=str(metrics_csv)))
    return EXIT_OK


# -- analyze -----------------------------------------------------------------


def _tools_of(path):
    return list(_load_context(path).tools)


def _read_results(path) -> list[RolloutMetrics]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"results not found: {path}", EXIT_DATA)
    try:
        return [RolloutMetrics.from_dict(json.loads(l)) for l in p.read_text().splitlines() if l.strip()]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CliError(f"bad per-example results {path}: {e}", EXIT_DATA) from e


def cmd_analyze(args) -> int:
    before, after = _tools_of(args.before), _tools_of(args.after)
    if args.embedder_config:
        embedder = analysis.HttpEmbedder.from_config(_read_json(args.embedder_config, "embedder config"))
    else:
        embedder = "tfidf_local"
    try:
        reports = analysis.disambiguation_report(before, after, args.min_prefix_tokens, embedder)
        delta = analysis.description_delta(before, after)
    except analysis.InventoryMismatch as e:
        raise CliError(str(e), EXIT_DATA) from e
    except analysis.EmbedBackendFailure as e:
        raise CliError(str(e), EXIT_DATA) from e
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_disambiguation_csv(reports, out / "disambiguation.csv")
    analysis.write_lengths_csv(delta, out / "lengths.csv")
    families = detect_slot_families(before, args.min_tools, args.min_fraction)
    (out / "families.json").write_text(dump_json(families_report(families)))
    improved = sum(1 for r in reports if r.delta < -args.improved_threshold)
    extra = {}
    if args.base_results or args.opt_results:
        if not (args.base_results and args.opt_results):
            raise CliError("--base-results and --opt-results go together", EXIT_CONFIG)
        base, opt = _read_results(args.base_results), _read_results(args.opt_results)
        try:
            for crit in ("sfa", "osr"):
                n, total, rate = analysis.per_example_improvement(base, opt, crit)
                extra[f"{crit}_improved"] = n
                extra[f"{crit}_improved_rate"] = rate
                extra["examples"] = total
        except analysis.AlignmentError as e:
            raise CliError(str(e), EXIT_DATA) from e
        analysis.write_improvement_csv(base, opt, out / "improvement.csv")
    _emit(
        {
            **extra,
            "groups": len(reports),
            "tools_in_groups": sum(len(r.group.tool_names) for r in reports),
            "groups_improved": improved,
            "modified": delta.modified,
            "total": delta.total,
            "mean_len_before": delta.mean_len_before,
            "mean_len_after": delta.mean_len_after,
            "relative_increase": delta.relative_increase,
            "out_dir": str(out),
        }
    )
    return EXIT_OK


# -- stats -------------------------------------------------------------------


def cmd_stats(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        tools = list(_load_data(path).tools)
    else:
        try:
            tools = list(load_tools(path))
        except (OSError, ValueError) as e:
            raise CliError(f"cannot load tools: {e}", EXIT_DATA) from e
    st = dataset_stats(tools)
    _emit(
        {
            "n_tools": st.n_tools,
            "avg_total_args": st.avg_total_args,
            "max_total_args": st.max_total_args,
            "avg_required_args": st.avg_required_args,
            "max_required_args": st.max_required_args,
        }
    )
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_weights(p) -> None:
    p.add_argument("--lambda-tsa", type=float, default=None)
    p.add_argument("--lambda-sfa", type=float, default=None)
    p.add_argument("--lambda-osr", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolctx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic inventory with gold examples")
    p.add_argument("spec", nargs="?", help="JSON synthesis spec")
    p.add_argument("out_dir")
    p.add_argument("--scenario", choices=["disambiguation"], help="write a built-in scenario instead")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="run the optimizer from a JSON config")
    p.add_argument("config")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    _add_weights(p)
    p.add_argument("--no-globalize", action="store_true")
    p.add_argument("--merge-mode", choices=["deterministic", "llm"], default=None)
    p.add_argument("--backend", choices=["mock", "http"], default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="score a context on one split")
    p.add_argument("context", help="context JSON or bare tools list")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--agent-config", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="per_example.jsonl")
    _add_weights(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="compare tool descriptions before and after optimization")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("--out-dir", default="analysis")
    p.add_argument("--min-prefix-tokens", type=int, default=2)
    p.add_argument("--improved-threshold", type=float, default=0.01)
    p.add_argument("--min-tools", type=int, default=5)
    p.add_argument("--min-fraction", type=float, default=0.1)
    p.add_argument("--embedder-config", default=None, help="JSON config for an HTTP embedding endpoint")
    p.add_argument("--base-results", default=None, help="per_example.jsonl of the baseline context")
    p.add_argument("--opt-results", default=None, help="per_example.jsonl of the optimized context")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stats", help="inventory statistics")
    p.add_argument("path", help="tools.json or dataset directory")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as e:
        log.error("%s", e)
        return e.code
    except (BackendError, OSError) as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
