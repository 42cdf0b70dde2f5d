"""
Command-line entry point.

  discover-csi  learn (or load cached) CSIs for every candidate context
  train         label training tasks and fit the context selector
  eval          run every method on the test tasks over several seeds
  sweep         lambda or training-set-size sweep
  report        mean +- SD summary of a results CSV
  offline-vi    CAMP-with-VI versus full-space VI
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import pandas as pd

from . import __version__
from .core import COST_CHANNELS
from .domain_config_manager import DomainConfigManager
from .file_manager import cleanup_old_results, create_output_directory, get_output_path
from .harness import (FAST_RUNS, METHODS, ExperimentConfig, discover_csis, domain_binding, prepare_experiment,
                      offline_vi_experiment, run_runs, summarize, sweep, write_results)
from .planners import PLANNER_ALIASES, PlannerConfig
from .selector import write_label_table
from .settings_model import SettingsModel
from .task_registry import TaskRegistry

logger = logging.getLogger(__name__)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--domain", choices=("gridworld", "dinner"))
    parser.add_argument("--planner", choices=sorted(PLANNER_ALIASES))
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n-train", dest="n_train", type=int)
    parser.add_argument("--n-test", dest="n_test", type=int)
    parser.add_argument("--runs", type=int)
    parser.add_argument("--out", help="output directory (default: results/<date>)")
    parser.add_argument("--cost-channel", dest="cost_channel", choices=COST_CHANNELS)
    parser.add_argument("--profile", choices=sorted(SettingsModel.PROFILES))
    parser.add_argument("--max-context-len", dest="max_context_len", type=int)
    parser.add_argument("--k1", type=int)
    parser.add_argument("--k2", type=int)
    parser.add_argument("--config", help="alternative settings JSON document")
    parser.add_argument("--domain-config", dest="domain_config", help="alternative domain config JSON document")
    parser.add_argument("--log-level", dest="log_level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camp-planner",
                                     description="Context-specific abstraction for cost-aware planning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common_flags(sub.add_parser("discover-csi", help="learn CSIs for every candidate context"))
    _add_common_flags(sub.add_parser("train", help="fit the context selector"))

    p = sub.add_parser("eval", help="evaluate methods on test tasks")
    _add_common_flags(p)
    p.add_argument("--methods", nargs="+", choices=METHODS)

    p = sub.add_parser("sweep", help="lambda or training-set-size sweep")
    _add_common_flags(p)
    p.add_argument("--kind", choices=("lambda", "n_train"), required=True)
    p.add_argument("--grid", type=float, nargs="+", required=True)
    p.add_argument("--methods", nargs="+", choices=METHODS)

    p = sub.add_parser("report", help="summarize a results CSV")
    p.add_argument("results", help="results CSV written by eval or sweep")
    p.add_argument("--out")
    p.add_argument("--log-level", dest="log_level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    _add_common_flags(sub.add_parser("offline-vi", help="CAMP-with-VI versus full-space VI"))
    return parser


def resolve_settings(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "domain_config", "methods", "kind", "grid")}
    overrides["lambda"] = overrides.pop("lam", None)
    return SettingsModel(getattr(args, "config", None)).resolve(overrides)


def build_experiment_config(settings: Dict[str, Any], domains: DomainConfigManager,
                            methods: Optional[List[str]] = None) -> ExperimentConfig:
    domain = settings["domain"]
    config = domains.get_domain_config(domain)
    kind = settings.get("planner") or domain_binding(domain, config).default_planner
    planner = PlannerConfig(kind=kind, timeout_seconds=float(settings["timeout_seconds"]),
                            mcts_budget_seconds=float(settings["mcts_budget_seconds"]))
    lam = settings.get("lambda")
    if lam is None:
        lam = domains.get_lambda(domain, planner.kind)
    budget = domains.get_csi_budget(domain)
    return ExperimentConfig(
        domain=domain,
        planner=planner,
        methods=tuple(methods or METHODS),
        lam=lam,
        seed=int(settings["seed"]),
        n_train=settings.get("n_train"),
        n_test=settings.get("n_test"),
        cost_channel=settings["cost_channel"],
        seconds_per_expansion=float(settings["seconds_per_expansion"]),
        domain_config=config,
        context_variables=tuple(domains.get_context_variables(domain)),
        max_context_len=int(settings["max_context_len"]),
        domain_size_threshold=int(settings["domain_size_threshold"]),
        k1=int(settings.get("k1") or budget["k1"]),
        k2=int(settings.get("k2") or budget["k2"]),
        csi_mode=budget["mode"],
        selector_max_epochs=int(settings["selector_max_epochs"]),
        policy_max_epochs=int(settings["policy_max_epochs"]),
        cache_dir=settings["out"],
    )


def _cmd_discover_csi(config: ExperimentConfig, settings: Dict[str, Any]) -> int:
    contexts, csis = discover_csis(domain_binding(config.domain, config.domain_config), config)
    for ctx in contexts:
        print(f"{ctx.text:<50} {len(csis[ctx].independent_pairs):>6} independent pairs")
    return 0


def _cmd_train(config: ExperimentConfig, settings: Dict[str, Any]) -> int:
    prepared = prepare_experiment(config, kinds=["camp"])
    registry = TaskRegistry(get_output_path(f"tasks_{config.domain}_{config.seed}.json", out_dir=settings["out"]))
    registry.add_tasks(prepared.train_tasks, config.domain, "train", config.seed)
    registry.add_tasks(prepared.test_tasks, config.domain, "test", config.seed)
    if prepared.selector is None:
        logger.critical(f"Selector training failed: {prepared.errors.get('selector')}")
        return 1
    stem = f"selector_{config.domain}_{config.planner.kind}_{config.seed}"
    path = get_output_path(stem, "pt", out_dir=settings["out"])
    prepared.selector.save(path)
    write_label_table(prepared.selector.label_table, get_output_path(f"labels_{config.domain}_{config.seed}", "csv",
                                                                     out_dir=settings["out"]))
    print(f"selector saved to {path} (training loss {prepared.selector.training_loss:.4g})")
    for flag in prepared.selector.flags:
        print(f"  flagged: {flag}")
    return 0


def _cmd_eval(config: ExperimentConfig, settings: Dict[str, Any]) -> int:
    rows = run_runs(config, int(settings.get("runs") or FAST_RUNS))
    stem = f"results_{config.domain}_{config.planner.kind}"
    write_results(rows, get_output_path(stem, "csv", out_dir=settings["out"]))
    summary = summarize(rows)
    summary.to_csv(get_output_path(f"summary_{config.domain}_{config.planner.kind}", "csv", out_dir=settings["out"]),
                   index=False)
    print(summary.to_string(index=False))
    return 0


def _cmd_sweep(config: ExperimentConfig, settings: Dict[str, Any], kind: str, grid: List[float]) -> int:
    frame = sweep(kind, grid, config, int(settings.get("runs") or FAST_RUNS))
    write_results(frame, get_output_path(f"sweep_{kind}_{config.domain}_{config.planner.kind}", "csv",
                                         out_dir=settings["out"]))
    print(summarize(frame).to_string(index=False))
    return 0


def _cmd_report(path: str, out: Optional[str]) -> int:
    if not os.path.exists(path):
        logger.critical(f"Results file not found: {path}")
        return 1
    summary = summarize(pd.read_csv(path))
    target = get_output_path(f"summary_{os.path.basename(path)}", out_dir=out or os.path.dirname(path) or None)
    summary.to_csv(target, index=False)
    print(summary.to_string(index=False))
    return 0


def _cmd_offline_vi(config: ExperimentConfig, settings: Dict[str, Any]) -> int:
    report = offline_vi_experiment(config, lam=settings.get("lambda"))
    target = get_output_path(f"offline_vi_{config.domain}_{config.seed}", "json", out_dir=settings["out"])
    with open(target, "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False, indent=2)
    for key, value in report.items():
        print(f"{key:<24} {value:.6g}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        logging.getLogger().setLevel(args.log_level)
    try:
        if args.command == "report":
            return _cmd_report(args.results, args.out)

        settings = resolve_settings(args)
        logging.getLogger().setLevel(settings["log_level"])
        cleaned = cleanup_old_results(days_to_keep=int(settings["retention_days"]))
        if cleaned:
            logger.info(f"Removed {cleaned} result folders older than {settings['retention_days']} days")
        settings["out"] = settings.get("out") or create_output_directory()
        domains = DomainConfigManager(args.domain_config)
        config = build_experiment_config(settings, domains, getattr(args, "methods", None))
        logger.info(f"{args.command}: domain={config.domain} planner={config.planner.kind} lambda={config.lam:g} "
                    f"seed={config.seed} profile={settings['profile']} out={settings['out']}")

        if args.command == "discover-csi":
            return _cmd_discover_csi(config, settings)
        if args.command == "train":
            return _cmd_train(config, settings)
        if args.command == "eval":
            return _cmd_eval(config, settings)
        if args.command == "sweep":
            return _cmd_sweep(config, settings, args.kind, args.grid)
        if args.command == "offline-vi":
            return _cmd_offline_vi(config, settings)
        logger.critical(f"Unknown command: {args.command}")
        return 1
    except Exception as e:
        logger.critical(f"{args.command} failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
