"""Turns a RunConfig into a finished run with artifacts on disk.

Artifacts written to the output directory:
  runlog.ndjson        the full event stream (meta record first)
  best_workflow.json   the winning program in the workflow JSON format
  motifs.json          the final motif library snapshot
  summary.json         headline metrics for the run
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .adapter import ExternalEvaluator, HttpTransport, StdioTransport
from .config import RunConfig
from .constraints import ConstraintScorer
from .harness import (
    SyntheticEvaluator,
    SyntheticProposer,
    SyntheticSuite,
    make_synthetic_suite,
)
from .model import (
    InvalidProgramError,
    WorkflowProgram,
    default_registry,
    dumps_program,
    validate_program,
)
from .motifs import init_templates, save_library
from .reporting import analyze
from .runlog import RunLog
from .search import Optimizer
from .weights import FAMILIES


def export_workflow(program: WorkflowProgram, path: str | Path, registry=None) -> None:
    """Write a validated program in the canonical workflow JSON format.

    The output round-trips bit-identically through the loader; invalid
    programs are rejected before anything is written.
    """
    report = validate_program(program, registry)
    if not report.ok:
        raise InvalidProgramError("; ".join(report.violations))
    Path(path).write_text(dumps_program(program))


@dataclass
class RunResult:
    best_program: WorkflowProgram
    log: RunLog
    optimizer: Optimizer
    suite: SyntheticSuite
    summary: dict


def build_suite(config: RunConfig) -> SyntheticSuite:
    return make_synthetic_suite(
        seed=config.seed,
        n_problems=config.suite.n_problems,
        category_count=config.suite.category_count,
        proposer_config=config.proposer,
        n_roots=config.suite.n_roots,
        target_edits=config.suite.target_edits,
        unit_dims=config.suite.unit_dims,
    )


def execute_run(config: RunConfig, out_dir: Optional[str | Path] = None) -> RunResult:
    registry = default_registry()
    suite = build_suite(config)
    categories = sorted({p.category for p in suite.all_problems()})
    category = config.category or categories[0]

    library = init_templates(
        categories,
        config.motifs.templates_per_category,
        registry_ops=registry.names,
        seed=config.seed,
        refinement_period=config.motifs.refinement_period,
        cluster_count_per_category=config.motifs.cluster_count_per_category,
        min_separation=config.motifs.min_separation,
        max_per_category=config.motifs.max_per_category,
    )
    scorer = ConstraintScorer(
        registry,
        agg=config.aggregation,
        depth_diversity=config.depth_diversity,
        magnitude=config.magnitude,
        library=library,
        category=category,
        enabled_families=config.ablation.enabled_families,
    )
    proposer = SyntheticProposer(registry, config.proposer)
    if config.executor.mode == "external":
        if config.executor.command:
            transport = StdioTransport(config.executor.command)
        else:
            transport = HttpTransport(config.executor.address)  # type: ignore[arg-type]
        evaluator = ExternalEvaluator(transport, suite.validation)
    else:
        evaluator = SyntheticEvaluator(suite.validation, registry)

    log = RunLog()
    log.append(
        "meta",
        round=None,
        seed=config.seed,
        n_problems=len(suite.validation) + len(suite.test),
        n_validation=len(suite.validation),
        n_test=len(suite.test),
        category=category,
        prices={role: list(p) for role, p in config.prices.prices.items()},
        config=config.to_dict(),
    )
    optimizer = Optimizer(
        suite.initial_program,
        proposer,
        evaluator,
        scorer,
        schedule=config.threshold,
        adaptation=config.adaptation,
        budget=config.budget,
        stages=config.ablation.stage_switches(),
        adaptive_weights=config.ablation.adaptive_weights,
        log=log,
    )
    best, log = optimizer.run()

    test_reward = None
    if suite.test.problems:
        test_eval = SyntheticEvaluator(suite.test, registry)
        test_reward, _, _ = test_eval.evaluate(best)

    stats = analyze(log)
    summary = {
        "seed": config.seed,
        "category": category,
        "best_validation_reward": optimizer.best_node_stats().get("mean_reward"),
        "best_test_reward": test_reward,
        "rounds": config.budget.rounds,
        "pruning_rate": stats.pruning_rate,
        "tokens_per_problem": stats.tokens_per_problem,
        "cost_per_problem": stats.cost_per_problem,
        "mean_round_score": stats.mean_score,
        "std_round_score": stats.std_score,
        "final_weights": optimizer.weights.as_dict(),
        "motif_count": len(optimizer.scorer.library.motifs) if optimizer.scorer.library else 0,
        "enabled_families": list(config.ablation.enabled_families),
        "enabled_stages": list(config.ablation.enabled_stages),
        "adaptive_weights": config.ablation.adaptive_weights,
    }

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log.save(out / "runlog.ndjson")
        export_workflow(best, out / "best_workflow.json", registry)
        if optimizer.scorer.library is not None:
            # snapshots are test-phase artifacts: refinement stops here
            save_library(optimizer.scorer.library.freeze(), out / "motifs.json")
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")

    return RunResult(best_program=best, log=log, optimizer=optimizer, suite=suite, summary=summary)


def ablation_grid(config: RunConfig) -> dict[str, RunConfig]:
    """Family-only, stage-only, and fixed-weight variants of a base config."""
    from dataclasses import replace

    grid: dict[str, RunConfig] = {"full": config}
    for family in FAMILIES:
        grid[f"family_{family}"] = replace(
            config, ablation=replace(config.ablation, enabled_families=(family,))
        )
    for stage in ("selection", "expansion", "simulation", "backprop"):
        grid[f"stage_{stage}"] = replace(
            config, ablation=replace(config.ablation, enabled_stages=(stage,))
        )
    grid["fixed_weights"] = replace(
        config, ablation=replace(config.ablation, adaptive_weights=False)
    )
    return grid
