"""End-to-end run: parse, profile, generate tasks, optimize, compare, decide, report."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import logging
import platform
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import TOOL_VERSION
from .evaluator import (
    Decision,
    DimensionScores,
    Verdict,
    MetricsSummary,
    TaskScore,
    compute_metrics,
    decide_retention,
    evaluate_instruction_llm,
    evaluate_task,
)
from .exec_engine import (
    ENV_POLICY,
    OPTIMIZED,
    ORIGINAL,
    ComparativeRunLog,
    EnvReport,
    ExecLimits,
    Mode,
    check_environment,
    frozen_seed_for,
    run_comparative,
)
from .hashing import digest_text
from .llm_gateway import Gateway, GatewayConfig, Transport
from .optimizer import Observer, OptimizationHistory, OptimizerConfig, Scorer, make_scorer, optimize_skill
from .rubric import Rubric, builtin_rubric
from .serde import dumps_canonical, from_jsonable
from .skill_model import (
    CapabilityProfile,
    SkillPackage,
    effective_commands,
    extract_capability_profile,
    materialize,
    parse_skill_package,
)
from .task_gen import GenerationConfig, Task, TaskSuite, Tier, generate_task_suite

logger = logging.getLogger(__name__)

OPTIMIZED_MARKER = ".skillevo-optimized"


class OutputDirError(OSError):
    """The output directory cannot be created or written."""


@dataclass(frozen=True)
class PipelineConfig:
    skill_dir: str
    output_dir: str = "skillevo-out"
    mode: Mode = Mode.REAL
    num_epochs: int = 3
    group_size: int = 3
    max_iterations: int = 2
    train_count: int = 12
    test_count: int = 8
    pass_threshold: float = 0.70
    parallelism: int = 4
    seed: int = 0
    timeout_ms: int = 30_000
    max_output_bytes: int = 1 << 20
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    formats: tuple[str, ...] = ("json", "md")

    def __post_init__(self) -> None:
        counts = {
            "num_epochs": self.num_epochs,
            "group_size": self.group_size,
            "max_iterations": self.max_iterations,
            "train_count": self.train_count,
            "test_count": self.test_count,
            "parallelism": self.parallelism,
            "timeout_ms": self.timeout_ms,
            "max_output_bytes": self.max_output_bytes,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be at least 1, got {value}")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.train_count < 2 or self.test_count < 2:
            raise ValueError("train_count and test_count must be at least 2")
        if not 0 < self.pass_threshold <= 1:
            raise ValueError(f"pass_threshold must be in (0, 1], got {self.pass_threshold}")
        unknown = set(self.formats) - {"json", "md"}
        if unknown:
            raise ValueError(f"unknown report format(s): {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class ConfigSnapshot:
    """Run settings echoed into the report. Paths live in run.meta.json."""

    mode: Mode
    num_epochs: int
    group_size: int
    max_iterations: int
    train_count: int
    test_count: int
    pass_threshold: float
    parallelism: int
    seed: int
    timeout_ms: int
    max_output_bytes: int
    model: str
    endpoint: str
    offline: bool
    llm_timeout_ms: int
    llm_max_retries: int

    @classmethod
    def of(cls, cfg: PipelineConfig) -> ConfigSnapshot:
        g = cfg.gateway
        return cls(
            cfg.mode, cfg.num_epochs, cfg.group_size, cfg.max_iterations, cfg.train_count,
            cfg.test_count, cfg.pass_threshold, cfg.parallelism, cfg.seed, cfg.timeout_ms,
            cfg.max_output_bytes, g.model, g.endpoint, g.offline, g.timeout_ms, g.max_retries,
        )


@dataclass(frozen=True)
class PairedTask:
    task_id: str
    tier: Tier
    area: str
    description: str
    original: TaskScore
    optimized: TaskScore
    delta: float


@dataclass(frozen=True)
class BoundaryEntry:
    area: str
    tasks: int
    original_passed: int
    optimized_passed: int
    original_score: float
    optimized_score: float
    still_failing: tuple[str, ...]


@dataclass(frozen=True)
class VersionMetrics:
    original: MetricsSummary
    optimized: MetricsSummary


@dataclass(frozen=True)
class DocumentQuality:
    original: DimensionScores
    optimized: DimensionScores


@dataclass(frozen=True)
class HistorySummary:
    path: str
    epochs: int
    instruction_evaluations: int
    selected_variants: tuple[str, ...]
    fix_attempts: int
    initial_train_score: float
    final_train_score: float


@dataclass(frozen=True)
class RunReport:
    tool_version: str
    skill_name: str
    skill_type: str
    original_digest: str
    optimized_digest: str
    config: ConfigSnapshot
    suite_digest: str
    rubric_digest: str
    frozen_seed: str
    environment: EnvReport
    env_policy: str
    metrics: VersionMetrics
    per_task: tuple[PairedTask, ...]
    boundary_analysis: tuple[BoundaryEntry, ...]
    decision: Decision
    document_quality: DocumentQuality
    history: HistorySummary
    notes: tuple[str, ...] = ()

    def to_json(self) -> str:
        return dumps_canonical(self)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return from_jsonable(cls, json.loads(text))


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------


def score_log(log: ComparativeRunLog, tasks: list[Task], rubric: Rubric) -> dict[str, list[TaskScore]]:
    by_id = {t.id: t for t in tasks}
    out: dict[str, list[TaskScore]] = {}
    for version in (ORIGINAL, OPTIMIZED):
        records = {r.task_id: r for r in log.for_version(version)}
        out[version] = [evaluate_task(records[t.id], t, rubric) for t in tasks if t.id in records]
    missing = [t for t in by_id if t not in {s.task_id for s in out[ORIGINAL]}]
    if missing:
        raise ValueError(f"run log has no records for tasks: {', '.join(missing)}")
    return out


def pair_scores(tasks: list[Task], scores: dict[str, list[TaskScore]]) -> tuple[PairedTask, ...]:
    orig = {s.task_id: s for s in scores[ORIGINAL]}
    opt = {s.task_id: s for s in scores[OPTIMIZED]}
    return tuple(
        PairedTask(t.id, t.tier, t.area, t.description, orig[t.id], opt[t.id], opt[t.id].normalized - orig[t.id].normalized)
        for t in tasks
    )


def boundary_analysis(tasks: list[Task], paired: tuple[PairedTask, ...]) -> tuple[BoundaryEntry, ...]:
    areas = [a for a in CapabilityProfile.AREAS if any(t.area == a for t in tasks)]
    by_task = {t.id: t for t in tasks}
    entries = []
    for area in areas:
        rows = [p for p in paired if p.area == area]
        failing = []
        for p in rows:
            for result in p.optimized.per_criterion:
                if not result.satisfied:
                    crit = by_task[p.task_id].criteria[result.index]
                    failing.append(f"{p.task_id}: {crit.describe()}")
        entries.append(BoundaryEntry(
            area=area,
            tasks=len(rows),
            original_passed=sum(p.original.passed for p in rows),
            optimized_passed=sum(p.optimized.passed for p in rows),
            original_score=sum(p.original.normalized for p in rows) / len(rows),
            optimized_score=sum(p.optimized.normalized for p in rows) / len(rows),
            still_failing=tuple(failing),
        ))
    return tuple(entries)


def summarize_history(history: OptimizationHistory) -> HistorySummary:
    return HistorySummary(
        path="history.json",
        epochs=len(history.epochs),
        instruction_evaluations=history.instruction_evaluations(),
        selected_variants=tuple(e.group.variant_ids[e.group.selected] for e in history.epochs),
        fix_attempts=sum(len(e.fix_attempts) for e in history.epochs),
        initial_train_score=history.initial_score,
        final_train_score=history.final_score,
    )


def suite_digest(suite: TaskSuite) -> str:
    return digest_text(suite.to_json())


def sync_instruction_commands(original: SkillPackage, optimized: SkillPackage) -> str:
    """Instruction text whose documented commands match the optimized commands."""
    text = optimized.instruction
    before = effective_commands(original)
    after = effective_commands(optimized)
    if before == after:
        return text
    unplaced = []
    for old, new in zip(before, after):
        if old.raw == new.raw:
            continue
        if old.raw in text:
            text = text.replace(old.raw, new.raw)
        else:
            unplaced.append(new.raw)
    unplaced += [c.raw for c in after[len(before):]]
    if unplaced:
        block = "\n".join(unplaced)
        text = text.rstrip("\n") + f"\n\n## Commands\n\n```bash\n{block}\n```\n"
    return text


def export_optimized(original: SkillPackage, optimized: SkillPackage, dest: Path) -> Path:
    if dest.exists():
        shutil.rmtree(dest)
    pkg = optimized.with_instruction(sync_instruction_commands(original, optimized))
    materialize(pkg, dest)
    (dest / OPTIMIZED_MARKER).write_text(f"{TOOL_VERSION}\n", encoding="utf-8")
    return dest


def _prepare_output_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".skillevo-write-test"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OutputDirError(f"output directory {path} is not writable: {exc}") from exc


OptimizeFn = Callable[[SkillPackage, TaskSuite, OptimizerConfig, Scorer, Observer], tuple[SkillPackage, OptimizationHistory]]


def _default_optimize(pkg, suite, cfg, scorer, observer):
    return optimize_skill(pkg, suite, cfg, scorer, observer)


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------


def run_pipeline(
    cfg: PipelineConfig,
    *,
    transport: Transport | None = None,
    optimize_fn: OptimizeFn | None = None,
    observer: Observer | None = None,
    figures: bool = True,
) -> RunReport:
    from .report import emit_report  # matplotlib is only loaded when reports are written

    started = time.time()
    out = Path(cfg.output_dir)
    _prepare_output_dir(out)

    pkg = parse_skill_package(cfg.skill_dir)
    for warning in pkg.warnings:
        logger.warning("%s: %s", pkg.name, warning)
    profile = extract_capability_profile(pkg)
    gateway = Gateway(cfg.gateway, transport)

    suite = generate_task_suite(profile, pkg, GenerationConfig(cfg.train_count, cfg.test_count, cfg.seed, gateway))
    suite.write(out / "tasks.json")
    logger.info("generated %d train / %d test tasks", len(suite.train), len(suite.test))

    env = check_environment(pkg)
    if env.missing and cfg.mode is Mode.REAL:
        logger.warning("missing programs: %s", ", ".join(env.missing))
    rubric = dataclasses.replace(builtin_rubric(), pass_threshold=cfg.pass_threshold)
    limits = ExecLimits(cfg.timeout_ms, cfg.max_output_bytes)
    seed = frozen_seed_for(pkg.instruction)

    opt_cfg = OptimizerConfig(cfg.num_epochs, cfg.group_size, cfg.max_iterations, parallelism=cfg.parallelism, gateway=gateway)
    scorer = make_scorer(suite.train, cfg.mode, rubric, seed, limits, cfg.parallelism)
    optimized, history = (optimize_fn or _default_optimize)(
        pkg, suite, opt_cfg, scorer, observer or (lambda channel, text: None)
    )
    (out / "history.json").write_text(json.dumps(history.to_document(), indent=2, ensure_ascii=False) + "\n", "utf-8")

    # fresh runs of both versions on the held-out split
    log = run_comparative(pkg, optimized, suite.test, cfg.mode, cfg.parallelism, limits, seed)
    log.write_jsonl(out / "execution.log.jsonl")

    tasks = list(suite.test)
    scores = score_log(log, tasks, rubric)
    metrics = VersionMetrics(
        compute_metrics(scores[ORIGINAL], log.for_version(ORIGINAL)),
        compute_metrics(scores[OPTIMIZED], log.for_version(OPTIMIZED)),
    )
    paired = pair_scores(tasks, scores)
    decision = decide_retention(metrics.original, metrics.optimized, ((p.original, p.optimized) for p in paired))
    quality = DocumentQuality(
        evaluate_instruction_llm(pkg.instruction, rubric, gateway),
        evaluate_instruction_llm(optimized.instruction, rubric, gateway),
    )
    report = RunReport(
        tool_version=TOOL_VERSION,
        skill_name=pkg.name,
        skill_type=pkg.skill_type.value,
        original_digest=pkg.content_digest(),
        optimized_digest=optimized.content_digest(),
        config=ConfigSnapshot.of(cfg),
        suite_digest=suite_digest(suite),
        rubric_digest=rubric.digest(),
        frozen_seed=seed.hex(),
        environment=env,
        env_policy=ENV_POLICY,
        metrics=metrics,
        per_task=paired,
        boundary_analysis=boundary_analysis(tasks, paired),
        decision=decision,
        document_quality=quality,
        history=summarize_history(history),
        notes=(
            "history.json is kept for both verdicts",
            "tier scores are means of normalized task scores",
            "document-quality scores are reported only and do not affect pass/fail",
        ),
    )

    optimized_dir = out / "optimized"
    if decision.verdict is Verdict.RETAIN:
        export_optimized(pkg, optimized, optimized_dir)
    elif optimized_dir.exists():
        if (optimized_dir / OPTIMIZED_MARKER).exists():
            shutil.rmtree(optimized_dir)  # stale output of an earlier run
        else:
            logger.warning("%s exists and was not written by this tool; leaving it", optimized_dir)

    written = emit_report(report, out, set(cfg.formats), history=history, figures=figures)
    finished = time.time()
    meta = {
        "tool_version": TOOL_VERSION,
        "started_at": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "finished_at": _dt.datetime.fromtimestamp(finished, _dt.timezone.utc).isoformat(),
        "duration_s": round(finished - started, 3),
        "skill_dir": str(Path(cfg.skill_dir).resolve()),
        "output_dir": str(out.resolve()),
        "python": platform.python_version(),
        "platform": platform.platform(),
        "env_policy": ENV_POLICY,
        "record_durations_ms": {f"{r.task_id}:{r.skill_version}": r.duration_ms for r in log.records},
        "written": sorted(str(p.relative_to(out)) for p in written),
    }
    (out / "run.meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    logger.info("verdict: %s", decision.justification)
    return report
