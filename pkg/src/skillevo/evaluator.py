"""Scoring execution records, aggregating metrics and deciding retention.

Task scoring awards one point per satisfied validation criterion. The
retention rule keeps the optimized version only when its average score is
strictly higher and its pass rate is no lower.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from statistics import fmean
from typing import Iterable, Sequence

from .exec_engine import ExecutionRecord, Mode
from .llm_gateway import CompletionRequest, Gateway
from .rubric import DocumentView, Rubric, check_item
from .task_gen import CriterionKind, Task, Tier, ValidationCriterion

logger = logging.getLogger(__name__)

EVIDENCE_CAP = 512
TRUNCATION_MARK = " [truncated]"
_CONTEXT_CHARS = 40
_EPS = 1e-12


def cap_evidence(text: str, limit: int = EVIDENCE_CAP) -> str:
    if len(text) <= limit:
        return text
    return text[: limit - len(TRUNCATION_MARK)] + TRUNCATION_MARK


def is_passing(normalized: float, threshold: float) -> bool:
    # inclusive; the epsilon absorbs float noise such as 0.7000000000000001 vs 0.7
    return normalized >= threshold - _EPS


# ---------------------------------------------------------------------------
# task scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionResult:
    index: int
    satisfied: bool
    evidence: str


@dataclass(frozen=True)
class TaskScore:
    task_id: str
    version: str
    tier: Tier
    per_criterion: tuple[CriterionResult, ...]
    points: int
    max_points: int
    normalized: float
    passed: bool
    threshold: float
    rubric_digest: str = ""
    area: str = "core_functions"

    def __post_init__(self) -> None:
        if self.max_points < 1 or not 0 <= self.points <= self.max_points:
            raise ValueError(f"{self.task_id}: points {self.points}/{self.max_points} out of range")
        if self.passed != is_passing(self.normalized, self.threshold):
            raise ValueError(f"{self.task_id}: passed flag disagrees with threshold")

    @classmethod
    def from_results(
        cls,
        task_id: str,
        version: str,
        tier: Tier,
        results: Sequence[CriterionResult],
        threshold: float,
        rubric_digest: str = "",
        area: str = "core_functions",
    ) -> TaskScore:
        points = sum(1 for r in results if r.satisfied)
        normalized = points / len(results) if results else 0.0
        return cls(
            task_id, version, tier, tuple(results), points, max(1, len(results)),
            normalized, is_passing(normalized, threshold), threshold, rubric_digest, area,
        )


def _quote(text: str, start: int, end: int) -> str:
    lo, hi = max(0, start - _CONTEXT_CHARS), min(len(text), end + _CONTEXT_CHARS)
    fragment = text[lo:hi].replace("\n", "\\n")
    return f"...{fragment}..." if (lo > 0 or hi < len(text)) else fragment


def _stream(record: ExecutionRecord, crit: ValidationCriterion) -> str | None:
    if crit.where == "stdout":
        return record.stdout
    if crit.where == "stderr":
        return record.stderr
    return dict(record.captured_files).get(crit.output_file)


def check_criterion(record: ExecutionRecord, crit: ValidationCriterion) -> CriterionResult:
    if crit.kind is CriterionKind.FILE_EXISTS:
        path = crit.output_file or crit.target
        hit = next((a for a in record.artifacts if a.path == path), None)
        if hit:
            return CriterionResult(0, True, f"artifact {hit.path} ({hit.size} bytes, digest {hit.digest})")
        return CriterionResult(0, False, f"no artifact named {path}")
    text = _stream(record, crit)
    if text is None:
        return CriterionResult(0, False, "target missing")
    if crit.kind is CriterionKind.KEYWORD_PRESENT:
        pos = text.lower().find(crit.target.lower())
        if pos >= 0:
            return CriterionResult(0, True, f"{crit.where}: {_quote(text, pos, pos + len(crit.target))}")
        return CriterionResult(0, False, f"{crit.where} lacks {crit.target!r}")
    m = re.search(crit.target, text)
    if m:
        return CriterionResult(0, True, f"{crit.where}: {_quote(text, m.start(), m.end())}")
    return CriterionResult(0, False, f"{crit.where} has no match for {crit.target!r}")


def evaluate_task(record: ExecutionRecord, task: Task, rubric: Rubric) -> TaskScore:
    if record.task_id != task.id:
        raise ValueError(f"record for {record.task_id} scored against task {task.id}")
    results = []
    if record.mode is Mode.VIRTUAL and record.virtual_outcome is not None:
        for draw in record.virtual_outcome.per_criterion:
            evidence = f"virtual: coverage {draw.keyword_coverage:.3f}, draw {draw.draw:.6f}"
            results.append(CriterionResult(draw.index, draw.passed, evidence))
    elif record.mode is Mode.VIRTUAL:
        results = [CriterionResult(i, False, "virtual outcome missing") for i in range(len(task.criteria))]
    else:
        for i, crit in enumerate(task.criteria):
            r = check_criterion(record, crit)
            results.append(CriterionResult(i, r.satisfied, cap_evidence(r.evidence)))
    return TaskScore.from_results(
        task.id, record.skill_version, task.tier, results, rubric.pass_threshold, rubric.digest(), task.area
    )


# ---------------------------------------------------------------------------
# metrics and decisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsSummary:
    pass_rate: float
    average_score: float
    standard_score: float | None
    advanced_score: float | None
    error_rate: float
    task_count: int = 0


def compute_metrics(scores: Sequence[TaskScore], records: Sequence[ExecutionRecord]) -> MetricsSummary:
    if not scores:
        raise ValueError("no task scores to aggregate")
    if len(records) != len(scores):
        raise ValueError("expected one execution record per task score")
    standard = [s.normalized for s in scores if s.tier is Tier.STANDARD]
    advanced = [s.normalized for s in scores if s.tier is not Tier.STANDARD]
    return MetricsSummary(
        pass_rate=sum(1 for s in scores if s.passed) / len(scores),
        average_score=fmean(s.normalized for s in scores),
        standard_score=fmean(standard) if standard else None,
        advanced_score=fmean(advanced) if advanced else None,
        error_rate=sum(1 for r in records if r.error is not None) / len(records),
        task_count=len(scores),
    )


class Verdict(str, enum.Enum):
    RETAIN = "retain"
    DISCARD = "discard"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    justification: str
    evidence_refs: tuple[str, ...] = ()


def decide_retention(
    original: MetricsSummary,
    optimized: MetricsSummary,
    paired: Iterable[tuple[TaskScore, TaskScore]] = (),
) -> Decision:
    better_avg = optimized.average_score > original.average_score
    no_pass_drop = optimized.pass_rate >= original.pass_rate
    verdict = Verdict.RETAIN if (better_avg and no_pass_drop) else Verdict.DISCARD
    justification = (
        f"{verdict.value}: average score {original.average_score:.4f} -> {optimized.average_score:.4f} "
        f"(strictly higher: {str(better_avg).lower()}); pass rate {original.pass_rate:.4f} -> "
        f"{optimized.pass_rate:.4f} (not lower: {str(no_pass_drop).lower()}); rule: retain iff both hold"
    )
    deltas = [(o.task_id, n.normalized - o.normalized) for o, n in paired]
    # tasks that moved, largest change first
    refs = tuple(tid for tid, d in sorted(deltas, key=lambda x: (-abs(x[1]), x[0])) if abs(d) > _EPS)
    return Decision(verdict, justification, refs)


# ---------------------------------------------------------------------------
# document-quality evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DimensionScore:
    name: str
    score: float
    evidence: str


@dataclass(frozen=True)
class DimensionScores:
    per_dimension: tuple[DimensionScore, ...]
    overall: float
    mode: str  # "heuristic" or "llm"
    warnings: tuple[str, ...] = ()


def evaluate_instruction_heuristic(instruction: str, rubric: Rubric) -> DimensionScores:
    view = DocumentView.of(instruction)
    dims = []
    for dim in rubric.dimensions:
        checks = [check_item(item, view) for item in dim.items]
        satisfied = sum(1 for ok, _ in checks if ok)
        lines = [f"{'+' if ok else '-'} {item.text[:60]} ({why})" for item, (ok, why) in zip(dim.items, checks)]
        evidence = f"{satisfied}/{dim.max_points} items satisfied; " + "; ".join(lines)
        dims.append(DimensionScore(dim.name, rubric.scale_max * satisfied / dim.max_points, cap_evidence(evidence)))
    return DimensionScores(tuple(dims), fmean(d.score for d in dims), "heuristic")


def _llm_schema(rubric: Rubric) -> dict:
    return {
        "type": "object",
        "required": ["dimensions"],
        "properties": {
            "dimensions": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["name", "score", "evidence"],
                    "properties": {
                        "name": {"type": "string", "enum": [d.name for d in rubric.dimensions]},
                        "score": {"type": "number"},
                        "evidence": {"type": "string"},
                    },
                },
            }
        },
    }


_LLM_SYSTEM = (
    "You grade agent skill instruction documents. For each rubric dimension return a score "
    "from 0 to {scale:g} and one or two sentences of evidence quoting the document. "
    'Reply with JSON: {{"dimensions": [{{"name": ..., "score": ..., "evidence": ...}}]}}.'
)


def _rubric_prompt(rubric: Rubric) -> str:
    parts = []
    for dim in rubric.dimensions:
        parts.append(f"## {dim.name}")
        parts.extend(f"- {item.text}" for item in dim.items)
    return "\n".join(parts)


def evaluate_instruction_llm(instruction: str, rubric: Rubric, gateway: Gateway | None) -> DimensionScores:
    """Model-graded scores; falls back to the heuristic when the model is unavailable."""

    def fallback(reason: str) -> DimensionScores:
        base = evaluate_instruction_heuristic(instruction, rubric)
        return DimensionScores(base.per_dimension, base.overall, "heuristic", (reason,))

    if gateway is None or gateway.offline:
        return fallback("model unavailable: offline")
    req = CompletionRequest(
        system=_LLM_SYSTEM.format(scale=rubric.scale_max),
        user=f"Rubric:\n{_rubric_prompt(rubric)}\n\nDocument:\n{instruction}",
        schema=_llm_schema(rubric),
    )
    result = gateway.complete(req)
    if not result.ok:
        return fallback(f"model unavailable: {result.reason.value}")
    by_name = {}
    for entry in json.loads(result.content)["dimensions"]:
        by_name.setdefault(entry["name"], entry)
    missing = [d.name for d in rubric.dimensions if d.name not in by_name]
    if missing:
        return fallback(f"model omitted dimensions: {', '.join(missing)}")
    warnings = []
    dims = []
    for dim in rubric.dimensions:
        entry = by_name[dim.name]
        score = float(entry["score"])
        if not 0 <= score <= rubric.scale_max:
            clamped = min(max(score, 0.0), rubric.scale_max)
            warnings.append(f"{dim.name}: score {score:g} outside [0, {rubric.scale_max:g}], clamped to {clamped:g}")
            score = clamped
        dims.append(DimensionScore(dim.name, score, cap_evidence(entry["evidence"])))
    return DimensionScores(tuple(dims), fmean(d.score for d in dims), "llm", tuple(warnings))
