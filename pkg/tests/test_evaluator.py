from __future__ import annotations

import json

import pytest

from skillevo.evaluator import (
    EVIDENCE_CAP,
    CriterionResult,
    MetricsSummary,
    TaskScore,
    Verdict,
    cap_evidence,
    check_criterion,
    compute_metrics,
    decide_retention,
    evaluate_instruction_heuristic,
    evaluate_instruction_llm,
    evaluate_task,
    is_passing,
)
from skillevo.exec_engine import Artifact, ExecError, ExecutionRecord, Mode, execute_task_virtual, frozen_seed_for
from skillevo.llm_gateway import Gateway, GatewayConfig, RecordingTransport
from skillevo.rubric import builtin_rubric
from skillevo.task_gen import CriterionKind, Split, Task, Tier, ValidationCriterion

RUBRIC = builtin_rubric()


def _rec(stdout="", stderr="", artifacts=(), captured=(), error=None, tid="t"):
    return ExecutionRecord(tid, "original", Mode.REAL, 0, stdout, stderr, tuple(artifacts), 1.0,
                           error=error, captured_files=tuple(captured))


def _crit(kind, target, where="stdout"):
    return ValidationCriterion(kind, target, where, ("k",))


def test_file_exists_uses_manifest():
    crit = _crit(CriterionKind.FILE_EXISTS, "out.txt", "file:out.txt")
    assert check_criterion(_rec(artifacts=[Artifact("out.txt", 3, "ab")]), crit).satisfied
    miss = check_criterion(_rec(), crit)
    assert not miss.satisfied and "out.txt" in miss.evidence


def test_keyword_and_regex_checks():
    rec = _rec(stdout='{"a": 1}\nMean value\n', stderr="error: invalid input")
    assert check_criterion(rec, _crit(CriterionKind.KEYWORD_PRESENT, "mean")).satisfied
    assert not check_criterion(rec, _crit(CriterionKind.KEYWORD_PRESENT, "median")).satisfied
    assert check_criterion(rec, _crit(CriterionKind.REGEX_MATCH, r"(?m)^\s*\{")).satisfied
    assert check_criterion(rec, _crit(CriterionKind.REGEX_MATCH, r"invalid", "stderr")).satisfied
    missing = check_criterion(rec, _crit(CriterionKind.KEYWORD_PRESENT, "x", "file:none.txt"))
    assert not missing.satisfied and missing.evidence == "target missing"
    captured = _rec(captured=[("r.txt", "mean=3")])
    assert check_criterion(captured, _crit(CriterionKind.KEYWORD_PRESENT, "mean", "file:r.txt")).satisfied


def test_evidence_cap():
    assert cap_evidence("x" * 10) == "x" * 10
    capped = cap_evidence("y" * 2000)
    assert len(capped) == EVIDENCE_CAP and capped.endswith(" [truncated]")
    task = Task("t", Split.TEST, Tier.STANDARD, "d", (), (_crit(CriterionKind.KEYWORD_PRESENT, "z" * 1000),))
    score = evaluate_task(_rec(), task, RUBRIC)
    assert all(len(r.evidence) <= EVIDENCE_CAP for r in score.per_criterion)


def test_evaluate_task_real_and_virtual():
    crits = (_crit(CriterionKind.KEYWORD_PRESENT, "a"), _crit(CriterionKind.KEYWORD_PRESENT, "b"),
             _crit(CriterionKind.KEYWORD_PRESENT, "c"))
    task = Task("t", Split.TEST, Tier.ADVANCED, "d", (), crits, area="io_formats")
    score = evaluate_task(_rec(stdout="a b"), task, RUBRIC)
    assert (score.points, score.max_points, score.passed) == (2, 3, False)
    assert score.area == "io_formats" and score.rubric_digest == RUBRIC.digest()

    rec, outcome = execute_task_virtual(frozen_seed_for("k"), "k", task)
    vscore = evaluate_task(rec, task, RUBRIC)
    assert [r.satisfied for r in vscore.per_criterion] == [d.passed for d in outcome.per_criterion]
    with pytest.raises(ValueError):
        evaluate_task(_rec(tid="other"), task, RUBRIC)


def test_task_score_invariants():
    with pytest.raises(ValueError):
        TaskScore("t", "v", Tier.STANDARD, (), 3, 2, 1.0, True, 0.7)
    with pytest.raises(ValueError):
        TaskScore("t", "v", Tier.STANDARD, (), 1, 2, 0.5, True, 0.7)
    assert is_passing(0.7000000000000001, 0.7) and is_passing(0.7, 0.7) and not is_passing(0.6999, 0.7)


def _score(tid, tier, sat, thr=0.7):
    return TaskScore.from_results(tid, "v", tier, [CriterionResult(i, s, "") for i, s in enumerate(sat)], thr)


def test_compute_metrics_by_hand():
    scores = [
        _score("a", Tier.STANDARD, [True, True, True]),
        _score("b", Tier.ADVANCED, [True, False]),
        _score("c", Tier.BOUNDARY, [False]),
    ]
    records = [_rec(tid="a"), _rec(tid="b", error=ExecError("NonZeroExit", "x", True)), _rec(tid="c")]
    m = compute_metrics(scores, records)
    assert m.pass_rate == pytest.approx(1 / 3)
    assert m.average_score == pytest.approx(0.5)
    assert m.standard_score == 1.0 and m.advanced_score == pytest.approx(0.25)
    assert m.error_rate == pytest.approx(1 / 3) and m.task_count == 3
    only_std = compute_metrics(scores[:1], records[:1])
    assert only_std.advanced_score is None
    with pytest.raises(ValueError):
        compute_metrics([], [])


def test_decision_rule_edges():
    base = MetricsSummary(0.5, 0.5, None, None, 0.0)
    assert decide_retention(base, base).verdict is Verdict.DISCARD
    assert decide_retention(base, MetricsSummary(0.5, 0.51, None, None, 0.0)).verdict is Verdict.RETAIN
    assert decide_retention(base, MetricsSummary(0.4, 0.9, None, None, 0.0)).verdict is Verdict.DISCARD
    d = decide_retention(base, MetricsSummary(0.75, 0.6, None, None, 0.0))
    for number in ("0.5000", "0.6000", "0.7500"):
        assert number in d.justification


def test_decision_evidence_refs_order():
    o = [_score("a", Tier.STANDARD, [False, False]), _score("b", Tier.STANDARD, [False, True])]
    n = [_score("a", Tier.STANDARD, [True, True]), _score("b", Tier.STANDARD, [False, True])]
    m = MetricsSummary(0, 0, None, None, 0)
    assert decide_retention(m, m, zip(o, n)).evidence_refs == ("a",)


def test_heuristic_document_scores():
    empty = evaluate_instruction_heuristic("", RUBRIC)
    assert [d.score for d in empty.per_dimension] == [0.0] * 8 and empty.overall == 0.0
    doc = "# T\n\n## Usage\n\nFirst do this, then that, next the other.\n\n```bash\ntool --x\n```\n"
    scored = evaluate_instruction_heuristic(doc, RUBRIC)
    assert scored.mode == "heuristic" and scored.overall > 0
    assert all(0 <= d.score <= 100 for d in scored.per_dimension)


def _llm_reply(score=80):
    return json.dumps({"dimensions": [{"name": d.name, "score": score, "evidence": "ok"} for d in RUBRIC.dimensions]})


def test_llm_scores_clamped_and_fallbacks():
    gw = Gateway(GatewayConfig(max_retries=0), RecordingTransport(responses=[_llm_reply(150)]))
    out = evaluate_instruction_llm("# Doc", RUBRIC, gw)
    assert out.mode == "llm" and all(d.score == 100 for d in out.per_dimension) and len(out.warnings) == 8

    offline = evaluate_instruction_llm("# Doc", RUBRIC, Gateway(GatewayConfig(offline=True)))
    assert offline.mode == "heuristic" and "offline" in offline.warnings[0]

    partial = json.dumps({"dimensions": [{"name": RUBRIC.dimensions[0].name, "score": 1, "evidence": ""}]})
    gw = Gateway(GatewayConfig(max_retries=0), RecordingTransport(responses=[partial]))
    assert evaluate_instruction_llm("# Doc", RUBRIC, gw).mode == "heuristic"

    bad_name = json.dumps({"dimensions": [{"name": "Nope", "score": 1, "evidence": ""}]})
    gw = Gateway(GatewayConfig(max_retries=0), RecordingTransport(responses=[bad_name]))
    out = evaluate_instruction_llm("# Doc", RUBRIC, gw)
    assert out.mode == "heuristic" and "schema_invalid" in out.warnings[0]
