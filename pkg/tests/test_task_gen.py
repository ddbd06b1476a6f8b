from __future__ import annotations

import dataclasses

import pytest

from skillevo.llm_gateway import Gateway, GatewayConfig, RecordingTransport
from skillevo.skill_model import CapabilityProfile, extract_capability_profile, parse_skill_package
from skillevo.task_gen import (
    CriterionKind,
    GenerationConfig,
    InsufficientProfile,
    Split,
    Task,
    TaskSuite,
    Tier,
    ValidationCriterion,
    attach_validation_criteria,
    generate_task_suite,
    verify_isolation,
)


@pytest.fixture
def weather(fixture_skill):
    pkg = parse_skill_package(fixture_skill("weather"))
    return pkg, extract_capability_profile(pkg)


def test_default_shape(weather):
    pkg, profile = weather
    suite = generate_task_suite(profile, pkg)
    assert len(suite.train) == 12 and len(suite.test) == 8
    assert sum(t.tier is Tier.STANDARD for t in suite.train) == 6
    assert sum(t.tier is Tier.STANDARD for t in suite.test) == 4
    assert all(t.split is Split.TRAIN for t in suite.train)
    assert all(t.split is Split.TEST for t in suite.test)
    ids = [t.id for t in suite.all_tasks()]
    assert len(set(ids)) == len(ids)
    assert all(t.criteria for t in suite.all_tasks())


def test_seeded_determinism(weather):
    pkg, profile = weather
    a = generate_task_suite(profile, pkg, GenerationConfig(seed=3)).to_json()
    b = generate_task_suite(profile, pkg, GenerationConfig(seed=3)).to_json()
    c = generate_task_suite(profile, pkg, GenerationConfig(seed=4)).to_json()
    assert a == b and a != c


def test_splits_are_isolated(weather):
    pkg, profile = weather
    for seed in range(5):
        suite = generate_task_suite(profile, pkg, GenerationConfig(seed=seed))
        assert verify_isolation(suite) == []
        train_ctx = {name for t in suite.train for name, _ in t.context}
        test_ctx = {name for t in suite.test for name, _ in t.context}
        assert not train_ctx & test_ctx


def test_isolation_detects_containment():
    crit = (ValidationCriterion(CriterionKind.KEYWORD_PRESENT, "x", "stdout", ("x",)),)
    a = Task("a", Split.TRAIN, Tier.STANDARD, "print the report now", (), crit)
    b = Task("b", Split.TEST, Tier.STANDARD, "print the report", (), crit)
    suite = TaskSuite("s", 0, "v", (a,), (b,))
    assert verify_isolation(suite)


def test_suite_json_round_trip(weather, tmp_path):
    pkg, profile = weather
    suite = generate_task_suite(profile, pkg)
    path = suite.write(tmp_path / "tasks.json")
    assert TaskSuite.from_json(path.read_text()) == suite


def test_criteria_rules():
    profile = CapabilityProfile(core_functions=("Summarize station readings",))
    base = Task("demo-train-standard-01", Split.TRAIN, Tier.STANDARD, "x", (), ())
    task = attach_validation_criteria(
        dataclasses.replace(base, description="Read `a.txt`, save the output to `a_out.txt` and return results in JSON format."),
        profile, "demo",
    )
    kinds = {(c.kind, c.where) for c in task.criteria}
    assert (CriterionKind.FILE_EXISTS, "file:a_out.txt") in kinds
    assert (CriterionKind.REGEX_MATCH, "stdout") in kinds
    stdout_kw = [c for c in task.criteria if c.kind is CriterionKind.KEYWORD_PRESENT]
    assert stdout_kw and stdout_kw[0].target == "summarize"

    err = attach_validation_criteria(
        dataclasses.replace(base, description="Feed malformed input and confirm a clear error."), profile, "demo"
    )
    assert any(c.where == "stderr" for c in err.criteria)

    plain = attach_validation_criteria(dataclasses.replace(base, description="Do the thing."), profile, "demo")
    assert [(c.kind, c.target) for c in plain.criteria] == [(CriterionKind.KEYWORD_PRESENT, "demo")]


def test_criterion_validation():
    with pytest.raises(ValueError):
        ValidationCriterion(CriterionKind.KEYWORD_PRESENT, "x", "elsewhere", ("x",))
    with pytest.raises(ValueError):
        ValidationCriterion(CriterionKind.KEYWORD_PRESENT, "x", "stdout", ())
    with pytest.raises(ValueError):
        ValidationCriterion(CriterionKind.KEYWORD_PRESENT, "x", "stdout", ("x",), weight=2)


def test_insufficient_profile(make_skill):
    pkg = parse_skill_package(make_skill({"SKILL.md": "# Only a heading\n"}))
    with pytest.raises(InsufficientProfile):
        generate_task_suite(CapabilityProfile(), pkg)


def test_counts_validated(weather):
    pkg, profile = weather
    with pytest.raises(ValueError):
        generate_task_suite(profile, pkg, GenerationConfig(train_count=1))


def test_model_rephrasing_keeps_required_values(weather):
    pkg, profile = weather
    template = generate_task_suite(profile, pkg, GenerationConfig(train_count=2, test_count=2))
    responses = []
    for task in template.all_tasks():
        # first task drops its backticked values, the rest keep them
        responses.append("Rewritten." if not responses else "Please: " + task.description)
    transport = RecordingTransport(responses=list(responses))
    gw = Gateway(GatewayConfig(max_retries=0), transport)
    suite = generate_task_suite(profile, pkg, GenerationConfig(2, 2, 0, gw))
    assert len(transport.calls) == 4
    assert suite.train[0].description == template.train[0].description
    assert suite.train[1].description.startswith("Please: ")
