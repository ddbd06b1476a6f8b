from __future__ import annotations

import pytest

from skillevo.exec_engine import (
    OPTIMIZED,
    ORIGINAL,
    ComparativeRunLog,
    ExecLimits,
    Mode,
    check_environment,
    criterion_draw,
    execute_task,
    execute_task_real,
    execute_task_virtual,
    frozen_seed_for,
    keyword_coverage,
    pass_probability,
    run_comparative,
)
from skillevo.hashing import fnv1a_64, hash_unit
from skillevo.skill_model import parse_skill_package
from skillevo.task_gen import CriterionKind, Split, Task, Tier, ValidationCriterion


def _crit(keywords=("alpha",), where="stdout", target="x"):
    return ValidationCriterion(CriterionKind.KEYWORD_PRESENT, target, where, tuple(keywords))


def _task(tid="t-01", context=(), criteria=None, command_index=None):
    return Task(tid, Split.TEST, Tier.STANDARD, "do it", tuple(context), criteria or (_crit(),), command_index=command_index)


def _script_skill(make_skill, command: str, script: str = "", name: str = "s"):
    files = {"SKILL.md": f"# S\n\nRuns things.\n\n```bash\n{command}\n```\n"}
    files["run.sh"] = script or "echo hi\n"
    return parse_skill_package(make_skill(files, name=name))


def test_real_run_captures_outputs_and_artifacts(fixture_skill, tmp_path):
    pkg = parse_skill_package(fixture_skill("weather"))
    crit = ValidationCriterion(CriterionKind.KEYWORD_PRESENT, "mean", "file:a_out.txt", ("output",))
    task = _task(context=[("a.txt", "s,0,10\ns,1,20\n")], criteria=(crit,))
    root = tmp_path / "ws"
    root.mkdir()
    rec = execute_task_real(pkg, task, ExecLimits(workspace_root=str(root)))
    assert rec.error is None and rec.exit_code == 0
    assert '"mean": 15.0' in rec.stdout
    assert [a.path for a in rec.artifacts] == ["a_out.txt"]
    assert dict(rec.captured_files)["a_out.txt"] == "mean=15.00\n"
    assert list(root.iterdir()) == []


def test_nonzero_exit_keeps_output(make_skill):
    pkg = _script_skill(make_skill, "sh run.sh", "echo partial; echo bad >&2; exit 4\n")
    rec = execute_task_real(pkg, _task())
    assert rec.exit_code == 4 and rec.error.error_class == "NonZeroExit"
    assert rec.stdout == "partial\n" and rec.stderr == "bad\n"
    assert rec.error.partial_output_preserved


def test_timeout_kills_process_group(make_skill):
    pkg = _script_skill(make_skill, "sh run.sh", "echo started; sleep 30 & sleep 30\n")
    rec = execute_task_real(pkg, _task(), ExecLimits(timeout_ms=300))
    assert rec.error.error_class == "Timeout" and rec.exit_code is None
    assert rec.stdout == "started\n"
    assert rec.duration_ms < 5000


def test_signal_is_a_crash(make_skill):
    pkg = _script_skill(make_skill, "sh run.sh", "kill -9 $$\n")
    rec = execute_task_real(pkg, _task())
    assert rec.error.error_class == "Crash"


def test_output_cap_truncates(make_skill):
    pkg = _script_skill(make_skill, "sh run.sh", "head -c 5000 /dev/zero | tr '\\\\0' x\n")
    rec = execute_task_real(pkg, _task(), ExecLimits(max_output_bytes=100))
    assert rec.truncated and len(rec.stdout) == 100


def test_short_circuit_after_failure(make_skill):
    files = {"SKILL.md": "# S\n\nTwo steps.\n\n```bash\nfalse\necho second\n```\n", "x.sh": ""}
    pkg = parse_skill_package(make_skill(files))
    rec = execute_task_real(pkg, _task())
    assert rec.error.error_class == "NonZeroExit" and "second" not in rec.stdout


def test_command_index_selects_one_command(make_skill):
    files = {"SKILL.md": "# S\n\nTwo.\n\n```bash\necho one\necho two\n```\n", "x.sh": ""}
    pkg = parse_skill_package(make_skill(files))
    assert execute_task_real(pkg, _task(command_index=3)).stdout == "two\n"


def test_instruction_only_and_missing_command(fixture_skill, make_skill):
    guide = parse_skill_package(fixture_skill("notes_guide"))
    rec = execute_task_real(guide, _task())
    assert rec.error is None and rec.stdout == guide.instruction
    pkg = parse_skill_package(make_skill({"SKILL.md": "# S\n\nNo commands.\n", "lib.xyz.py": "x = 1\n"}))
    pkg = pkg.with_code_files(pkg.code_files).with_commands(())
    # inferred interpreter command still exists for .py files
    assert execute_task_real(pkg, _task()).commands


def test_escaping_fixture_becomes_error_record(fixture_skill):
    pkg = parse_skill_package(fixture_skill("weather"))
    rec = execute_task(pkg, _task(context=[("../evil.txt", "x")]), Mode.REAL, version=ORIGINAL)
    assert rec.error is not None and "escapes" in rec.error.message


def test_virtual_formula():
    seed = frozen_seed_for("Doc about alpha.")
    assert seed == fnv1a_64(b"Doc about alpha.").to_bytes(8, "big")
    assert criterion_draw(seed, "t-01", 2) == hash_unit(seed + b"\x1ft-01\x1f2")
    assert pass_probability(0.0) == pytest.approx(0.3) and pass_probability(1.0) == pytest.approx(0.9)
    assert keyword_coverage(["Alpha", "beta"], "alpha only") == 0.5
    assert keyword_coverage([], "x") == 0.0
    task = _task(criteria=(_crit(("alpha",)), _crit(("zeta",))))
    rec, outcome = execute_task_virtual(seed, "Doc about alpha.", task)
    assert rec.mode is Mode.VIRTUAL and rec.virtual_outcome == outcome
    for d in outcome.per_criterion:
        assert d.passed == (d.draw < pass_probability(d.keyword_coverage))
    again, _ = execute_task_virtual(seed, "Doc about alpha.", task)
    assert again.fingerprint() == rec.fingerprint()


def test_virtual_requires_seed(fixture_skill):
    pkg = parse_skill_package(fixture_skill("weather"))
    rec = execute_task(pkg, _task(), Mode.VIRTUAL, version=ORIGINAL)
    assert rec.error is not None


def test_environment_report(fixture_skill, make_skill):
    assert check_environment(parse_skill_package(fixture_skill("weather"))).missing == ()
    pkg = _script_skill(make_skill, "no-such-program-xyz --go")
    env = check_environment(pkg)
    assert "no-such-program-xyz" in env.missing and "sh" in env.present


def test_comparative_log_round_trip(fixture_skill, tmp_path):
    pkg = parse_skill_package(fixture_skill("weather"))
    tasks = [_task(f"t-{i}", context=[(f"f{i}.txt", f"s,0,{i}\n")]) for i in range(3)]
    log = run_comparative(pkg, pkg, tasks, Mode.REAL, parallelism=2)
    assert [r.skill_version for r in log.records] == [ORIGINAL, OPTIMIZED] * 3
    assert log.summary[ORIGINAL].total == 3 and log.summary[OPTIMIZED].success_rate == 1.0
    back = ComparativeRunLog.read_jsonl(log.write_jsonl(tmp_path / "log.jsonl"))
    assert back == log
    with pytest.raises(ValueError):
        run_comparative(pkg, pkg, [], Mode.REAL)
