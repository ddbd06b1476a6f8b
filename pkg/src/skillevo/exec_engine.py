"""Running tasks against a skill version.

Real mode copies the skill and the task's fixtures into a fresh temporary
directory, runs the task's command there and deletes the directory before
returning. Virtual mode never runs anything: each criterion passes when a
hash-derived draw falls below a probability that grows with how many of the
criterion's concept keywords the instruction mentions.

Failures never raise out of this module; they come back as records with
``error`` set.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import shutil
import signal
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Iterable

from .hashing import digest_hex, fnv1a_64, hash_unit
from .serde import from_jsonable, to_jsonable
from .skill_model import INTERPRETERS, SkillPackage, SkillType, effective_commands, materialize
from .task_gen import Task

logger = logging.getLogger(__name__)

WORKSPACE_PREFIX = "skillevo-ws-"
SHELL_BUILTINS = frozenset(
    "cd export source . set unset alias echo printf test [ true false exit read eval exec pwd".split()
)
ENV_POLICY = "inherit-parent"



class Mode(str, enum.Enum):
    REAL = "real"
    VIRTUAL = "virtual"


@dataclass(frozen=True)
class ExecLimits:
    timeout_ms: int = 30_000
    max_output_bytes: int = 1 << 20
    workspace_root: str | None = None


@dataclass(frozen=True)
class Artifact:
    path: str
    size: int
    digest: str


@dataclass(frozen=True)
class ExecError:
    error_class: str
    message: str
    partial_output_preserved: bool


@dataclass(frozen=True)
class CriterionDraw:
    index: int
    keyword_coverage: float
    draw: float
    passed: bool


@dataclass(frozen=True)
class VirtualOutcome:
    task_id: str
    per_criterion: tuple[CriterionDraw, ...]


@dataclass(frozen=True)
class ExecutionRecord:
    task_id: str
    skill_version: str
    mode: Mode
    exit_code: int | None
    stdout: str
    stderr: str
    artifacts: tuple[Artifact, ...]
    duration_ms: float
    error: ExecError | None = None
    truncated: bool = False
    commands: tuple[str, ...] = ()
    # text of files named by file-content criteria, captured before the workspace is purged
    captured_files: tuple[tuple[str, str], ...] = ()
    virtual_outcome: VirtualOutcome | None = None

    def fingerprint(self) -> dict:
        """Everything except wall-clock duration."""
        data = to_jsonable(self)
        data.pop("duration_ms")
        return data

    def to_json(self) -> str:
        return json.dumps(to_jsonable(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> ExecutionRecord:
        return from_jsonable(cls, data)


@dataclass(frozen=True)
class EnvReport:
    required: tuple[str, ...]
    present: tuple[str, ...]
    missing: tuple[str, ...]


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------


def _program_of(raw: str) -> str | None:
    for token in raw.split():
        if "=" in token and not token.startswith(("-", "/", ".")):
            continue  # FOO=bar prefix assignments
        return token
    return None


INTERPRETER_ALIASES = {"python": ("python3",)}


def check_environment(pkg: SkillPackage) -> EnvReport:
    required: list[str] = []
    from_commands: set[str] = set()
    for cmd in pkg.commands:
        program = _program_of(cmd.raw)
        if program and program not in required:
            required.append(program)
            from_commands.add(program)
    for path, _ in pkg.code_files:
        interpreter = INTERPRETERS.get(PurePosixPath(path).suffix.lower())
        if interpreter and interpreter not in required:
            required.append(interpreter)
    present, missing = [], []
    for program in required:
        # an inferred interpreter may be satisfied by an equivalent binary; a documented one may not
        aliases = () if program in from_commands else INTERPRETER_ALIASES.get(program, ())
        if program in SHELL_BUILTINS or any(shutil.which(p) for p in (program, *aliases)):
            present.append(program)
        elif "/" in program and (Path(pkg.root) / program).exists():
            present.append(program)  # script shipped inside the package
        else:
            missing.append(program)
    return EnvReport(tuple(required), tuple(present), tuple(missing))


# ---------------------------------------------------------------------------
# real mode
# ---------------------------------------------------------------------------


def _snapshot(root: Path) -> dict[str, str]:
    out = {}
    for dirpath, _, filenames in os.walk(root):
        for fname in filenames:
            p = Path(dirpath) / fname
            try:
                out[p.relative_to(root).as_posix()] = digest_hex(p.read_bytes())
            except OSError:
                continue
    return out


def _safe_relpath(rel: str) -> PurePosixPath:
    p = PurePosixPath(rel)
    if p.is_absolute() or ".." in p.parts or not p.parts:
        raise ValueError(f"fixture path escapes the workspace: {rel!r}")
    return p


def _decode_capped(data: bytes, cap: int) -> tuple[str, bool]:
    if len(data) > cap:
        return data[:cap].decode("utf-8", errors="replace"), True
    return data.decode("utf-8", errors="replace"), False


_SIGNALS = frozenset(int(s) for s in signal.Signals)


def _run_one(raw: str, cwd: Path, timeout_s: float) -> tuple[int | None, bytes, bytes, ExecError | None]:
    try:
        proc = subprocess.Popen(
            raw,
            shell=True,
            cwd=cwd,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
            env=dict(os.environ),
        )
    except OSError as exc:
        return None, b"", str(exc).encode(), ExecError("LaunchError", str(exc), False)
    try:
        out, err = proc.communicate(timeout=timeout_s)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
        msg = f"command exceeded {timeout_s * 1000:.0f} ms and was killed"
        return None, out or b"", err or b"", ExecError("Timeout", msg, True)
    code = proc.returncode
    # the wrapping shell reports a signal death of its child as 128 + signal number
    signum = -code if code < 0 else (code - 128 if code > 128 and code - 128 in _SIGNALS else None)
    if signum is not None:
        return code, out, err, ExecError("Crash", f"terminated by signal {signum}", True)
    if code != 0:
        return code, out, err, ExecError("NonZeroExit", f"exit status {code}", True)
    return code, out, err, None


def _task_commands(pkg: SkillPackage, task: Task) -> tuple[str, ...]:
    commands = effective_commands(pkg)
    if not commands:
        return ()
    if task.command_index is None:
        return tuple(c.raw for c in commands)
    return (commands[task.command_index % len(commands)].raw,)


def execute_task_real(
    pkg: SkillPackage, task: Task, limits: ExecLimits | None = None, version: str = "original"
) -> ExecutionRecord:
    limits = limits or ExecLimits()
    started = time.perf_counter()

    def elapsed() -> float:
        return round((time.perf_counter() - started) * 1000, 3)

    if pkg.skill_type is SkillType.INSTRUCTION_ONLY:
        # document-quality skills: the instruction itself is the observable output
        stdout, truncated = _decode_capped(pkg.instruction.encode(), limits.max_output_bytes)
        return ExecutionRecord(task.id, version, Mode.REAL, 0, stdout, "", (), elapsed(), truncated=truncated)

    commands = _task_commands(pkg, task)
    if not commands:
        err = ExecError("NoCommand", "skill documents no runnable command", False)
        return ExecutionRecord(task.id, version, Mode.REAL, None, "", "", (), elapsed(), error=err)

    out_buf, err_buf = bytearray(), bytearray()
    exit_code: int | None = None
    error: ExecError | None = None
    artifacts: tuple[Artifact, ...] = ()
    captured: list[tuple[str, str]] = []
    workspace: Path | None = None
    try:
        workspace = Path(tempfile.mkdtemp(prefix=WORKSPACE_PREFIX, dir=limits.workspace_root))
        materialize(pkg, workspace)
        for rel, content in task.context:
            target = workspace / _safe_relpath(rel)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")
        before = _snapshot(workspace)
        for raw in commands:
            exit_code, out, err, error = _run_one(raw, workspace, limits.timeout_ms / 1000)
            out_buf += out
            err_buf += err
            if error is not None:
                break
        after = _snapshot(workspace)
        artifacts = tuple(
            Artifact(rel, (workspace / rel).stat().st_size, digest)
            for rel, digest in sorted(after.items())
            if before.get(rel) != digest
        )
        for crit in task.criteria:
            rel = crit.output_file
            if rel is None or any(rel == path for path, _ in captured):
                continue
            path = workspace / _safe_relpath(rel)
            if path.is_file():
                text, _ = _decode_capped(path.read_bytes(), limits.max_output_bytes)
                captured.append((rel, text))
    except Exception as exc:  # fail-safe: anything unexpected becomes an error record
        logger.warning("task %s (%s) failed in harness: %s", task.id, version, exc)
        error = ExecError(type(exc).__name__, str(exc), bool(out_buf or err_buf))
    finally:
        if workspace is not None:
            shutil.rmtree(workspace, ignore_errors=True)

    stdout, t1 = _decode_capped(bytes(out_buf), limits.max_output_bytes)
    stderr, t2 = _decode_capped(bytes(err_buf), limits.max_output_bytes)
    return ExecutionRecord(
        task_id=task.id,
        skill_version=version,
        mode=Mode.REAL,
        exit_code=exit_code,
        stdout=stdout,
        stderr=stderr,
        artifacts=artifacts,
        duration_ms=elapsed(),
        error=error,
        truncated=t1 or t2,
        commands=commands,
        captured_files=tuple(captured),
    )


# ---------------------------------------------------------------------------
# virtual mode
# ---------------------------------------------------------------------------

PASS_FLOOR = 0.3
PASS_CEILING = 0.9


def frozen_seed_for(instruction: str) -> bytes:
    return fnv1a_64(instruction.encode("utf-8")).to_bytes(8, "big")


def pass_probability(coverage: float, floor: float = PASS_FLOOR, ceiling: float = PASS_CEILING) -> float:
    return floor + (ceiling - floor) * coverage


def criterion_draw(frozen_seed: bytes, task_id: str, index: int) -> float:
    return hash_unit(frozen_seed + b"\x1f" + task_id.encode("utf-8") + b"\x1f" + str(index).encode("ascii"))


def keyword_coverage(keywords: Iterable[str], instruction: str) -> float:
    keywords = list(keywords)
    if not keywords:
        return 0.0
    lowered = instruction.lower()
    return sum(1 for k in keywords if k.lower() in lowered) / len(keywords)


def execute_task_virtual(
    frozen_seed: bytes,
    instruction: str,
    task: Task,
    version: str = "original",
    floor: float = PASS_FLOOR,
    ceiling: float = PASS_CEILING,
) -> tuple[ExecutionRecord, VirtualOutcome]:
    if not task.criteria:
        raise ValueError(f"task {task.id} has no criteria")
    started = time.perf_counter()
    draws = []
    lines = []
    for i, crit in enumerate(task.criteria):
        coverage = keyword_coverage(crit.keywords, instruction)
        draw = criterion_draw(frozen_seed, task.id, i)
        passed = draw < pass_probability(coverage, floor, ceiling)
        draws.append(CriterionDraw(i, coverage, draw, passed))
        lines.append(f"criterion {i}: coverage={coverage:.3f} draw={draw:.6f} {'pass' if passed else 'fail'}")
    outcome = VirtualOutcome(task.id, tuple(draws))
    record = ExecutionRecord(
        task_id=task.id,
        skill_version=version,
        mode=Mode.VIRTUAL,
        exit_code=None,
        stdout="\n".join(lines) + "\n",
        stderr="",
        artifacts=(),
        duration_ms=round((time.perf_counter() - started) * 1000, 3),
        virtual_outcome=outcome,
    )
    return record, outcome


def execute_task(
    pkg: SkillPackage,
    task: Task,
    mode: Mode,
    *,
    version: str,
    limits: ExecLimits | None = None,
    frozen_seed: bytes | None = None,
) -> ExecutionRecord:
    """Dispatch to real or virtual execution, converting harness errors into records."""
    try:
        if mode is Mode.VIRTUAL:
            if frozen_seed is None:
                raise ValueError("virtual mode requires a frozen seed")
            record, _ = execute_task_virtual(frozen_seed, pkg.instruction, task, version)
            return record
        return execute_task_real(pkg, task, limits, version)
    except Exception as exc:
        logger.warning("task %s (%s) raised %s", task.id, version, exc)
        return ExecutionRecord(
            task.id, version, mode, None, "", "", (), 0.0,
            error=ExecError(type(exc).__name__, str(exc), False),
        )


# ---------------------------------------------------------------------------
# comparative runs
# ---------------------------------------------------------------------------

ORIGINAL = "original"
OPTIMIZED = "optimized"


@dataclass(frozen=True)
class VersionSummary:
    total: int
    succeeded: int
    success_rate: float


@dataclass(frozen=True)
class RunHeader:
    mode: Mode
    parallelism: int
    env_policy: str
    task_count: int


@dataclass(frozen=True)
class ComparativeRunLog:
    header: RunHeader
    records: tuple[ExecutionRecord, ...]
    summary: dict[str, VersionSummary]

    def for_version(self, version: str) -> list[ExecutionRecord]:
        return [r for r in self.records if r.skill_version == version]

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"header": to_jsonable(self.header), "summary": to_jsonable(self.summary)}) + "\n")
            for record in self.records:
                fh.write(record.to_json() + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path: str | Path) -> ComparativeRunLog:
        lines = [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line.strip()]
        if not lines or "header" not in lines[0]:
            raise ValueError(f"{path}: missing run log header")
        head = lines[0]
        return cls(
            header=from_jsonable(RunHeader, head["header"]),
            records=tuple(ExecutionRecord.from_dict(d) for d in lines[1:]),
            summary=from_jsonable(dict[str, VersionSummary], head["summary"]),
        )


def _summarize(records: Iterable[ExecutionRecord], version: str) -> VersionSummary:
    mine = [r for r in records if r.skill_version == version]
    ok = sum(1 for r in mine if r.error is None)
    return VersionSummary(len(mine), ok, ok / len(mine) if mine else 0.0)


def run_comparative(
    original: SkillPackage,
    optimized: SkillPackage,
    tasks: Iterable[Task],
    mode: Mode = Mode.REAL,
    parallelism: int = 4,
    limits: ExecLimits | None = None,
    frozen_seed: bytes | None = None,
) -> ComparativeRunLog:
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks to run")
    if mode is Mode.VIRTUAL and frozen_seed is None:
        frozen_seed = frozen_seed_for(original.instruction)

    def run_pair(task: Task) -> tuple[ExecutionRecord, ExecutionRecord]:
        # original strictly before optimized within one task
        first = execute_task(original, task, mode, version=ORIGINAL, limits=limits, frozen_seed=frozen_seed)
        second = execute_task(optimized, task, mode, version=OPTIMIZED, limits=limits, frozen_seed=frozen_seed)
        return first, second

    workers = max(1, parallelism)
    if workers == 1:
        pairs = [run_pair(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="skillevo-exec") as pool:
            pairs = list(pool.map(run_pair, tasks))
    records = tuple(r for pair in pairs for r in pair)
    summary = {v: _summarize(records, v) for v in (ORIGINAL, OPTIMIZED)}
    header = RunHeader(mode, workers, ENV_POLICY, len(tasks))
    return ComparativeRunLog(header, records, summary)
