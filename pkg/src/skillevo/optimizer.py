"""Skill optimization across epochs.

Each epoch runs two pathways over the train tasks only:

* instruction pathway: propose a group of instruction variants (variant 0 is
  always the unchanged incumbent), score each on the train set, convert the
  rewards into group-relative advantages and keep the best variant;
* code pathway (code-inclusive skills): rule transforms, then command
  refinement, then failure-driven auto-fix. A step that lowers the train
  score is rolled back.
"""

from __future__ import annotations

import ast
import dataclasses
import enum
import logging
import re
import shlex
import shutil
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from statistics import fmean, pstdev
from typing import Callable, Iterable, Sequence

from .evaluator import TaskScore, evaluate_task
from .exec_engine import WORKSPACE_PREFIX, ExecLimits, ExecutionRecord, Mode, execute_task
from .llm_gateway import CompletionRequest, Gateway
from .rubric import Rubric, builtin_rubric
from .skill_model import HEADING_RE, CommandSpec, SkillPackage, SkillType, effective_commands, lines_outside_code
from .task_gen import Task, TaskSuite

logger = logging.getLogger(__name__)

# observer(channel, text) sees every piece of data the optimizer consumes
Observer = Callable[[str, str], None]


def _noop(channel: str, text: str) -> None:
    pass


class DegenerateBase(ValueError):
    """The instruction to optimize is empty."""


class IssueClass(str, enum.Enum):
    DEPENDENCY_CONFLICT = "DependencyConflict"
    PARAMETER_MISCONFIGURATION = "ParameterMisconfiguration"
    PATH_ERROR = "PathError"
    OTHER = "Other"


@dataclass(frozen=True)
class OptimizerConfig:
    num_epochs: int = 3
    group_size: int = 3
    max_iterations: int = 2
    max_lessons: int = 10
    parallelism: int = 4
    gateway: Gateway | None = None

    def __post_init__(self) -> None:
        if self.num_epochs < 1 or self.max_iterations < 1 or self.parallelism < 1:
            raise ValueError("num_epochs, max_iterations and parallelism must be at least 1")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")


# ---------------------------------------------------------------------------
# train scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainEvaluation:
    mean_score: float
    scores: tuple[TaskScore, ...] = ()
    records: tuple[ExecutionRecord, ...] = ()
    failed_criteria: tuple[str, ...] = ()
    missing_keywords: tuple[str, ...] = ()

    def failing_records(self) -> list[ExecutionRecord]:
        return [r for r in self.records if r.error is not None]

    def failing_task_ids(self) -> set[str]:
        return {s.task_id for s in self.scores if not s.passed}


Scorer = Callable[[SkillPackage], TrainEvaluation]


def make_scorer(
    train: Sequence[Task],
    mode: Mode,
    rubric: Rubric | None = None,
    frozen_seed: bytes | None = None,
    limits: ExecLimits | None = None,
    parallelism: int = 4,
) -> Scorer:
    """Mean normalized train score of a package, memoized on package content."""
    rubric = rubric or builtin_rubric()
    tasks = list(train)
    cache: dict[str, TrainEvaluation] = {}

    def run(pkg: SkillPackage, task: Task) -> tuple[ExecutionRecord, TaskScore]:
        record = execute_task(pkg, task, mode, version="candidate", limits=limits, frozen_seed=frozen_seed)
        return record, evaluate_task(record, task, rubric)

    def score(pkg: SkillPackage) -> TrainEvaluation:
        key = pkg.content_digest()
        if key in cache:
            return cache[key]
        if parallelism > 1 and mode is Mode.REAL:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                pairs = list(pool.map(lambda t: run(pkg, t), tasks))
        else:
            pairs = [run(pkg, t) for t in tasks]
        failed, missing = [], []
        for task, (_, s) in zip(tasks, pairs):
            for result in s.per_criterion:
                if result.satisfied:
                    continue
                crit = task.criteria[result.index]
                text = f"{crit.describe()} (concepts: {', '.join(crit.keywords)})"
                if text not in failed:
                    failed.append(text)
                missing.extend(k for k in crit.keywords if k.lower() not in pkg.instruction.lower())
        result = TrainEvaluation(
            mean_score=fmean(s.normalized for _, s in pairs),
            scores=tuple(s for _, s in pairs),
            records=tuple(r for r, _ in pairs),
            failed_criteria=tuple(failed),
            missing_keywords=tuple(dict.fromkeys(missing)),
        )
        cache[key] = result
        return result

    return score


def _safe_score(scorer: Scorer, pkg: SkillPackage) -> TrainEvaluation:
    try:
        return scorer(pkg)
    except Exception as exc:  # a broken candidate scores zero instead of aborting the epoch
        logger.warning("scoring failed for a candidate: %s", exc)
        return TrainEvaluation(0.0)


# ---------------------------------------------------------------------------
# group-relative selection
# ---------------------------------------------------------------------------


def group_relative_advantages(rewards: Sequence[float]) -> list[float]:
    if len(rewards) < 2:
        raise ValueError("need at least two rewards")
    if max(rewards) == min(rewards):
        return [0.0] * len(rewards)
    mean = fmean(rewards)
    std = pstdev(rewards, mu=mean)
    if std == 0:
        return [0.0] * len(rewards)
    return [(r - mean) / std for r in rewards]


def select_variant(rewards: Sequence[float]) -> int:
    """argmax with the lowest index winning ties."""
    if not rewards:
        raise ValueError("no rewards to select from")
    best = 0
    for i, r in enumerate(rewards):
        if r > rewards[best]:
            best = i
    return best


@dataclass(frozen=True)
class VariantGroup:
    epoch: int
    base_instruction: str
    variant_ids: tuple[str, ...]
    instructions: tuple[str, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    selected: int

    def __post_init__(self) -> None:
        n = len(self.variant_ids)
        if not (n == len(self.instructions) == len(self.rewards) == len(self.advantages)) or n < 2:
            raise ValueError("variant group arrays must have equal length of at least 2")
        if self.selected != select_variant(self.rewards):
            raise ValueError("selected variant is not the lowest-index argmax")

    @property
    def group_size(self) -> int:
        return len(self.variant_ids)


@dataclass(frozen=True)
class Lesson:
    epoch: int
    variant_id: str
    failed_criteria: tuple[str, ...]
    advantage: float
    missing_keywords: tuple[str, ...] = ()


@dataclass
class LessonLedger:
    entries: list[Lesson] = field(default_factory=list)

    @staticmethod
    def _order(lesson: Lesson) -> tuple[int, tuple]:
        parts = re.split(r"(\d+)", lesson.variant_id)
        return lesson.epoch, tuple(int(p) if p.isdigit() else p for p in parts)

    def append(self, lesson: Lesson) -> None:
        if self.entries:
            if self._order(lesson) < self._order(self.entries[-1]):
                raise ValueError("lessons must be appended in (epoch, variant_id) order")
        self.entries.append(lesson)

    def recent_negative(self, limit: int = 10) -> list[Lesson]:
        negative = [e for e in self.entries if e.advantage < 0]
        return negative[-limit:] if limit > 0 else []


# ---------------------------------------------------------------------------
# variant proposal
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectionTransform:
    name: str
    heading: str
    body: str


# one appended section per variant; the wording carries the concept keywords
# that validation criteria look for
SECTION_CATALOG = (
    SectionTransform(
        "error_handling",
        "Error Handling",
        "- On invalid input (missing, empty or malformed files) report a clear error message on "
        "stderr and exit with a nonzero status instead of crashing.\n"
        "- Validate every required argument before doing any work.",
    ),
    SectionTransform(
        "usage_examples",
        "Usage Examples",
        "Example usage with the expected result:\n\n"
        "```bash\n{command}\n```\n\n"
        "- Save results to an output file when a path is given and print a short summary.\n"
        "- Use JSON as the output format when structured results are requested.",
    ),
    SectionTransform(
        "troubleshooting",
        "Troubleshooting",
        "- Error `No such file or directory`: check the input path and create missing output "
        "directories first.\n"
        "- Error about a missing argument: rerun with the flags shown in the usage example.\n"
        "- Input over the size limit: the constraint is reported and the input is truncated.",
    ),
    SectionTransform(
        "inputs_outputs",
        "Inputs and Outputs",
        "- Input: plain text or CSV files in the working directory.\n"
        "- Output format: JSON on stdout; save a copy to an output file when requested.",
    ),
    SectionTransform(
        "limits",
        "Limits and Constraints",
        "- The documented size limit applies to every input; larger inputs are truncated and the "
        "limit is reported.\n"
        "- Each constraint violation is reported with the offending value.",
    ),
    SectionTransform(
        "best_practices",
        "Best Practices",
        "- Run the usage example first to confirm the environment.\n"
        "- Keep inputs small while testing and check the output file after each run.",
    ),
)


def _headings(text: str) -> set[str]:
    found = set()
    for _, line in lines_outside_code(text):
        m = HEADING_RE.match(line)
        if m:
            found.add(m.group(2).strip().lower())
    return found


def _lesson_lines(lessons: Sequence[Lesson]) -> list[str]:
    keywords = list(dict.fromkeys(k for lesson in lessons for k in lesson.missing_keywords))
    if not keywords:
        return []
    return [f"- Earlier attempts missed these topics: {', '.join(keywords)}."]


def _fallback_variants(base: str, lessons: Sequence[Lesson], count: int, example_command: str) -> list[str]:
    present = _headings(base)
    extra = _lesson_lines(lessons)
    fresh = [t for t in SECTION_CATALOG if t.heading.lower() not in present]
    # once the catalog is exhausted, cycle through it with numbered follow-up sections
    order = list(fresh)
    round_no = 2
    while len(order) < count:
        order.extend(
            dataclasses.replace(t, heading=f"{t.heading} ({round_no})")
            for t in SECTION_CATALOG
            if f"{t.heading} ({round_no})".lower() not in present
        )
        round_no += 1
    variants = []
    for transform in order[:count]:
        body = transform.body.format(command=example_command)
        section = "\n".join([f"## {transform.heading}", "", body, *extra])
        variants.append(base.rstrip("\n") + "\n\n" + section + "\n")
    return variants


_VARIANT_SYSTEM = (
    "You improve instruction documents for agent skills. Rewrite the document so an agent "
    "can complete tasks more reliably. Keep every command and file path unchanged. "
    'Reply with JSON: {"variants": ["<full document>", ...]}.'
)


def propose_variants(
    base: str,
    lessons: LessonLedger | Sequence[Lesson],
    group_size: int,
    gateway: Gateway | None = None,
    observer: Observer = _noop,
    max_lessons: int = 10,
    example_command: str = "<command> --help",
) -> list[str]:
    """``group_size`` distinct candidates, each different from ``base``."""
    if not base.strip():
        raise DegenerateBase("cannot optimize an empty instruction")
    if group_size < 2:
        raise ValueError("group_size must be at least 2")
    if isinstance(lessons, LessonLedger):
        recent = lessons.recent_negative(max_lessons)
    else:
        recent = [lesson for lesson in lessons if lesson.advantage < 0][-max_lessons:]
    for lesson in recent:
        observer("lesson", "\n".join([lesson.variant_id, *lesson.failed_criteria]))

    candidates: list[str] = []
    if gateway is not None and not gateway.offline:
        lesson_text = "\n".join(f"- {c}" for lesson in recent for c in lesson.failed_criteria) or "- none yet"
        user = (
            f"Produce {group_size} distinct improved versions of this document.\n\n"
            f"Checks that failed in earlier attempts:\n{lesson_text}\n\nDocument:\n{base}"
        )
        observer("prompt", _VARIANT_SYSTEM + "\n" + user)
        schema = {
            "type": "object",
            "required": ["variants"],
            "properties": {"variants": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
        }
        result = gateway.complete(CompletionRequest(_VARIANT_SYSTEM, user, schema=schema))
        if result.ok:
            for text in result.json()["variants"]:
                if text.strip() and text != base and text not in candidates:
                    candidates.append(text)
        else:
            logger.info("variant proposal falling back to templates (%s)", result.reason.value)
    if len(candidates) < group_size:
        for text in _fallback_variants(base, recent, group_size + len(candidates), example_command):
            if text not in candidates and len(candidates) < group_size:
                candidates.append(text)
    return candidates[:group_size]


# ---------------------------------------------------------------------------
# rule-driven code transforms
# ---------------------------------------------------------------------------

MARK_GUARD = "# skillevo: entry-guard"
MARK_ARGS = "# skillevo: arg-check"
MARK_MEMO = "# skillevo: memo-read"
RULE_CATALOG = ("entry_guard", "arg_validation", "memoize_reads")


@dataclass(frozen=True)
class ChangeEntry:
    file: str
    rule: str
    status: str  # "applied" or "skipped"
    detail: str = ""


def _compiles(text: str, path: str) -> bool:
    try:
        compile(text, path, "exec")
        return True
    except (SyntaxError, ValueError):
        return False


def _import_insert_line(text: str) -> int:
    """0-based line index just after the leading docstring/import block."""
    tree = ast.parse(text)
    end = 0
    for i, node in enumerate(tree.body):
        is_doc = i == 0 and isinstance(node, ast.Expr) and isinstance(getattr(node, "value", None), ast.Constant)
        if is_doc or isinstance(node, (ast.Import, ast.ImportFrom)):
            end = node.end_lineno
        else:
            break
    return end


_MAIN_RE = re.compile(r"""^if\s+__name__\s*==\s*['"]__main__['"]\s*:\s*(#.*)?$""")


def _rule_entry_guard(text: str) -> tuple[str | None, str]:
    if MARK_GUARD in text:
        return None, "guard marker already present"
    lines = text.splitlines()
    start = next((i for i, line in enumerate(lines) if _MAIN_RE.match(line)), None)
    if start is None:
        return None, "no __main__ entry point"
    end = start + 1
    while end < len(lines) and (not lines[end].strip() or lines[end][:1] in (" ", "\t")):
        end += 1
    while end > start + 1 and not lines[end - 1].strip():
        end -= 1
    body = lines[start + 1 : end]
    if not body:
        return None, "empty entry point"
    wrapped = [
        f'if __name__ == "__main__":  {MARK_GUARD}',
        "    try:",
        *[("    " + line) if line.strip() else line for line in body],
        "    except KeyboardInterrupt:",
        "        raise SystemExit(130)",
        "    except Exception as _skillevo_exc:",
        "        import sys as _skillevo_sys",
        '        print(f"error: {type(_skillevo_exc).__name__}: {_skillevo_exc}", file=_skillevo_sys.stderr)',
        "        raise SystemExit(1)",
    ]
    out = lines[:start] + wrapped + lines[end:]
    return "\n".join(out) + ("\n" if text.endswith("\n") else ""), f"wrapped entry point at line {start + 1}"


_ARGV_RE = re.compile(r"\bsys\.argv\[(\d+)\]")


def _rule_arg_validation(text: str) -> tuple[str | None, str]:
    if MARK_ARGS in text:
        return None, "argument check marker already present"
    uses = [(i, line, m) for i, line in enumerate(text.splitlines()) for m in _ARGV_RE.finditer(line)]
    if not uses:
        return None, "no positional argument reads"
    needed = max(int(m.group(1)) for _, _, m in uses)
    if needed == 0:
        return None, "only sys.argv[0] is read"
    lines = text.splitlines()
    first = uses[0][0]
    indent = re.match(r"[ \t]*", lines[first]).group(0)
    guard = [
        f"{indent}if len(sys.argv) <= {needed}:  {MARK_ARGS}",
        f'{indent}    print("error: missing required argument {needed}; usage: " + sys.argv[0] + " ARG...", file=sys.stderr)',
        f"{indent}    sys.exit(2)",
    ]
    out = lines[:first] + guard + lines[first:]
    return "\n".join(out) + ("\n" if text.endswith("\n") else ""), f"checks {needed} argument(s) before line {first + 1}"


_READ_PATTERNS = (
    re.compile(r"""\bopen\((?P<arg>(['"])[^'"\n]+\2)\)\.read\(\)"""),
    re.compile(r"""\b(?:pathlib\.)?Path\((?P<arg>(['"])[^'"\n]+\2)\)\.read_text\(\)"""),
)


def _rule_memoize_reads(text: str) -> tuple[str | None, str]:
    if MARK_MEMO in text:
        return None, "memoization marker already present"
    counts: Counter[str] = Counter()
    for pattern in _READ_PATTERNS:
        for m in pattern.finditer(text):
            counts[m.group("arg")] += 1
    repeated = {arg for arg, n in counts.items() if n >= 2}
    if not repeated:
        return None, "no repeated identical reads"

    def replace(m: re.Match) -> str:
        return f"_skillevo_read({m.group('arg')})" if m.group("arg") in repeated else m.group(0)

    new = text
    for pattern in _READ_PATTERNS:
        new = pattern.sub(replace, new)
    helper = [
        f"import functools as _skillevo_functools  {MARK_MEMO}",
        "",
        "",
        "@_skillevo_functools.lru_cache(maxsize=None)",
        "def _skillevo_read(path):",
        "    with open(path, encoding='utf-8') as fh:",
        "        return fh.read()",
        "",
    ]
    lines = new.splitlines()
    at = _import_insert_line(new)
    out = lines[:at] + helper + lines[at:]
    return "\n".join(out) + ("\n" if new.endswith("\n") else ""), f"memoized {len(repeated)} repeated read(s)"


_RULES: dict[str, Callable[[str], tuple[str | None, str]]] = {
    "entry_guard": _rule_entry_guard,
    "arg_validation": _rule_arg_validation,
    "memoize_reads": _rule_memoize_reads,
}


def apply_rule_optimizations(
    code_files: Sequence[tuple[str, str]],
) -> tuple[tuple[tuple[str, str], ...], tuple[ChangeEntry, ...]]:
    out: list[tuple[str, str]] = []
    log: list[ChangeEntry] = []
    for path, text in code_files:
        if PurePosixPath(path).suffix != ".py":
            log.append(ChangeEntry(path, "*", "skipped", "no rules for this file type"))
            out.append((path, text))
            continue
        if not _compiles(text, path):
            log.append(ChangeEntry(path, "*", "skipped", "file does not compile"))
            out.append((path, text))
            continue
        current = text
        for name in RULE_CATALOG:
            new, detail = _RULES[name](current)
            if new is None:
                log.append(ChangeEntry(path, name, "skipped", detail))
            elif not _compiles(new, path):
                log.append(ChangeEntry(path, name, "skipped", "transform would not compile"))
            else:
                current = new
                log.append(ChangeEntry(path, name, "applied", detail))
        out.append((path, current))
    return tuple(out), tuple(log)


# ---------------------------------------------------------------------------
# command refinement
# ---------------------------------------------------------------------------


def _package_paths(pkg: SkillPackage) -> list[str]:
    return [p for p, _ in pkg.code_files] + [p for p, _ in pkg.auxiliary_docs]


def _resolve_path(token: str, paths: Sequence[str]) -> str | None:
    if "=" in token or token.startswith("-"):
        return None
    clean = token[2:] if token.startswith("./") else token
    if clean in paths or not PurePosixPath(clean).suffix:
        return None
    matches = [p for p in paths if p.endswith("/" + clean) or PurePosixPath(p).name == clean]
    return matches[0] if len(matches) == 1 else None


def normalize_command_paths(cmd: CommandSpec, paths: Sequence[str]) -> CommandSpec:
    try:
        tokens = shlex.split(cmd.raw)
    except ValueError:
        return cmd
    changed = False
    for i, token in enumerate(tokens):
        resolved = _resolve_path(token, paths)
        if resolved:
            tokens[i] = resolved
            changed = True
    if not changed:
        return cmd
    return CommandSpec.from_raw(shlex.join(tokens), cmd.source_block_index)


_REFINE_SYSTEM = (
    "You fix shell commands documented in an agent skill so they run from the skill's root "
    "directory. Keep the program of each command unchanged. "
    'Reply with JSON: {"commands": ["...", ...]} in the same order.'
)


def refine_commands(
    pkg: SkillPackage, gateway: Gateway | None = None, observer: Observer = _noop
) -> list[CommandSpec]:
    commands = list(pkg.commands)
    if not commands:
        return []
    paths = _package_paths(pkg)
    if gateway is not None and not gateway.offline:
        user = "Files: " + ", ".join(paths) + "\nCommands:\n" + "\n".join(c.raw for c in commands)
        user += f"\n\nInstruction:\n{pkg.instruction}"
        observer("prompt", _REFINE_SYSTEM + "\n" + user)
        schema = {
            "type": "object",
            "required": ["commands"],
            "properties": {"commands": {"type": "array", "items": {"type": "string"}}},
        }
        result = gateway.complete(CompletionRequest(_REFINE_SYSTEM, user, schema=schema))
        if result.ok:
            proposed = result.json()["commands"]
            if len(proposed) == len(commands):
                merged = []
                for old, new in zip(commands, proposed):
                    # only accept rewrites that keep the same program
                    if new.strip() and new.split()[0] == old.program:
                        merged.append(CommandSpec.from_raw(new, old.source_block_index))
                    else:
                        merged.append(old)
                commands = merged
    return [normalize_command_paths(c, paths) for c in commands]


# ---------------------------------------------------------------------------
# auto-fix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixAttempt:
    iteration: int
    issue_class: IssueClass
    patch_description: str
    resulting_train_score: float


ISSUE_PATTERNS: tuple[tuple[IssueClass, re.Pattern], ...] = (
    (IssueClass.DEPENDENCY_CONFLICT, re.compile(
        r"ModuleNotFoundError|ImportError|No module named|command not found|: not found\b|"
        r"VersionConflict|requires .+ but .+ is installed|incompatible version", re.I)),
    (IssueClass.PARAMETER_MISCONFIGURATION, re.compile(
        r"the following arguments are required|unrecognized arguments|invalid choice|"
        r"missing (?:required )?argument|usage:|IndexError: list index out of range|invalid (?:option|value)", re.I)),
    (IssueClass.PATH_ERROR, re.compile(
        r"No such file or directory|FileNotFoundError|NotADirectoryError|cannot access|"
        r"can't open file|does not exist|Permission denied", re.I)),
)


def classify_failure(record: ExecutionRecord) -> IssueClass:
    text = record.stderr + "\n" + (record.error.message if record.error else "")
    for issue, pattern in ISSUE_PATTERNS:
        if pattern.search(text):
            return issue
    return IssueClass.OTHER


_MISSING_PROGRAM_RE = re.compile(r"(?:^|\s)([\w.+-]+): (?:command )?not found", re.M)
_MISSING_PATH_RES = (
    re.compile(r"No such file or directory: '([^']+)'"),
    re.compile(r"can't open file '([^']+)'"),
    re.compile(r"(?:^|\s)([\w./-]+): No such file or directory", re.M),
    re.compile(r"No such file or directory:\s*(\S+)"),
)
_WORKSPACE_PATH_RE = re.compile(re.escape(WORKSPACE_PREFIX) + r"[^/]+/(.+)")
_REQUIRED_ARGS_RE = re.compile(r"the following arguments are required: (.+)")
_UNRECOGNIZED_RE = re.compile(r"unrecognized arguments: (.+)")


def _fix_dependency(pkg: SkillPackage, records: Sequence[ExecutionRecord]) -> tuple[SkillPackage | None, str]:
    missing = {m.group(1) for r in records for m in _MISSING_PROGRAM_RE.finditer(r.stderr)}
    substitutes = {"python": "python3", "pip": "pip3"}
    for program in sorted(missing):
        alt = substitutes.get(program)
        if alt and shutil.which(alt):
            commands = effective_commands(pkg)
            new = tuple(
                CommandSpec.from_raw(re.sub(rf"(^|&&\s*|;\s*){re.escape(program)}\b", rf"\g<1>{alt}", c.raw), c.source_block_index)
                for c in commands
            )
            if new != commands:
                return pkg.with_commands(new), f"replaced missing program {program!r} with {alt!r}"
    modules = sorted({m.group(1) for r in records for m in re.finditer(r"No module named '([^']+)'", r.stderr)})
    if modules:
        return None, f"missing module(s) {', '.join(modules)}; installation is out of scope"
    return None, "no catalogued dependency patch applies"


def _missing_paths(records: Sequence[ExecutionRecord]) -> list[str]:
    found: list[str] = []
    for r in records:
        for pattern in _MISSING_PATH_RES:
            for m in pattern.finditer(r.stderr):
                path = m.group(1).strip("'\"")
                # errors quote absolute paths inside the throwaway workspace
                inside = _WORKSPACE_PATH_RE.search(path)
                if inside:
                    path = inside.group(1)
                if path and not path.startswith("/") and path not in found:
                    found.append(path)
    return found


def _ensure_dir_patch(text: str, directory: str) -> str | None:
    marker = f"# skillevo: ensure-dir {directory}"
    if marker in text or not _compiles(text, "<patch>"):
        return None
    lines = text.splitlines()
    at = _import_insert_line(text)
    patch = [f"import os as _skillevo_os  {marker}", f"_skillevo_os.makedirs({directory!r}, exist_ok=True)"]
    new = "\n".join(lines[:at] + patch + lines[at:]) + ("\n" if text.endswith("\n") else "")
    return new if _compiles(new, "<patch>") else None


def _fix_path(pkg: SkillPackage, records: Sequence[ExecutionRecord]) -> tuple[SkillPackage | None, str]:
    paths = _package_paths(pkg)
    for missing in _missing_paths(records):
        # a documented script that actually lives in a subdirectory
        resolved = _resolve_path(missing, paths)
        if resolved:
            commands = tuple(normalize_command_paths(c, paths) for c in effective_commands(pkg))
            if commands != effective_commands(pkg):
                return pkg.with_commands(commands), f"pointed commands at {resolved}"
        # an output directory that is never created
        directory = missing.rstrip("/") if missing.endswith("/") else str(PurePosixPath(missing).parent)
        if directory in ("", "."):
            continue
        needle = directory.rstrip("/")
        for path, text in pkg.code_files:
            if PurePosixPath(path).suffix == ".py" and needle in text:
                patched = _ensure_dir_patch(text, needle)
                if patched:
                    files = tuple((p, patched if p == path else t) for p, t in pkg.code_files)
                    return pkg.with_code_files(files), f"create directory {needle!r} at start of {path}"
        commands = effective_commands(pkg)
        new = tuple(
            c if c.raw.startswith(f"mkdir -p {shlex.quote(needle)} && ")
            else CommandSpec.from_raw(f"mkdir -p {shlex.quote(needle)} && {c.raw}", c.source_block_index)
            for c in commands
        )
        if new != commands:
            return pkg.with_commands(new), f"create directory {needle!r} before running commands"
    return None, "no catalogued path patch applies"


def _fix_parameters(pkg: SkillPackage, records: Sequence[ExecutionRecord]) -> tuple[SkillPackage | None, str]:
    commands = list(effective_commands(pkg))
    for r in records:
        m = _REQUIRED_ARGS_RE.search(r.stderr)
        if m:
            for flag in re.findall(r"--[\w-]+", m.group(1)):
                example = re.search(rf"{re.escape(flag)}[ =](\S+)", pkg.instruction)
                if not example:
                    continue
                value = example.group(1).strip("`'\"")
                commands = [
                    c if flag in c.raw else CommandSpec.from_raw(f"{c.raw} {flag} {shlex.quote(value)}", c.source_block_index)
                    for c in commands
                ]
                return pkg.with_commands(tuple(commands)), f"added documented flag {flag} {value}"
        m = _UNRECOGNIZED_RE.search(r.stderr)
        if m:
            bad = m.group(1).split()
            new = []
            for c in commands:
                tokens = [t for t in shlex.split(c.raw) if t not in bad]
                new.append(CommandSpec.from_raw(shlex.join(tokens), c.source_block_index))
            if new != commands:
                return pkg.with_commands(tuple(new)), f"removed unrecognized argument(s) {' '.join(bad)}"
    return None, "no catalogued parameter patch applies"


_PATCHERS = {
    IssueClass.DEPENDENCY_CONFLICT: _fix_dependency,
    IssueClass.PATH_ERROR: _fix_path,
    IssueClass.PARAMETER_MISCONFIGURATION: _fix_parameters,
}
_PRIORITY = (IssueClass.DEPENDENCY_CONFLICT, IssueClass.PATH_ERROR, IssueClass.PARAMETER_MISCONFIGURATION)


def auto_fix(
    pkg: SkillPackage,
    failures: Sequence[ExecutionRecord],
    max_iterations: int,
    scorer: Scorer,
    observer: Observer = _noop,
) -> tuple[SkillPackage, list[FixAttempt]]:
    """Classify failures, patch, re-score; return the best package seen."""
    if not failures:
        raise ValueError("auto_fix needs at least one failure")
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    best_pkg, best = pkg, _safe_score(scorer, pkg)
    target_ids = {r.task_id for r in failures}
    current = list(failures)
    attempts: list[FixAttempt] = []
    for iteration in range(1, max_iterations + 1):
        for r in current:
            observer("fix_analysis", f"{r.task_id}\n{r.stderr}")
        classes = Counter(classify_failure(r) for r in current)
        issue = next((c for c in _PRIORITY if classes.get(c)), IssueClass.OTHER)
        if issue is IssueClass.OTHER:
            attempts.append(FixAttempt(iteration, issue, "unrecognized failure; no patch applied", best.mean_score))
            break
        relevant = [r for r in current if classify_failure(r) is issue]
        patched, description = _PATCHERS[issue](best_pkg, relevant)
        if patched is None:
            attempts.append(FixAttempt(iteration, issue, description, best.mean_score))
            continue
        result = _safe_score(scorer, patched)
        attempts.append(FixAttempt(iteration, issue, description, result.mean_score))
        if result.mean_score > best.mean_score:
            best_pkg, best = patched, result
        still = [r for r in result.records if r.task_id in target_ids and r.error is not None]
        if not still and not (target_ids & result.failing_task_ids()):
            break
        current = still or current
    logger.info("auto-fix: %d attempt(s), train score %.4f", len(attempts), best.mean_score)
    return best_pkg, attempts


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodeStep:
    step: str  # "rule_transforms", "command_refinement" or "auto_fix"
    score_before: float
    score_after: float
    kept: bool
    changes: tuple[str, ...] = ()


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    group: VariantGroup
    code_steps: tuple[CodeStep, ...]
    fix_attempts: tuple[FixAttempt, ...]
    rule_changes: tuple[ChangeEntry, ...]
    baseline_score: float


@dataclass(frozen=True)
class OptimizationHistory:
    skill_name: str
    initial_score: float
    final_score: float
    epochs: tuple[EpochRecord, ...]
    lessons: tuple[Lesson, ...]

    def instruction_evaluations(self) -> int:
        return sum(e.group.group_size for e in self.epochs)

    def code_entries(self) -> int:
        return sum(len(e.code_steps) + len(e.fix_attempts) + len(e.rule_changes) for e in self.epochs)

    def to_document(self) -> dict:
        """JSON shape persisted as history.json."""
        return {
            "skill": self.skill_name,
            "initial_train_score": self.initial_score,
            "final_train_score": self.final_score,
            "epochs": [
                {
                    "epoch": e.epoch,
                    "baseline_train_score": e.baseline_score,
                    "variants": [
                        {
                            "variant_id": vid,
                            "reward": reward,
                            "advantage": adv,
                            "selected": i == e.group.selected,
                            "instruction": text,
                        }
                        for i, (vid, reward, adv, text) in enumerate(
                            zip(e.group.variant_ids, e.group.rewards, e.group.advantages, e.group.instructions)
                        )
                    ],
                    "code_pathway": [dataclasses.asdict(s) for s in e.code_steps],
                    "rule_changes": [dataclasses.asdict(c) for c in e.rule_changes],
                    "fix_attempts": [
                        {**dataclasses.asdict(a), "issue_class": a.issue_class.value} for a in e.fix_attempts
                    ],
                }
                for e in self.epochs
            ],
            "lessons": [dataclasses.asdict(lesson) for lesson in self.lessons],
        }


def _try_step(
    name: str, incumbent: SkillPackage, current: TrainEvaluation, candidate: SkillPackage | None,
    scorer: Scorer, changes: Iterable[str],
) -> tuple[SkillPackage, TrainEvaluation, CodeStep | None]:
    if candidate is None or candidate.content_digest() == incumbent.content_digest():
        return incumbent, current, None
    result = _safe_score(scorer, candidate)
    kept = result.mean_score >= current.mean_score
    step = CodeStep(name, current.mean_score, result.mean_score, kept, tuple(changes))
    if kept:
        return candidate, result, step
    logger.info("%s lowered train score %.4f -> %.4f; rolled back", name, current.mean_score, result.mean_score)
    return incumbent, current, step


def optimize_skill(
    pkg: SkillPackage,
    suite: TaskSuite,
    cfg: OptimizerConfig,
    scorer: Scorer,
    observer: Observer = _noop,
) -> tuple[SkillPackage, OptimizationHistory]:
    """Optimize ``pkg`` against ``suite.train``; the test split is never read."""
    train = suite.train
    if not train:
        raise ValueError("suite has no train tasks")
    if not pkg.instruction.strip():
        raise DegenerateBase("cannot optimize an empty instruction")
    for task in train:
        observer("task", f"{task.id}\n{task.description}")

    incumbent = pkg
    current = _safe_score(scorer, incumbent)
    initial = current.mean_score
    ledger = LessonLedger()
    epochs: list[EpochRecord] = []
    commands = effective_commands(pkg)
    example = commands[0].raw if commands else f"# follow the {pkg.name} instructions"

    for epoch in range(1, cfg.num_epochs + 1):
        baseline = current.mean_score
        proposals = propose_variants(
            incumbent.instruction, ledger, cfg.group_size, cfg.gateway, observer, cfg.max_lessons, example
        )
        candidates = proposals[: cfg.group_size - 1]  # slot 0 belongs to the incumbent
        texts = [incumbent.instruction] + candidates
        ids = [f"e{epoch}v{i}" for i in range(len(texts))]
        packages = [incumbent] + [incumbent.with_instruction(t) for t in candidates]
        with ThreadPoolExecutor(max_workers=min(cfg.parallelism, len(packages))) as pool:
            evals = [current] + list(pool.map(lambda p: _safe_score(scorer, p), packages[1:]))
        rewards = [e.mean_score for e in evals]
        advantages = group_relative_advantages(rewards)
        selected = select_variant(rewards)
        group = VariantGroup(epoch, incumbent.instruction, tuple(ids), tuple(texts), tuple(rewards), tuple(advantages), selected)
        for vid, adv, ev in zip(ids, advantages, evals):
            if adv < 0:
                ledger.append(Lesson(epoch, vid, ev.failed_criteria, adv, ev.missing_keywords))
        incumbent, current = packages[selected], evals[selected]

        steps: list[CodeStep] = []
        fixes: list[FixAttempt] = []
        rule_log: tuple[ChangeEntry, ...] = ()
        if incumbent.skill_type is SkillType.CODE_INCLUSIVE:
            files, rule_log = apply_rule_optimizations(incumbent.code_files)
            applied = [f"{c.file}: {c.rule}" for c in rule_log if c.status == "applied"]
            incumbent, current, step = _try_step(
                "rule_transforms", incumbent, current, incumbent.with_code_files(files), scorer, applied
            )
            steps += [step] if step else []

            refined = tuple(refine_commands(incumbent, cfg.gateway, observer))
            cand = incumbent.with_commands(refined) if refined != incumbent.commands else None
            incumbent, current, step = _try_step(
                "command_refinement", incumbent, current, cand, scorer, [c.raw for c in refined]
            )
            steps += [step] if step else []

            failures = current.failing_records()
            if failures:
                before = current.mean_score
                fixed, fixes = auto_fix(incumbent, failures, cfg.max_iterations, scorer, observer)
                after = _safe_score(scorer, fixed)
                kept = fixed is not incumbent
                steps.append(CodeStep("auto_fix", before, after.mean_score, kept, tuple(a.patch_description for a in fixes)))
                if kept:
                    incumbent, current = fixed, after
        epochs.append(EpochRecord(epoch, group, tuple(steps), tuple(fixes), rule_log, baseline))
        logger.info("epoch %d: selected %s, train score %.4f", epoch, ids[selected], current.mean_score)

    history = OptimizationHistory(pkg.name, initial, current.mean_score, tuple(epochs), tuple(ledger.entries))
    return incumbent, history
