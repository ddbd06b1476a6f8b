"""Train/test task suites with machine-checkable validation criteria."""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .llm_gateway import CompletionRequest, Gateway
from .serde import dumps_canonical, from_jsonable
from .skill_model import CapabilityProfile, SkillPackage, SkillType, effective_commands

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "skillevo-taskgen/1"


class InsufficientProfile(ValueError):
    """The profile and package give nothing to build tasks around."""


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


class Tier(str, enum.Enum):
    STANDARD = "standard"
    ADVANCED = "advanced"
    BOUNDARY = "boundary"


class CriterionKind(str, enum.Enum):
    FILE_EXISTS = "file_exists"
    KEYWORD_PRESENT = "keyword_present"
    REGEX_MATCH = "regex_match"


@dataclass(frozen=True)
class ValidationCriterion:
    kind: CriterionKind
    target: str
    where: str  # "stdout", "stderr" or "file:<relative path>"
    keywords: tuple[str, ...]
    weight: int = 1

    def __post_init__(self) -> None:
        if self.weight != 1:
            raise ValueError("criteria are worth exactly one point")
        if not (self.where in ("stdout", "stderr") or self.where.startswith("file:")):
            raise ValueError(f"bad criterion location {self.where!r}")
        if self.kind is CriterionKind.REGEX_MATCH:
            re.compile(self.target)
        if not self.keywords:
            raise ValueError("criterion needs at least one concept keyword")

    @property
    def output_file(self) -> str | None:
        return self.where[5:] if self.where.startswith("file:") else None

    def describe(self) -> str:
        verb = {
            CriterionKind.FILE_EXISTS: "file exists",
            CriterionKind.KEYWORD_PRESENT: "contains keyword",
            CriterionKind.REGEX_MATCH: "matches regex",
        }[self.kind]
        return f"{self.where} {verb} {self.target!r}"


@dataclass(frozen=True)
class Task:
    id: str
    split: Split
    tier: Tier
    description: str
    context: tuple[tuple[str, str], ...]
    criteria: tuple[ValidationCriterion, ...]
    area: str = "core_functions"
    command_index: int | None = None

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError("task description is empty")


@dataclass(frozen=True)
class TaskSuite:
    skill_name: str
    generation_seed: int
    generator_version: str
    train: tuple[Task, ...]
    test: tuple[Task, ...]

    def all_tasks(self) -> tuple[Task, ...]:
        return self.train + self.test

    def to_json(self) -> str:
        return dumps_canonical(self)

    @classmethod
    def from_json(cls, text: str) -> TaskSuite:
        return from_jsonable(cls, json.loads(text))

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


@dataclass(frozen=True)
class GenerationConfig:
    train_count: int = 12
    test_count: int = 8
    seed: int = 0
    gateway: Gateway | None = None


@lru_cache(maxsize=None)
def load_concept_vocabulary() -> dict:
    raw = resources.files("skillevo").joinpath("data/concept_keywords.json").read_text("utf-8")
    return json.loads(raw)


# ---------------------------------------------------------------------------
# criteria attachment
# ---------------------------------------------------------------------------

_OUTPUT_FILE_RE = re.compile(
    r"\b(?:save|saves|saved|saving|write|writes|writing|export|exports|store|stores)\b"
    r"[^.;]*?\bto\s+`?(?P<path>[\w][\w./-]*\.[A-Za-z0-9]+)`?",
    re.I,
)
_JSON_RE = re.compile(r"\bjson\s+format\b|\bas\s+json\b|\bjson\s+output\b", re.I)
_STDOUT_RE = re.compile(r"\b(print|prints|display|report|show|list|return|stdout)\b", re.I)
_ERROR_RE = re.compile(r"\berror\b", re.I)
_INVALID_RE = re.compile(r"\b(invalid|malformed|empty|missing|corrupt)\b", re.I)
_LIMIT_RE = re.compile(r"\b(limit|limits|constraint|oversized|maximum|minimum)\b", re.I)
_STOPWORDS = frozenset(
    "the and with from into that this then them their your using use run for each when "
    "skill input output file files result results sample print report status line "
    "prints writes reads returns shows displays script".split()
)

JSON_OBJECT_REGEX = r"(?m)^\s*\{"
ERROR_REGEX = r"(?i)\b(error|invalid|usage)\b"
LIMIT_REGEX = r"(?i)\b(limit|exceed|too large|maximum|constraint)"


def _salient_keyword(text: str, fallback: str) -> str:
    for word in re.findall(r"[A-Za-z][A-Za-z-]{3,}", text):
        if word.lower() not in _STOPWORDS:
            return word.lower()
    return fallback


def attach_validation_criteria(
    task: Task, profile: CapabilityProfile, skill_name: str | None = None
) -> Task:
    """Derive criteria from the task description.

    An output file named after save/write/export gets FileExists; "JSON format"
    gets a stdout JSON-object regex; error + invalid-input wording expects an
    error on stderr; limit wording expects the limit to be reported; output
    verbs (print, report, return, ...) expect a capability keyword on stdout.
    With no trigger, the skill name on stdout is the sole criterion.
    """
    rules = load_concept_vocabulary()["rules"]
    name = skill_name or re.split(r"-(?:train|test)-", task.id)[0]
    text = task.description
    criteria: list[ValidationCriterion] = []

    def add(rule: str, kind: CriterionKind, target: str, where: str) -> None:
        crit = ValidationCriterion(kind, target, where, tuple(rules[rule]["keywords"]))
        if crit not in criteria:
            criteria.append(crit)

    for m in _OUTPUT_FILE_RE.finditer(text):
        path = m.group("path")
        add("output_file", CriterionKind.FILE_EXISTS, path, f"file:{path}")
    if _JSON_RE.search(text):
        add("json_format", CriterionKind.REGEX_MATCH, JSON_OBJECT_REGEX, "stdout")
    if _ERROR_RE.search(text) and _INVALID_RE.search(text):
        add("error_report", CriterionKind.REGEX_MATCH, ERROR_REGEX, "stderr")
    if _LIMIT_RE.search(text):
        add("limit_handling", CriterionKind.REGEX_MATCH, LIMIT_REGEX, "stdout")
    if _STDOUT_RE.search(text):
        # keyword from the capability the task exercises, not from split-specific slot values
        area_text = " ".join(getattr(profile, task.area, ()) or profile.core_functions)
        add("stdout_keyword", CriterionKind.KEYWORD_PRESENT, _salient_keyword(area_text, name), "stdout")
    if not criteria:
        add("fallback", CriterionKind.KEYWORD_PRESENT, name, "stdout")
    return dataclasses.replace(task, criteria=tuple(criteria))


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------

STANDARD_TEMPLATES = (
    "Use the {skill} skill on the `{slot}` sample ({function}) and print the result.",
    "Given the input file `{slot}.txt`, apply the {skill} skill ({function}) and save the output to `{slot}_out.txt`.",
    "Follow the documented usage ({function}) on the `{slot}` input and report the outcome.",
)
ADVANCED_TEMPLATES = (
    "Combine two capabilities on `{slot}.txt` ({function}; then {other}) and return results in JSON format.",
    "Process the `{slot}` batch with the feature \"{feature}\", save the summary to "
    "`{slot}_summary.json` and print a short status line.",
)
BOUNDARY_TEMPLATES = (
    "Feed the malformed input `{slot}.txt` to the {skill} skill ({function}) and confirm it "
    "reports a clear error instead of crashing.",
    "Push the {skill} skill to its limit ({boundary}) with the oversized `{slot}` input and "
    "report how the constraint is handled.",
)

TIER_AREAS = {
    Tier.STANDARD: ("core_functions",),
    Tier.ADVANCED: ("optional_features", "io_formats", "core_functions"),
    Tier.BOUNDARY: ("boundary_conditions", "failure_scenarios", "core_functions"),
}


def _phrase(entry: str, limit: int = 72) -> str:
    entry = re.sub(r"[`*]", "", entry).strip()
    first = re.split(r"(?<=[.!?])\s", entry, maxsplit=1)[0].rstrip(".:;")
    if len(first) > limit:
        first = first[:limit].rsplit(" ", 1)[0]
    return first[:1].lower() + first[1:] if first else entry


def _slot_pool(seed: int, needed: int) -> list[str]:
    words = list(load_concept_vocabulary()["slot_words"])
    pool = list(words)
    suffix = 2
    while len(pool) < needed:
        pool.extend(f"{w}{suffix}" for w in words)
        suffix += 1
    random.Random(seed).shuffle(pool)
    return pool


def _tier_plan(count: int) -> list[Tier]:
    standard = count // 2
    rest = count - standard
    plan = [Tier.STANDARD] * standard
    plan += [Tier.ADVANCED if i % 2 == 0 else Tier.BOUNDARY for i in range(rest)]
    return plan


def _fixture(tier: Tier, variant: int, slot: str, rng: random.Random) -> tuple[tuple[str, str], ...]:
    if tier is Tier.BOUNDARY and variant % 2 == 0:
        return ((f"{slot}.txt", "{not valid\x7f" if rng.random() < 0.5 else ""),)
    n = {Tier.STANDARD: 3, Tier.ADVANCED: 8, Tier.BOUNDARY: 5000}[tier]
    lines = [f"{slot},{i},{rng.randint(0, 999)}" for i in range(n)]
    return ((f"{slot}.txt", "\n".join(lines) + "\n"),)


def _template_suite(profile: CapabilityProfile, pkg: SkillPackage, cfg: GenerationConfig) -> TaskSuite:
    functions = [_phrase(e) for e in profile.core_functions]
    commands = effective_commands(pkg) if pkg.skill_type is SkillType.CODE_INCLUSIVE else pkg.commands
    functions += [f"run `{c.raw}`" for c in commands]
    if not functions:
        raise InsufficientProfile(f"{pkg.name}: no core functions or commands to build tasks from")

    rng = random.Random(cfg.seed)
    pool = _slot_pool(cfg.seed, cfg.train_count + cfg.test_count)
    slots = {
        Split.TRAIN: pool[: cfg.train_count],
        Split.TEST: pool[cfg.train_count : cfg.train_count + cfg.test_count],
    }
    offset = rng.randrange(len(functions))
    n_commands = len(commands)

    def area_entries(tier: Tier) -> tuple[str, list[str]]:
        for area in TIER_AREAS[tier]:
            entries = [_phrase(e) for e in getattr(profile, area)]
            if entries:
                return area, entries
        return "core_functions", functions

    splits: dict[Split, list[Task]] = {Split.TRAIN: [], Split.TEST: []}
    for split, count in ((Split.TRAIN, cfg.train_count), (Split.TEST, cfg.test_count)):
        counters = {t: 0 for t in Tier}
        for ordinal, tier in enumerate(_tier_plan(count)):
            k = counters[tier]
            counters[tier] += 1
            slot = slots[split][ordinal]
            area, entries = area_entries(tier)
            function = functions[(offset + ordinal) % len(functions)]
            templates = {
                Tier.STANDARD: STANDARD_TEMPLATES,
                Tier.ADVANCED: ADVANCED_TEMPLATES,
                Tier.BOUNDARY: BOUNDARY_TEMPLATES,
            }[tier]
            template = templates[k % len(templates)]
            description = template.format(
                skill=pkg.name,
                function=function,
                other=functions[(offset + ordinal + 1) % len(functions)],
                feature=entries[k % len(entries)],
                boundary=entries[k % len(entries)],
                slot=slot,
            )
            task = Task(
                id=f"{pkg.name}-{split.value}-{tier.value}-{ordinal + 1:02d}",
                split=split,
                tier=tier,
                description=description,
                context=_fixture(tier, k, slot, rng),
                criteria=(),
                area=area if tier is not Tier.STANDARD else "core_functions",
                command_index=(ordinal % n_commands) if n_commands else None,
            )
            splits[split].append(attach_validation_criteria(task, profile, pkg.name))
    return TaskSuite(
        skill_name=pkg.name,
        generation_seed=cfg.seed,
        generator_version=GENERATOR_VERSION,
        train=tuple(splits[Split.TRAIN]),
        test=tuple(splits[Split.TEST]),
    )


_REPHRASE_SYSTEM = (
    "You rewrite task statements for testing a command-line agent skill. "
    "Keep every file name, backticked value and requirement. Reply with the rewritten "
    "statement only, one paragraph."
)


def _llm_rephrase(suite: TaskSuite, cfg: GenerationConfig) -> TaskSuite:
    rephrased: dict[Split, list[Task]] = {Split.TRAIN: [], Split.TEST: []}
    for task in suite.all_tasks():
        result = cfg.gateway.complete(CompletionRequest(system=_REPHRASE_SYSTEM, user=task.description))
        new_task = task
        if result.ok:
            text = " ".join(result.content.split())
            required = re.findall(r"`[^`]+`", task.description)
            if text and len(text) <= 600 and all(r.strip("`") in text for r in required):
                new_task = dataclasses.replace(task, description=text)
        rephrased[task.split].append(new_task)
    candidate = dataclasses.replace(
        suite, train=tuple(rephrased[Split.TRAIN]), test=tuple(rephrased[Split.TEST])
    )
    if verify_isolation(candidate):
        logger.info("model phrasing broke split isolation; keeping template phrasing")
        return suite
    return candidate


def generate_task_suite(
    profile: CapabilityProfile, pkg: SkillPackage, cfg: GenerationConfig | None = None
) -> TaskSuite:
    cfg = cfg or GenerationConfig()
    if cfg.train_count < 2 or cfg.test_count < 2:
        raise ValueError("train_count and test_count must both be at least 2")
    suite = _template_suite(profile, pkg, cfg)
    if cfg.gateway is not None and not cfg.gateway.offline:
        suite = _llm_rephrase(suite, cfg)
    violations = verify_isolation(suite)
    if violations:
        raise RuntimeError(f"generated suite violates split isolation: {violations}")
    return suite


def verify_isolation(suite: TaskSuite) -> list[str]:
    violations = []
    for train in suite.train:
        for test in suite.test:
            if test.description in train.description:
                violations.append(f"test task {test.id} description is contained in train task {train.id}")
            elif train.description in test.description:
                violations.append(f"train task {train.id} description is contained in test task {test.id}")
    return violations
