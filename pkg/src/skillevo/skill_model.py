"""Loading skill packages from disk and extracting what they can do."""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import re
import shlex
import shutil
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .hashing import digest_text

logger = logging.getLogger(__name__)

PRIMARY_DOCS = ("SKILL.md", "README.md")
DEFAULT_EXECUTABLE_EXTENSIONS = frozenset({".py", ".sh", ".js", ".ts", ".rb"})
SHELL_FENCE_TAGS = frozenset({"bash", "sh", "shell", "console"})
INTERPRETERS = {".py": "python", ".sh": "sh", ".js": "node", ".ts": "ts-node", ".rb": "ruby"}
_SKIP_DIRS = frozenset({".git", "__pycache__", "node_modules", ".venv", "venv"})

_FENCE_RE = re.compile(r"^(?P<indent> {0,3})(?P<fence>`{3,}|~{3,})\s*(?P<info>[^\n`]*)$")
HEADING_RE = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_BULLET_RE = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+")


class SkillError(Exception):
    """Base class for skill loading failures."""


class MissingInstructionDoc(SkillError):
    def __init__(self, root: Path):
        super().__init__(f"no SKILL.md or README.md in {root}")
        self.root = root


class UnreadableFile(SkillError):
    def __init__(self, path: Path, reason: str):
        super().__init__(f"cannot read {path}: {reason}")
        self.path = path


class MalformedFrontmatter(SkillError):
    """Raised internally; parse_skill_package downgrades it to a warning."""


class SkillType(str, enum.Enum):
    INSTRUCTION_ONLY = "instruction_only"
    CODE_INCLUSIVE = "code_inclusive"


@dataclass(frozen=True)
class CommandSpec:
    raw: str
    program: str
    args: tuple[str, ...] = ()
    source_block_index: int = 0

    @classmethod
    def from_raw(cls, raw: str, source_block_index: int = 0) -> CommandSpec:
        raw = raw.strip()
        if not raw:
            raise ValueError("command line is empty")
        try:
            tokens = shlex.split(raw)
        except ValueError:
            tokens = raw.split()
        return cls(
            raw=raw,
            program=raw.split()[0],
            args=tuple(tokens[1:]),
            source_block_index=source_block_index,
        )


@dataclass(frozen=True)
class SkillPackage:
    name: str
    instruction: str
    auxiliary_docs: tuple[tuple[str, str], ...]
    code_files: tuple[tuple[str, str], ...]
    commands: tuple[CommandSpec, ...]
    skill_type: SkillType
    root: str
    instruction_path: str = "SKILL.md"
    description: str = ""
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name or "/" in self.name or "\\" in self.name:
            raise ValueError(f"invalid skill name {self.name!r}")
        expected = SkillType.CODE_INCLUSIVE if self.code_files else SkillType.INSTRUCTION_ONLY
        if self.skill_type is not expected:
            raise ValueError("skill_type must be code_inclusive iff code_files is non-empty")

    def with_instruction(self, instruction: str) -> SkillPackage:
        # commands stay pinned; instruction edits must not silently change what runs
        return dataclasses.replace(self, instruction=instruction)

    def with_code_files(self, code_files: tuple[tuple[str, str], ...]) -> SkillPackage:
        return dataclasses.replace(self, code_files=tuple(code_files))

    def with_commands(self, commands: tuple[CommandSpec, ...]) -> SkillPackage:
        return dataclasses.replace(self, commands=tuple(commands))

    def code_file(self, rel_path: str) -> str | None:
        for path, text in self.code_files:
            if path == rel_path:
                return text
        return None

    def content_digest(self) -> str:
        parts = [self.instruction]
        for path, text in self.code_files:
            parts.append(f"\x1e{path}\x1f{text}")
        for cmd in self.commands:
            parts.append(f"\x1d{cmd.raw}")
        return digest_text("".join(parts))


@dataclass(frozen=True)
class CapabilityProfile:
    core_functions: tuple[str, ...] = ()
    optional_features: tuple[str, ...] = ()
    boundary_conditions: tuple[str, ...] = ()
    failure_scenarios: tuple[str, ...] = ()
    io_formats: tuple[str, ...] = ()
    constraints: tuple[str, ...] = ()

    AREAS = (
        "core_functions",
        "optional_features",
        "boundary_conditions",
        "failure_scenarios",
        "io_formats",
        "constraints",
    )

    def __post_init__(self) -> None:
        for area in self.AREAS:
            if any(not entry for entry in getattr(self, area)):
                raise ValueError(f"{area} contains an empty entry")

    def is_empty(self) -> bool:
        return not any(getattr(self, area) for area in self.AREAS)


def _read_text(path: Path) -> str:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(path, exc.strerror or str(exc)) from exc
    text = data.decode("utf-8", errors="replace")
    return text.replace("\r\n", "\n").replace("\r", "\n")


def parse_frontmatter(text: str) -> tuple[dict[str, str], str]:
    """Split ``---`` fenced ``key: value`` frontmatter from the body.

    Returns ``({}, text)`` when there is no frontmatter. Raises
    MalformedFrontmatter when the opening fence is never closed or a line
    is not ``key: value``.
    """
    lines = text.split("\n")
    if not lines or lines[0].strip() != "---":
        return {}, text
    meta: dict[str, str] = {}
    for i, line in enumerate(lines[1:], start=1):
        stripped = line.strip()
        if stripped == "---":
            return meta, "\n".join(lines[i + 1 :])
        if not stripped or stripped.startswith("#"):
            continue
        if line[:1] in (" ", "\t") or stripped.startswith("- "):
            # continuation of a nested/multi-line value; only top-level keys matter
            continue
        key, sep, value = stripped.partition(":")
        if not sep or not key.strip() or " " in key.strip():
            raise MalformedFrontmatter(f"line {i + 1}: expected 'key: value', got {stripped!r}")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        meta[key.strip()] = value
    raise MalformedFrontmatter("frontmatter opening '---' is never closed")


def iter_fenced_blocks(text: str):
    """Yield (info_string, body_lines) for each fenced code block."""
    lines = text.split("\n")
    i = 0
    while i < len(lines):
        m = _FENCE_RE.match(lines[i])
        if not m:
            i += 1
            continue
        fence = m.group("fence")
        info = m.group("info").strip()
        body: list[str] = []
        i += 1
        while i < len(lines):
            stripped = lines[i].strip()
            if stripped.startswith(fence[0] * len(fence)) and set(stripped) <= {fence[0]}:
                break
            body.append(lines[i])
            i += 1
        yield info, body
        i += 1


def extract_commands(instruction: str) -> list[CommandSpec]:
    commands: list[CommandSpec] = []
    block_index = 0
    for info, body in iter_fenced_blocks(instruction):
        tag = info.split()[0].lower() if info else ""
        if tag not in SHELL_FENCE_TAGS:
            continue
        # console transcripts mix prompts with output; keep only prompted lines there
        prompted_only = tag == "console" and any(line.lstrip().startswith("$ ") for line in body)
        pending = ""
        for line in body:
            stripped = line.strip()
            if pending:
                stripped = pending + " " + stripped
                pending = ""
            elif prompted_only and not stripped.startswith("$ "):
                continue
            if stripped.startswith("$ "):
                stripped = stripped[2:].strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped.endswith("\\"):
                pending = stripped[:-1].rstrip()
                continue
            commands.append(CommandSpec.from_raw(stripped, block_index))
        if pending:
            commands.append(CommandSpec.from_raw(pending, block_index))
        block_index += 1
    return commands


def _discover_files(root: Path, extensions: frozenset[str]) -> tuple[list[Path], list[Path]]:
    code: list[Path] = []
    docs: list[Path] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d not in _SKIP_DIRS and not d.startswith("."))
        for fname in sorted(filenames):
            path = Path(dirpath) / fname
            if path.suffix.lower() in extensions:
                code.append(path)
            elif path.suffix.lower() == ".md":
                docs.append(path)
    return code, docs


def parse_skill_package(
    root: str | os.PathLike[str],
    executable_extensions: frozenset[str] = DEFAULT_EXECUTABLE_EXTENSIONS,
) -> SkillPackage:
    root = Path(root)
    if not root.is_dir():
        raise MissingInstructionDoc(root)
    primary = next((root / name for name in PRIMARY_DOCS if (root / name).is_file()), None)
    if primary is None:
        raise MissingInstructionDoc(root)

    instruction = _read_text(primary)
    warnings: list[str] = []
    name = root.resolve().name
    description = ""
    try:
        meta, _ = parse_frontmatter(instruction)
    except MalformedFrontmatter as exc:
        meta = {}
        warnings.append(f"malformed frontmatter: {exc}")
        logger.warning("%s: malformed frontmatter (%s); using directory name", primary, exc)
    candidate = meta.get("name", "").strip()
    if candidate and "/" not in candidate and "\\" not in candidate:
        name = candidate
    elif candidate:
        warnings.append(f"frontmatter name {candidate!r} contains a path separator; ignored")
    description = meta.get("description", "").strip()

    code_paths, doc_paths = _discover_files(root, frozenset(e.lower() for e in executable_extensions))
    code_files = tuple((p.relative_to(root).as_posix(), _read_text(p)) for p in code_paths)
    auxiliary = tuple(
        (p.relative_to(root).as_posix(), _read_text(p)) for p in doc_paths if p != primary
    )
    return SkillPackage(
        name=name,
        instruction=instruction,
        auxiliary_docs=auxiliary,
        code_files=code_files,
        commands=tuple(extract_commands(instruction)),
        skill_type=SkillType.CODE_INCLUSIVE if code_files else SkillType.INSTRUCTION_ONLY,
        root=str(root),
        instruction_path=primary.name,
        description=description,
        warnings=tuple(warnings),
    )


def effective_commands(pkg: SkillPackage) -> tuple[CommandSpec, ...]:
    """Commands to run for a code-inclusive skill.

    Falls back to invoking each code file with its interpreter when the
    instruction documents no shell commands.
    """
    if pkg.commands:
        return pkg.commands
    inferred = []
    for path, _ in pkg.code_files:
        interpreter = INTERPRETERS.get(Path(path).suffix.lower())
        if interpreter == "python" and shutil.which("python") is None and shutil.which("python3"):
            interpreter = "python3"
        if interpreter:
            inferred.append(CommandSpec.from_raw(f"{interpreter} {shlex.quote(path)}"))
    return tuple(inferred)


def materialize(pkg: SkillPackage, dest: str | os.PathLike[str]) -> Path:
    """Write the package (on-disk files overlaid with in-memory edits) into ``dest``."""
    dest = Path(dest)
    src = Path(pkg.root)
    if src.is_dir():
        shutil.copytree(
            src,
            dest,
            dirs_exist_ok=True,
            ignore=shutil.ignore_patterns(*_SKIP_DIRS, ".*"),
        )
    else:
        dest.mkdir(parents=True, exist_ok=True)
    (dest / pkg.instruction_path).write_text(pkg.instruction, encoding="utf-8")
    for rel, text in pkg.code_files:
        target = dest / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        mode = target.stat().st_mode if target.exists() else None
        target.write_text(text, encoding="utf-8")
        if mode is not None:
            os.chmod(target, mode)
    return dest


# ---------------------------------------------------------------------------
# capability profile
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def load_profile_keywords() -> dict:
    raw = resources.files("skillevo").joinpath("data/profile_keywords.json").read_text("utf-8")
    data = json.loads(raw)
    return {
        "heading_buckets": tuple((b, tuple(kws)) for b, kws in data["heading_buckets"]),
        "line_buckets": tuple((b, tuple(kws)) for b, kws in data["line_buckets"]),
    }


def lines_outside_code(text: str) -> list[tuple[int, str]]:
    """Return (line_no, line) pairs outside fenced code blocks."""
    out = []
    in_fence: str | None = None
    for no, line in enumerate(text.split("\n")):
        m = _FENCE_RE.match(line)
        if in_fence is None and m:
            in_fence = m.group("fence")[0] * len(m.group("fence"))
            continue
        if in_fence is not None:
            if line.strip().startswith(in_fence) and set(line.strip()) <= {in_fence[0]}:
                in_fence = None
            continue
        out.append((no, line))
    return out


def _bucket_for(text: str, buckets) -> str | None:
    lowered = text.lower()
    for bucket, keywords in buckets:
        if any(kw in lowered for kw in keywords):
            return bucket
    return None


def extract_capability_profile(pkg: SkillPackage, keywords: dict | None = None) -> CapabilityProfile:
    keywords = keywords or load_profile_keywords()
    try:
        _, body = parse_frontmatter(pkg.instruction)
    except MalformedFrontmatter:
        body = pkg.instruction
    areas: dict[str, list[str]] = {area: [] for area in CapabilityProfile.AREAS}

    def add(area: str, entry: str) -> None:
        if entry and entry not in areas[area]:
            areas[area].append(entry)

    section_bucket: str | None = None
    first_paragraph: list[str] = []
    paragraph_done = False
    for _, line in lines_outside_code(body):
        heading = HEADING_RE.match(line)
        if heading:
            section_bucket = _bucket_for(heading.group(2), keywords["heading_buckets"])
            if first_paragraph:
                paragraph_done = True
            continue
        entry = _BULLET_RE.sub("", line).strip()
        if not entry:
            if first_paragraph:
                paragraph_done = True
            continue
        if not paragraph_done:
            first_paragraph.append(entry)
        if section_bucket:
            add(section_bucket, entry)
        for bucket, kws in keywords["line_buckets"]:
            if any(kw in entry.lower() for kw in kws):
                add(bucket, entry)

    # the opening paragraph states what the skill is for
    if first_paragraph:
        intro = " ".join(first_paragraph)
        if intro in areas["core_functions"]:
            areas["core_functions"].remove(intro)
        areas["core_functions"].insert(0, intro)
    return CapabilityProfile(**{k: tuple(v) for k, v in areas.items()})
