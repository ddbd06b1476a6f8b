"""Document-quality rubrics: the bundled catalog and a parser for rule documents.

Rule document format::

    ## <Dimension>
    - <criterion text> [<optional check annotation>]
    threshold: 70%

Check annotations:

    [keywords: a|b, c]            every comma-separated group must match; ``|`` separates alternatives
    [structure: <rule> <args>]    a named structural rule (see STRUCTURE_RULES)
    [stat: <name> lo..hi]         numeric statistic within inclusive bounds
    [stat: <name> < hi]           numeric statistic strictly below ``hi``
    [llm]                         judgment only; optionally ``[llm; keywords: ...]`` as a heuristic proxy
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Union

from .hashing import digest_text
from .skill_model import (
    HEADING_RE,
    SHELL_FENCE_TAGS,
    MalformedFrontmatter,
    extract_commands,
    iter_fenced_blocks,
    lines_outside_code,
    parse_frontmatter,
)

DEFAULT_PASS_THRESHOLD = 0.70
DEFAULT_SCALE_MAX = 100.0


class RubricError(ValueError):
    pass


class EmptyRubric(RubricError):
    pass


@dataclass(frozen=True)
class KeywordSet:
    groups: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class StructureRule:
    rule: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class StatRule:
    stat: str
    lo: float
    hi: float
    hi_inclusive: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise RubricError(f"stat bounds must be finite and ordered, got {self.lo}..{self.hi}")

    def contains(self, value: float) -> bool:
        if value < self.lo:
            return False
        return value <= self.hi if self.hi_inclusive else value < self.hi


@dataclass(frozen=True)
class LlmOnly:
    proxy: KeywordSet | None = None


Check = Union[KeywordSet, StructureRule, StatRule, LlmOnly]


@dataclass(frozen=True)
class CriterionItem:
    text: str
    check: Check = LlmOnly()


@dataclass(frozen=True)
class Dimension:
    name: str
    items: tuple[CriterionItem, ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise RubricError(f"dimension {self.name!r} has no items")
        texts = [item.text for item in self.items]
        if len(set(texts)) != len(texts):
            raise RubricError(f"dimension {self.name!r} has duplicate item texts")

    @property
    def max_points(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Rubric:
    dimensions: tuple[Dimension, ...]
    pass_threshold: float = DEFAULT_PASS_THRESHOLD
    scale_max: float = DEFAULT_SCALE_MAX

    def __post_init__(self) -> None:
        if not self.dimensions:
            raise EmptyRubric("rubric has no dimensions")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise RubricError("dimension names must be unique")
        if not 0 < self.pass_threshold <= 1:
            raise RubricError(f"pass_threshold must be in (0, 1], got {self.pass_threshold}")

    @property
    def total_points(self) -> int:
        return sum(d.max_points for d in self.dimensions)

    def digest(self) -> str:
        return digest_text(serialize_rubric(self))


# ---------------------------------------------------------------------------
# parsing / serialization
# ---------------------------------------------------------------------------

_ANNOTATION_RE = re.compile(r"\s*\[(?P<body>[^\[\]]*)\]\s*$")
_THRESHOLD_RE = re.compile(r"^\s*threshold\s*:\s*(?P<num>[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(?P<pct>%?)\s*$", re.I)
_SCALE_RE = re.compile(r"^\s*scale\s*:\s*(?P<num>[0-9]*\.?[0-9]+)\s*$", re.I)
_ITEM_RE = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+(?P<text>.+?)\s*$")
_CHECK_KINDS = ("keywords", "structure", "stat", "llm")


def _parse_keywords(spec: str) -> KeywordSet:
    groups = []
    for group in spec.split(","):
        alts = tuple(a.strip().lower() for a in group.split("|") if a.strip())
        if alts:
            groups.append(alts)
    if not groups:
        raise RubricError(f"empty keyword annotation: {spec!r}")
    return KeywordSet(tuple(groups))


def _parse_stat(spec: str) -> StatRule:
    m = re.fullmatch(r"(\w+)\s+([-0-9.eE]+)\s*\.\.\s*([-0-9.eE]+)", spec.strip())
    if m:
        return StatRule(m.group(1), float(m.group(2)), float(m.group(3)))
    m = re.fullmatch(r"(\w+)\s*<\s*([-0-9.eE]+)", spec.strip())
    if m:
        return StatRule(m.group(1), 0.0, float(m.group(2)), hi_inclusive=False)
    raise RubricError(f"cannot parse stat annotation {spec!r}")


def parse_check(annotation: str) -> Check:
    kind, _, rest = annotation.partition(":")
    kind = kind.strip().lower()
    if kind.startswith("llm"):
        _, _, proxy = annotation.partition(";")
        proxy = proxy.strip()
        if proxy:
            pkind, _, pspec = proxy.partition(":")
            if pkind.strip().lower() != "keywords":
                raise RubricError(f"llm proxy must be a keyword set: {annotation!r}")
            return LlmOnly(_parse_keywords(pspec))
        return LlmOnly()
    if kind == "keywords":
        return _parse_keywords(rest)
    if kind == "structure":
        parts = rest.split(None, 1)
        if not parts:
            raise RubricError(f"structure annotation needs a rule name: {annotation!r}")
        rule = parts[0]
        args = tuple(parts[1].split()) if len(parts) > 1 else ()
        if rule not in STRUCTURE_RULES:
            raise RubricError(f"unknown structure rule {rule!r}")
        return StructureRule(rule, args)
    if kind == "stat":
        stat = _parse_stat(rest)
        if stat.stat not in STATISTICS:
            raise RubricError(f"unknown statistic {stat.stat!r}")
        return stat
    raise RubricError(f"unknown check annotation {annotation!r}")


def _format_check(check: Check) -> str:
    def kw(ks: KeywordSet) -> str:
        return ", ".join("|".join(g) for g in ks.groups)

    if isinstance(check, KeywordSet):
        return f" [keywords: {kw(check)}]"
    if isinstance(check, StructureRule):
        return f" [structure: {' '.join((check.rule,) + check.args)}]"
    if isinstance(check, StatRule):
        if check.hi_inclusive:
            return f" [stat: {check.stat} {_num(check.lo)}..{_num(check.hi)}]"
        return f" [stat: {check.stat} < {_num(check.hi)}]"
    if check.proxy is not None:
        return f" [llm; keywords: {kw(check.proxy)}]"
    return ""


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(x)


def parse_rule_document(doc: str) -> Rubric:
    if not doc or not doc.strip():
        raise RubricError("rule document is empty")
    threshold = DEFAULT_PASS_THRESHOLD
    scale = DEFAULT_SCALE_MAX
    dims: list[tuple[str, list[CriterionItem]]] = []
    current: list[CriterionItem] | None = None
    for line in doc.replace("\r\n", "\n").split("\n"):
        m = _THRESHOLD_RE.match(line)
        if m:
            value = float(m.group("num"))
            threshold = value / 100 if m.group("pct") or value > 1 else value
            continue
        m = _SCALE_RE.match(line)
        if m:
            scale = float(m.group("num"))
            continue
        heading = HEADING_RE.match(line)
        if heading:
            current = []
            dims.append((heading.group(2).strip(), current))
            continue
        item = _ITEM_RE.match(line)
        if item and current is not None:
            text = item.group("text")
            check: Check = LlmOnly()
            ann = _ANNOTATION_RE.search(text)
            if ann and ann.group("body").split(":")[0].split(";")[0].strip().lower() in _CHECK_KINDS:
                check = parse_check(ann.group("body"))
                text = text[: ann.start()].rstrip()
            current.append(CriterionItem(text, check))
    dimensions = tuple(Dimension(name, tuple(items)) for name, items in dims if items)
    if not dimensions:
        raise EmptyRubric("no headings with list items found")
    return Rubric(dimensions, pass_threshold=threshold, scale_max=scale)


def serialize_rubric(rubric: Rubric) -> str:
    pct = round(rubric.pass_threshold * 100)
    if pct / 100 == rubric.pass_threshold:
        threshold = f"{pct}%"
    else:
        threshold = repr(rubric.pass_threshold)
    lines = [f"threshold: {threshold}", f"scale: {_num(rubric.scale_max)}"]
    for dim in rubric.dimensions:
        lines.append("")
        lines.append(f"## {dim.name}")
        for item in dim.items:
            lines.append(f"- {item.text}{_format_check(item.check)}")
    return "\n".join(lines) + "\n"


@lru_cache(maxsize=None)
def builtin_rubric() -> Rubric:
    text = resources.files("skillevo").joinpath("data/rubric_v1.md").read_text("utf-8")
    return parse_rule_document(text)


# ---------------------------------------------------------------------------
# mechanical checks over instruction text
# ---------------------------------------------------------------------------

VAGUE_TERMS = (
    "maybe", "perhaps", "somehow", "sort of", "kind of", "stuff", "and so on",
    "whatever", "probably", "might work", "some things",
)
TECHNICAL_TERMS = (
    "API", "CLI", "SDK", "JSON", "HTTP", "HTTPS", "REST", "URL", "YAML", "CSV",
    "SQL", "regex", "stdout", "stderr", "UTF-8", "OAuth", "CI", "ENV",
)


@dataclass(frozen=True)
class DocumentView:
    """Pre-computed structure of an instruction document."""

    text: str
    body: str
    headings: tuple[tuple[int, str], ...]
    prose_lines: tuple[str, ...]
    list_items: int
    code_blocks: tuple[str, ...]

    @classmethod
    def of(cls, text: str) -> DocumentView:
        try:
            _, body = parse_frontmatter(text)
        except MalformedFrontmatter:
            body = text
        headings = []
        prose = []
        list_items = 0
        for _, line in lines_outside_code(body):
            h = HEADING_RE.match(line)
            if h:
                headings.append((len(h.group(1)), h.group(2)))
            elif _ITEM_RE.match(line):
                list_items += 1
                prose.append(_ITEM_RE.match(line).group("text"))
            elif line.strip():
                prose.append(line.strip())
        blocks = tuple(info.split()[0].lower() if info else "" for info, _ in iter_fenced_blocks(body))
        return cls(text, body, tuple(headings), tuple(prose), list_items, blocks)

    @property
    def prose(self) -> str:
        return "\n".join(self.prose_lines)


def _sentences(view: DocumentView) -> list[str]:
    out = []
    for line in view.prose_lines:
        for s in re.split(r"(?<=[.!?])\s+", line):
            if re.search(r"\w", s):
                out.append(s)
    return out


def _stat_avg_sentence_words(view: DocumentView) -> float | None:
    sentences = _sentences(view)
    if not sentences:
        return None
    return sum(len(s.split()) for s in sentences) / len(sentences)


def _stat_char_length(view: DocumentView) -> float | None:
    return float(len(view.text)) if view.text.strip() else None


STATISTICS: dict[str, Callable[[DocumentView], float | None]] = {
    "avg_sentence_words": _stat_avg_sentence_words,
    "char_length": _stat_char_length,
}


def _rule_intro_paragraph(view: DocumentView, args) -> bool:
    seen_title = False
    for _, line in lines_outside_code(view.body):
        stripped = line.strip()
        if not stripped:
            continue
        if HEADING_RE.match(line):
            if seen_title:
                return False
            seen_title = True
            continue
        return not _ITEM_RE.match(line) and len(stripped.split()) >= 5
    return False


def _rule_heading_matches(view: DocumentView, args) -> bool:
    pattern = " ".join(args).split("|")
    return any(any(p.lower() in h.lower() for p in pattern) for _, h in view.headings)


def _rule_min_code_blocks(view: DocumentView, args) -> bool:
    return len(view.code_blocks) >= int(args[0])


def _rule_min_tagged_code_blocks(view: DocumentView, args) -> bool:
    return sum(1 for tag in view.code_blocks if tag) >= int(args[0])


def _rule_shell_commands(view: DocumentView, args) -> bool:
    return len(extract_commands(view.body)) >= int(args[0] if args else 1)


def _rule_tagged_shell_block(view: DocumentView, args) -> bool:
    return any(tag in SHELL_FENCE_TAGS for tag in view.code_blocks)


def _rule_min_technical_terms(view: DocumentView, args) -> bool:
    found = {t for t in TECHNICAL_TERMS if re.search(rf"(?<![\w-]){re.escape(t)}(?![\w-])", view.body)}
    return len(found) >= int(args[0])


def _rule_consistent_headings(view: DocumentView, args) -> bool:
    if not view.headings:
        return False
    previous = view.headings[0][0]
    for level, _ in view.headings[1:]:
        if level > previous + 1:
            return False
        previous = level
    return True


def _rule_headers_lists_code(view: DocumentView, args) -> bool:
    return len(view.headings) >= int(args[0]) and view.list_items > 0 and len(view.code_blocks) > 0


def _rule_no_vague_language(view: DocumentView, args) -> bool:
    prose = view.prose.lower()
    if not prose.strip():
        return False
    return not any(re.search(rf"\b{re.escape(t)}\b", prose) for t in VAGUE_TERMS)


def _rule_has_subheadings(view: DocumentView, args) -> bool:
    return any(level in (2, 3) for level, _ in view.headings)


def _rule_commands_explained(view: DocumentView, args) -> bool:
    commands = extract_commands(view.body)
    if not commands:
        return False
    prose = view.prose
    for cmd in commands:
        targets = [cmd.program] + [a for a in cmd.args if "/" in a or "." in a][:1]
        if not any(t in prose for t in targets):
            return False
    return True


def _rule_flags_documented(view: DocumentView, args) -> bool:
    commands = extract_commands(view.body)
    if not commands:
        return False
    prose = view.prose
    flags = {a.split("=")[0] for c in commands for a in c.args if a.startswith("-") and len(a) > 1}
    return all(f in prose for f in flags)


STRUCTURE_RULES: dict[str, Callable[[DocumentView, tuple[str, ...]], bool]] = {
    "intro_paragraph": _rule_intro_paragraph,
    "heading_matches": _rule_heading_matches,
    "min_code_blocks": _rule_min_code_blocks,
    "min_tagged_code_blocks": _rule_min_tagged_code_blocks,
    "shell_commands": _rule_shell_commands,
    "tagged_shell_block": _rule_tagged_shell_block,
    "min_technical_terms": _rule_min_technical_terms,
    "consistent_headings": _rule_consistent_headings,
    "headers_lists_code": _rule_headers_lists_code,
    "no_vague_language": _rule_no_vague_language,
    "has_subheadings": _rule_has_subheadings,
    "commands_explained": _rule_commands_explained,
    "flags_documented": _rule_flags_documented,
}


def keyword_hits(keywords: KeywordSet, text: str) -> tuple[bool, list[str]]:
    lowered = text.lower()
    matched = []
    for group in keywords.groups:
        hit = next((alt for alt in group if alt in lowered), None)
        if hit is None:
            return False, matched
        matched.append(hit)
    return True, matched


def check_item(item: CriterionItem, view: DocumentView) -> tuple[bool, str]:
    """Apply an item's mechanical check. Returns (satisfied, evidence)."""
    check = item.check
    if not view.text.strip():
        return False, "empty document"
    if isinstance(check, KeywordSet):
        ok, matched = keyword_hits(check, view.body)
        return ok, f"keywords matched: {', '.join(matched)}" if ok else "keyword group missing"
    if isinstance(check, StructureRule):
        ok = STRUCTURE_RULES[check.rule](view, check.args)
        return ok, f"structure rule {check.rule} {'holds' if ok else 'fails'}"
    if isinstance(check, StatRule):
        value = STATISTICS[check.stat](view)
        if value is None:
            return False, f"{check.stat} undefined"
        ok = check.contains(value)
        return ok, f"{check.stat}={value:.1f}"
    if check.proxy is not None:
        ok, matched = keyword_hits(check.proxy, view.body)
        return ok, f"proxy keywords matched: {', '.join(matched)}" if ok else "proxy keywords missing"
    return False, "requires model judgment"
