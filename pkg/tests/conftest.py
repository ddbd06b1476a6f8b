from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

@pytest.fixture
def fixture_skill(tmp_path):
    """Copy a bundled fixture skill into a scratch directory and return its path."""

    def copy(name: str) -> Path:
        dest = tmp_path / "skills" / name
        shutil.copytree(FIXTURES / name, dest)
        return dest

    return copy


@pytest.fixture
def make_skill(tmp_path):
    """Write a skill from a {relative path: text} mapping."""

    def make(files: dict[str, str], name: str = "skill") -> Path:
        root = tmp_path / name
        for rel, text in files.items():
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return root

    return make


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None:
        return
    results = module.RESULTS
    terminalreporter.section("acceptance criteria")
    for n, title in module.CRITERIA.items():
        ok, detail = results.get(n, (False, "not reached"))
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
