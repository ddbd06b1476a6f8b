from __future__ import annotations

import pytest

from skillevo.skill_model import (
    CommandSpec,
    MalformedFrontmatter,
    MissingInstructionDoc,
    SkillType,
    effective_commands,
    extract_capability_profile,
    extract_commands,
    materialize,
    parse_frontmatter,
    parse_skill_package,
)


def test_parse_code_inclusive_fixture(fixture_skill):
    pkg = parse_skill_package(fixture_skill("weather"))
    assert pkg.name == "weather"
    assert pkg.skill_type is SkillType.CODE_INCLUSIVE
    assert [p for p, _ in pkg.code_files] == ["scripts/run.py"]
    assert [c.raw for c in pkg.commands] == ["python3 scripts/run.py --unit celsius"]
    assert pkg.commands[0].args == ("scripts/run.py", "--unit", "celsius")
    assert pkg.description.startswith("Summarize station")


def test_parse_instruction_only_fixture(fixture_skill):
    pkg = parse_skill_package(fixture_skill("notes_guide"))
    assert pkg.skill_type is SkillType.INSTRUCTION_ONLY
    assert pkg.code_files == () and pkg.commands == ()
    assert effective_commands(pkg) == ()


def test_missing_instruction_doc(tmp_path):
    with pytest.raises(MissingInstructionDoc):
        parse_skill_package(tmp_path)
    with pytest.raises(MissingInstructionDoc):
        parse_skill_package(tmp_path / "nope")


def test_readme_fallback_and_directory_name(make_skill):
    root = make_skill({"README.md": "# Tool\n\nDoes things.\n"}, name="my-tool")
    pkg = parse_skill_package(root)
    assert pkg.name == "my-tool" and pkg.instruction_path == "README.md"


def test_malformed_frontmatter_is_a_warning(make_skill):
    root = make_skill({"SKILL.md": "---\nname: x\nnot a pair\n---\nbody\n"}, name="fallback")
    pkg = parse_skill_package(root)
    assert pkg.name == "fallback"
    assert any("malformed frontmatter" in w for w in pkg.warnings)


def test_frontmatter_parsing():
    meta, body = parse_frontmatter("---\nname: 'abc'\ndescription: d: e\n---\n# T\n")
    assert meta == {"name": "abc", "description": "d: e"} and body == "# T\n"
    assert parse_frontmatter("# no front\n") == ({}, "# no front\n")
    with pytest.raises(MalformedFrontmatter):
        parse_frontmatter("---\nname: x\n")


def test_path_separator_in_name_is_ignored(make_skill):
    root = make_skill({"SKILL.md": "---\nname: ../evil\n---\n# T\n\nText.\n"}, name="safe")
    pkg = parse_skill_package(root)
    assert pkg.name == "safe" and pkg.warnings


def test_extract_commands_handles_prompts_continuations_and_tags():
    doc = (
        "```bash\n$ tool run \\\n  --fast\n# comment\nother --x\n```\n"
        "```python\nprint('not a command')\n```\n"
        "```console\n$ ls -la\nfile.txt\n```\n"
    )
    raws = [c.raw for c in extract_commands(doc)]
    assert raws == ["tool run --fast", "other --x", "ls -la"]
    assert [c.source_block_index for c in extract_commands(doc)] == [0, 0, 1]


def test_command_spec_rejects_empty():
    with pytest.raises(ValueError):
        CommandSpec.from_raw("   ")


def test_inferred_commands_when_none_documented(make_skill):
    root = make_skill({"SKILL.md": "# T\n\nRuns a script.\n", "main.sh": "echo hi\n"})
    pkg = parse_skill_package(root)
    assert [c.raw for c in effective_commands(pkg)] == ["sh main.sh"]


def test_materialize_overlays_in_memory_edits(fixture_skill, tmp_path):
    pkg = parse_skill_package(fixture_skill("weather"))
    edited = pkg.with_instruction("# new\n").with_code_files((("scripts/run.py", "print('x')\n"),))
    dest = materialize(edited, tmp_path / "out")
    assert (dest / "SKILL.md").read_text() == "# new\n"
    assert (dest / "scripts/run.py").read_text() == "print('x')\n"


def test_content_digest_tracks_edits(fixture_skill):
    pkg = parse_skill_package(fixture_skill("weather"))
    assert pkg.content_digest() == parse_skill_package(pkg.root).content_digest()
    assert pkg.with_instruction(pkg.instruction + "x").content_digest() != pkg.content_digest()


def test_skill_type_invariant(fixture_skill):
    pkg = parse_skill_package(fixture_skill("weather"))
    with pytest.raises(ValueError):
        pkg.with_code_files(())


def test_capability_profile(fixture_skill):
    profile = extract_capability_profile(parse_skill_package(fixture_skill("weather")))
    assert profile.core_functions[0].startswith("Summarize temperature readings")
    assert any("1000 rows" in c for c in profile.constraints + profile.boundary_conditions)
    assert not profile.is_empty()
