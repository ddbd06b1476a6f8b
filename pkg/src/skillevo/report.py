"""Rendering run reports: canonical JSON, a markdown summary and PNG figures."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .optimizer import OptimizationHistory  # noqa: E402
from .pipeline import RunReport  # noqa: E402

logger = logging.getLogger(__name__)

FIGURE_DIR = "figures"
_COLORS = {"original": "#8c8c8c", "optimized": "#2b6cb0"}


class WriteFailure(OSError):
    def __init__(self, path: Path, reason: str):
        super().__init__(f"cannot write {path}: {reason}")
        self.path = path


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise WriteFailure(path, str(exc)) from exc
    return path


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.2f}%"


def _num(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def _arrow(a: float | None, b: float | None, fmt=_num) -> str:
    return f"{fmt(a)} → {fmt(b)}"


def _delta(a: float | None, b: float | None, fmt=_num) -> str:
    if a is None or b is None:
        return "n/a"
    d = b - a
    sign = "+" if d >= 0 else "-"
    return f"{sign}{fmt(abs(d))}"


def _cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def render_markdown(report: RunReport, figures: Iterable[str] = ()) -> str:
    o, n = report.metrics.original, report.metrics.optimized
    lines = [
        f"# Skill evaluation report: {report.skill_name}",
        "",
        f"**Verdict: {report.decision.verdict.value.upper()}**. {report.decision.justification}",
        "",
        f"- Skill type: {report.skill_type}",
        f"- Mode: {report.config.mode.value}; seed {report.config.seed}; "
        f"{report.config.train_count} train / {report.config.test_count} test tasks",
        f"- Original digest `{report.original_digest}`, optimized digest `{report.optimized_digest}`",
        f"- Suite digest `{report.suite_digest}`, rubric digest `{report.rubric_digest}`",
        "",
        "## Comparison",
        "",
        "| Skill | Score (Ori → Opt) | Pass Rate (Ori → Opt) | Standard Task Score (Ori → Opt) "
        "| Advanced Task Score (Ori → Opt) | Improvement |",
        "|---|---|---|---|---|---|",
        f"| {report.skill_name} | {_arrow(o.average_score, n.average_score)} "
        f"| {_arrow(o.pass_rate, n.pass_rate, _pct)} "
        f"| {_arrow(o.standard_score, n.standard_score, _pct)} "
        f"| {_arrow(o.advanced_score, n.advanced_score, _pct)} "
        f"| {_delta(o.average_score, n.average_score)} |",
        "",
        "| Metric | Original | Optimized | Improvement |",
        "|---|---|---|---|",
        f"| Average score | {_num(o.average_score)} | {_num(n.average_score)} | {_delta(o.average_score, n.average_score)} |",
        f"| Pass rate | {_pct(o.pass_rate)} | {_pct(n.pass_rate)} | {_delta(o.pass_rate, n.pass_rate, _pct)} |",
        f"| Standard task score | {_pct(o.standard_score)} | {_pct(n.standard_score)} "
        f"| {_delta(o.standard_score, n.standard_score, _pct)} |",
        f"| Advanced task score | {_pct(o.advanced_score)} | {_pct(n.advanced_score)} "
        f"| {_delta(o.advanced_score, n.advanced_score, _pct)} |",
        f"| Error rate | {_pct(o.error_rate)} | {_pct(n.error_rate)} | {_delta(o.error_rate, n.error_rate, _pct)} |",
        "",
        "## Per-task breakdown",
        "",
        "| Task | Tier | Original | Optimized | Delta | Passed (Ori → Opt) |",
        "|---|---|---|---|---|---|",
    ]
    for p in report.per_task:
        lines.append(
            f"| {p.task_id} | {p.tier.value} | {p.original.points}/{p.original.max_points} "
            f"| {p.optimized.points}/{p.optimized.max_points} | {p.delta:+.3f} "
            f"| {'yes' if p.original.passed else 'no'} → {'yes' if p.optimized.passed else 'no'} |"
        )
    lines += [
        "",
        "## Capability boundary analysis",
        "",
        "| Area | Tasks | Passed (Ori → Opt) | Score (Ori → Opt) | Still failing |",
        "|---|---|---|---|---|",
    ]
    for b in report.boundary_analysis:
        failing = "; ".join(b.still_failing) if b.still_failing else "none"
        lines.append(
            f"| {b.area} | {b.tasks} | {b.original_passed} → {b.optimized_passed} "
            f"| {_arrow(b.original_score, b.optimized_score)} | {_cell(failing)} |"
        )
    q = report.document_quality
    lines += [
        "",
        f"## Document quality ({q.optimized.mode})",
        "",
        "| Dimension | Original | Optimized |",
        "|---|---|---|",
    ]
    for a, b in zip(q.original.per_dimension, q.optimized.per_dimension):
        lines.append(f"| {a.name} | {a.score:.1f} | {b.score:.1f} |")
    lines.append(f"| Overall | {q.original.overall:.1f} | {q.optimized.overall:.1f} |")
    for warning in dict.fromkeys(q.original.warnings + q.optimized.warnings):
        lines.append(f"\n> {warning}")
    h = report.history
    lines += [
        "",
        "## Optimization",
        "",
        f"- {h.epochs} epoch(s), {h.instruction_evaluations} instruction variant evaluations, "
        f"{h.fix_attempts} auto-fix attempt(s)",
        f"- Selected variants: {', '.join(h.selected_variants) or 'none'}",
        f"- Train score {_num(h.initial_train_score)} → {_num(h.final_train_score)}",
        f"- Full history: `{h.path}`",
    ]
    if report.environment.missing:
        lines += ["", f"Missing programs on this host: {', '.join(report.environment.missing)}"]
    figures = list(figures)
    if figures:
        lines += ["", "## Figures", ""]
        lines += [f"![{Path(f).stem}]({f})" for f in figures]
    if report.notes:
        lines += ["", "## Notes", ""] + [f"- {note}" for note in report.notes]
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _save(fig, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    except OSError as exc:
        raise WriteFailure(path, str(exc)) from exc
    finally:
        plt.close(fig)
    return path


def plot_metrics(report: RunReport, path: Path) -> Path:
    labels = ["Score", "Pass rate", "Standard", "Advanced", "Error rate"]
    fields = ["average_score", "pass_rate", "standard_score", "advanced_score", "error_rate"]
    fig, ax = plt.subplots(figsize=(7, 3.6))
    width = 0.38
    for k, (name, summary) in enumerate((("original", report.metrics.original), ("optimized", report.metrics.optimized))):
        values = [getattr(summary, f) for f in fields]
        xs = [i + (k - 0.5) * width for i in range(len(labels))]
        ax.bar(xs, [v if v is not None else 0 for v in values], width, label=name, color=_COLORS[name])
        for x, v in zip(xs, values):
            if v is None:
                ax.text(x, 0.02, "n/a", ha="center", fontsize=7)
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{report.skill_name}: original vs optimized")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_per_task(report: RunReport, path: Path) -> Path:
    rows = list(report.per_task)
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1.2))
    ys = range(len(rows))
    ax.barh([y + 0.2 for y in ys], [p.original.normalized for p in rows], 0.4, color=_COLORS["original"], label="original")
    ax.barh([y - 0.2 for y in ys], [p.optimized.normalized for p in rows], 0.4, color=_COLORS["optimized"], label="optimized")
    threshold = report.config.pass_threshold
    ax.axvline(threshold, color="#c53030", linestyle="--", linewidth=1, label=f"threshold {threshold:g}")
    ax.set_yticks(list(ys), [p.task_id for p in rows], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlim(0, 1.05)
    ax.set_xlabel("normalized score")
    ax.legend(frameon=False, fontsize=7, loc="lower right")
    return _save(fig, path)


def plot_history(history: dict, path: Path) -> Path:
    """Variant rewards per epoch, from the history.json document."""
    epochs = history.get("epochs", [])
    fig, ax = plt.subplots(figsize=(6, 3.4))
    xs, selected = [], []
    for e in epochs:
        rewards = [v["reward"] for v in e["variants"]]
        ax.scatter([e["epoch"]] * len(rewards), rewards, color="#a0aec0", zorder=2)
        best = next(v["reward"] for v in e["variants"] if v["selected"])
        xs.append(e["epoch"])
        selected.append(best)
    ax.plot(xs, selected, color=_COLORS["optimized"], marker="o", label="selected variant", zorder=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean train score")
    ax.set_ylim(-0.02, 1.05)
    ax.set_xticks(xs)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_dimensions(report: RunReport, path: Path) -> Path:
    q = report.document_quality
    names = [d.name for d in q.original.per_dimension]
    fig, ax = plt.subplots(figsize=(7, 3.8))
    ys = range(len(names))
    ax.barh([y + 0.2 for y in ys], [d.score for d in q.original.per_dimension], 0.4, color=_COLORS["original"], label="original")
    ax.barh([y - 0.2 for y in ys], [d.score for d in q.optimized.per_dimension], 0.4, color=_COLORS["optimized"], label="optimized")
    ax.set_yticks(list(ys), names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlim(0, 100)
    ax.set_title(f"Document quality ({q.optimized.mode})")
    ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def render_figures(report: RunReport, out_dir: Path, history: dict | None = None) -> list[Path]:
    fig_dir = out_dir / FIGURE_DIR
    paths = [
        plot_metrics(report, fig_dir / "metrics.png"),
        plot_per_task(report, fig_dir / "per_task.png"),
        plot_dimensions(report, fig_dir / "dimensions.png"),
    ]
    if history and history.get("epochs"):
        paths.append(plot_history(history, fig_dir / "history.png"))
    return paths


def emit_report(
    report: RunReport,
    out_dir: str | Path,
    formats: Iterable[str] = ("json", "md"),
    history: OptimizationHistory | dict | None = None,
    figures: bool = True,
) -> list[Path]:
    """Write report.json and/or report.md; figures accompany the markdown."""
    out_dir = Path(out_dir)
    if isinstance(history, OptimizationHistory):
        history = history.to_document()
    formats = set(formats)
    written: list[Path] = []
    if "json" in formats:
        written.append(_write(out_dir / "report.json", report.to_json()))
    if "md" in formats:
        fig_paths = render_figures(report, out_dir, history) if figures else []
        rel = [p.relative_to(out_dir).as_posix() for p in fig_paths]
        written.append(_write(out_dir / "report.md", render_markdown(report, rel)))
        written += fig_paths
    return written
