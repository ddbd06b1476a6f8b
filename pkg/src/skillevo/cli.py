"""Command-line entry point.

Exit codes: 0 success, 1 fatal error, 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import TOOL_VERSION
from .exec_engine import OPTIMIZED, ORIGINAL, ComparativeRunLog, Mode
from .llm_gateway import DEFAULT_ENDPOINT, DEFAULT_MODEL, Gateway, GatewayConfig
from .skill_model import SkillError, extract_capability_profile, parse_skill_package
from .task_gen import GenerationConfig, InsufficientProfile, TaskSuite, generate_task_suite

logger = logging.getLogger("skillevo")

EXIT_OK, EXIT_FATAL, EXIT_USAGE = 0, 1, 2


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _threshold(text: str) -> float:
    value = float(text.rstrip("%")) / (100 if text.endswith("%") else 1)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"threshold must be in (0, 1], got {text}")
    return value


def _add_gateway_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model gateway")
    g.add_argument("--offline", action="store_true", help="never call the model; use deterministic fallbacks")
    g.add_argument("--model", default=DEFAULT_MODEL)
    g.add_argument("--endpoint", default=DEFAULT_ENDPOINT)
    g.add_argument("--api-key-env", default="ANTHROPIC_API_KEY", help="environment variable holding the API key")
    g.add_argument("--llm-timeout-ms", type=_positive_int, default=60_000)
    g.add_argument("--llm-retries", type=int, default=1)
    g.add_argument("--trace", action="store_true", help="log model requests and responses (key redacted)")


def _gateway_config(args: argparse.Namespace) -> GatewayConfig:
    return GatewayConfig(
        endpoint=args.endpoint,
        model=args.model,
        api_key_env=args.api_key_env,
        timeout_ms=args.llm_timeout_ms,
        max_retries=max(0, args.llm_retries),
        offline=args.offline,
        trace=args.trace,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillevo", description="Probe, optimize and evaluate agent skill packages.")
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline: generate, optimize, compare, decide, report")
    run.add_argument("--skill-dir", required=True)
    run.add_argument("--output-dir", default="skillevo-out")
    run.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.REAL.value)
    run.add_argument("--epochs", "--num-epochs", dest="num_epochs", type=_positive_int, default=3)
    run.add_argument("--group-size", type=_positive_int, default=3)
    run.add_argument("--max-iterations", type=_positive_int, default=2)
    run.add_argument("--train-count", type=_positive_int, default=12)
    run.add_argument("--test-count", type=_positive_int, default=8)
    run.add_argument("--pass-threshold", type=_threshold, default=0.70)
    run.add_argument("--parallelism", type=_positive_int, default=4)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--timeout-ms", type=_positive_int, default=30_000, help="per-command timeout")
    run.add_argument("--max-output-bytes", type=_positive_int, default=1 << 20)
    run.add_argument("--format", dest="formats", action="append", choices=["json", "md"],
                     help="report format (repeatable; default json and md)")
    run.add_argument("--no-figures", action="store_true")
    _add_gateway_flags(run)

    gen = sub.add_parser("generate-tasks", help="write the task suite only")
    gen.add_argument("--skill-dir", required=True)
    gen.add_argument("--output", help="tasks.json path (default: stdout)")
    gen.add_argument("--train-count", type=_positive_int, default=12)
    gen.add_argument("--test-count", type=_positive_int, default=8)
    gen.add_argument("--seed", type=int, default=0)
    _add_gateway_flags(gen)

    ev = sub.add_parser("evaluate", help="score an existing run log against its tasks")
    ev.add_argument("--run-dir", required=True, help="directory holding tasks.json and execution.log.jsonl")
    ev.add_argument("--pass-threshold", type=_threshold, default=0.70)
    ev.add_argument("--output", help="write the evaluation JSON here (default: stdout)")

    rep = sub.add_parser("report", help="re-render report.md and figures from report.json")
    rep.add_argument("--run-dir", required=True)
    rep.add_argument("--no-figures", action="store_true")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    from .pipeline import PipelineConfig, run_pipeline

    try:
        cfg = PipelineConfig(
            skill_dir=args.skill_dir,
            output_dir=args.output_dir,
            mode=Mode(args.mode),
            num_epochs=args.num_epochs,
            group_size=args.group_size,
            max_iterations=args.max_iterations,
            train_count=args.train_count,
            test_count=args.test_count,
            pass_threshold=args.pass_threshold,
            parallelism=args.parallelism,
            seed=args.seed,
            timeout_ms=args.timeout_ms,
            max_output_bytes=args.max_output_bytes,
            gateway=_gateway_config(args),
            formats=tuple(dict.fromkeys(args.formats or ("json", "md"))),
        )
    except ValueError as exc:
        print(f"skillevo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = run_pipeline(cfg, figures=not args.no_figures)
    o, n = report.metrics.original, report.metrics.optimized
    print(f"{report.skill_name}: {report.decision.verdict.value} "
          f"(score {o.average_score:.3f} -> {n.average_score:.3f}, "
          f"pass rate {o.pass_rate:.3f} -> {n.pass_rate:.3f}); report in {cfg.output_dir}")
    return EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    pkg = parse_skill_package(args.skill_dir)
    profile = extract_capability_profile(pkg)
    gateway = Gateway(_gateway_config(args))
    suite = generate_task_suite(profile, pkg, GenerationConfig(args.train_count, args.test_count, args.seed, gateway))
    if args.output:
        suite.write(args.output)
        print(f"wrote {len(suite.train)} train and {len(suite.test)} test tasks to {args.output}")
    else:
        sys.stdout.write(suite.to_json())
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    from .evaluator import compute_metrics, decide_retention
    from .pipeline import pair_scores, score_log
    from .rubric import builtin_rubric
    from .serde import to_jsonable

    run_dir = Path(args.run_dir)
    suite = TaskSuite.from_json((run_dir / "tasks.json").read_text("utf-8"))
    log = ComparativeRunLog.read_jsonl(run_dir / "execution.log.jsonl")
    rubric = dataclasses.replace(builtin_rubric(), pass_threshold=args.pass_threshold)
    tasks = list(suite.test)
    scores = score_log(log, tasks, rubric)
    metrics = {v: compute_metrics(scores[v], log.for_version(v)) for v in (ORIGINAL, OPTIMIZED)}
    paired = pair_scores(tasks, scores)
    decision = decide_retention(metrics[ORIGINAL], metrics[OPTIMIZED], ((p.original, p.optimized) for p in paired))
    doc = {"metrics": to_jsonable(metrics), "decision": to_jsonable(decision), "per_task": to_jsonable(paired)}
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"{decision.verdict.value}: {decision.justification}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .pipeline import RunReport
    from .report import emit_report

    run_dir = Path(args.run_dir)
    report = RunReport.from_json((run_dir / "report.json").read_text("utf-8"))
    history_path = run_dir / "history.json"
    history = json.loads(history_path.read_text("utf-8")) if history_path.exists() else None
    written = emit_report(report, run_dir, {"md"}, history=history, figures=not args.no_figures)
    for path in written:
        print(path)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "generate-tasks": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help/--version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "trace", False):
        logging.getLogger("skillevo.llm.trace").setLevel(logging.INFO)
    try:
        return _COMMANDS[args.command](args)
    except (SkillError, InsufficientProfile) as exc:
        print(f"skillevo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (OSError, ValueError, KeyError) as exc:
        print(f"skillevo: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
