"""Command-line entry point.

Subcommands: ``run`` (benchmark), ``synth`` (write template scenarios),
``score`` (re-score stored SimLogs) and ``transcripts`` (re-export transcripts).
Exit codes: 0 success, 1 harness fault, 2 invalid config.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .chain import ALL_STEPS, parse_steps
from .config import PLANNER_NAMES, ConfigError, RunConfig, load_run_config
from .metrics import MetricConfig, closed_loop_score
from .report import export_transcripts, format_table, run_benchmark
from .scenario import ScenarioFormatError, save_scenario
from .simulator import SimLog
from .synth import TEMPLATES, SynthSpec, synth_scenario

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_CONFIG = 2

log = logging.getLogger("drivebench")
ALL_STEP_NAMES = tuple(sorted(s.value for s in ALL_STEPS))


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivebench", description="Closed-loop planner benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run planners over a scenario set")
    run.add_argument("--config", help="JSON run configuration")
    run.add_argument("--output", help="run directory (overrides the config)")
    run.add_argument("--planners", type=_csv_list, help=f"comma list from {', '.join(PLANNER_NAMES)}")
    run.add_argument("--templates", type=_csv_list, help=f"comma list from {', '.join(TEMPLATES)}")
    run.add_argument("--seeds", type=int, help="seeds per template")
    run.add_argument("--seed", type=int, help="first seed")
    run.add_argument("--scenarios", action="append", help="glob of scenario files (repeatable)")
    run.add_argument("--chain-steps", help="comma list of s1..s4, 'none' or 'full'")
    run.add_argument("--previous-plan", action=argparse.BooleanOptionalAction, default=None,
                     help="include the previous plan in the prompt")
    run.add_argument("--category-correction", action=argparse.BooleanOptionalAction, default=None,
                     help="correct agent categories from footprint area")
    run.add_argument("--workers", type=int, help="parallel cells")
    run.add_argument("--llm-url", help="LLM endpoint (also DRIVEBENCH_LLM_URL)")
    run.add_argument("--llm-stub", action="store_true", help="serve the llm planner from a local stub")

    synth = sub.add_parser("synth", help="write synthetic template scenarios")
    synth.add_argument("--output", required=True, help="directory for scenario files")
    synth.add_argument("--templates", type=_csv_list, default=TEMPLATES)
    synth.add_argument("--seeds", type=int, default=3)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--background-agents", type=int, default=0)

    score = sub.add_parser("score", help="re-score SimLog files or a run directory")
    score.add_argument("paths", nargs="+", help="SimLog files or directories searched recursively")
    score.add_argument("--config", help="JSON run configuration supplying metric constants")
    score.add_argument("--output", help="write the score table to this CSV file")

    tr = sub.add_parser("transcripts", help="re-export prompt/response transcripts of a run")
    tr.add_argument("run_dir")
    return parser


def _run_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    top = {}
    for key in ("planners", "templates", "seeds", "seed", "workers"):
        value = getattr(args, key)
        if value is not None:
            top[key] = value
    if args.output:
        top["output_dir"] = args.output
    if args.scenarios:
        top["scenario_globs"] = tuple(args.scenarios)
        if args.templates is None:
            top["templates"] = ()
    if args.chain_steps is not None:
        text = args.chain_steps.strip().lower()
        names = () if text == "none" else ALL_STEP_NAMES if text == "full" else _csv_list(text)
        try:
            top["chain_steps"] = parse_steps(names)
        except ValueError as exc:
            raise ConfigError(f"bad --chain-steps: {exc}") from exc
    instructions = config.instructions
    if args.previous_plan is not None:
        instructions = dataclasses.replace(instructions, include_previous_plan=args.previous_plan)
    if args.category_correction is not None:
        instructions = dataclasses.replace(instructions, category_correction=args.category_correction)
    llm = config.llm
    if args.llm_url:
        llm = dataclasses.replace(llm, url=args.llm_url)
    if args.llm_stub:
        llm = dataclasses.replace(llm, use_stub=True)
    try:
        return dataclasses.replace(config, instructions=instructions, llm=llm, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args) -> int:
    config = _run_config(args)
    result = run_benchmark(config)
    print(format_table(result.summary))
    failed = sum(1 for r in result.rows if r["error"])
    if failed:
        print(f"{failed} cell(s) recorded planner failures; see details.csv")
    print(f"artifacts: {result.run_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for template in args.templates:
        if template not in TEMPLATES:
            raise ConfigError(f"unknown template {template!r}")
        for seed in range(args.seed, args.seed + args.seeds):
            sf = synth_scenario(SynthSpec(template, args.background_agents), seed)
            path = save_scenario(sf, out / f"{sf.scenario_id}.json")
            print(path)
    return EXIT_OK


SCORE_COLUMNS = ("file", "scenario_id", "planner", "mode", "status", "cls", "collision_free", "drivable",
                 "direction", "progress", "comfort", "speed")


def cmd_score(args) -> int:
    metrics = load_run_config(args.config).metrics if args.config else MetricConfig()
    files = []
    for p in map(Path, args.paths):
        if not p.exists():
            raise ConfigError(f"{p} does not exist")
        files.extend(sorted(p.rglob("*.json")) if p.is_dir() else [p])
    rows = []
    for f in files:
        try:
            simlog = SimLog.load(f)
        except (KeyError, TypeError, ValueError):
            log.debug("skipping %s: not a SimLog", f)
            continue
        rep = closed_loop_score(simlog, metrics)
        rows.append([str(f), simlog.scenario_id, simlog.planner, simlog.mode, simlog.status, rep.cls,
                     rep.collision_free, rep.drivable_compliance, rep.direction_compliance, rep.progress_ratio,
                     rep.comfort_score, rep.speed_compliance])
    if not rows:
        raise ConfigError("no SimLog files found")
    handle = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        w.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    finally:
        if handle is not sys.stdout:
            handle.close()
    return EXIT_OK


def cmd_transcripts(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "openloop").is_dir():
        raise ConfigError(f"{run_dir} is not a run directory")
    paths = export_transcripts(run_dir)
    print(f"wrote {len(paths)} transcript(s) under {run_dir / 'transcripts'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "synth": cmd_synth, "score": cmd_score, "transcripts": cmd_transcripts}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, matching the invalid-config code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.exception("harness fault")
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
