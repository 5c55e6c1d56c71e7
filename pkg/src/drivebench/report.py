"""Benchmark runner: scenario x planner cells, score tables and run artifacts."""
from __future__ import annotations

import contextlib
import csv
import dataclasses
import glob
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import ConfigError, RunConfig, config_to_dict
from .geometry import EgoFrameTransform
from .metrics import closed_loop_score, open_loop_report
from .planners import ChainOraclePlanner, IdmPlanner, LlmPlanner, LogReplayPlanner, StubServer
from .prompt import build_prompt
from .response import render_response
from .scenario import ScenarioFile, build_scenario_state, load_scenario, start_index
from .simulator import SimMode, run_closed_loop
from .synth import SynthSpec, synth_scenario

SUMMARY_COLUMNS = ("planner", "OLS", "NR-CLS", "R-CLS")
CLOSED_FIELDS = ("status", "cls", "collision_free", "drivable", "direction", "progress", "comfort", "speed")
DETAIL_COLUMNS = (
    ("planner", "scenario_id", "tag", "chain_steps", "previous_plan", "category_correction",
     "open_loop_status", "ade", "fde", "ahe", "fhe", "miss", "ols")
    + tuple(f"nr_{f}" for f in CLOSED_FIELDS)
    + tuple(f"r_{f}" for f in CLOSED_FIELDS)
    + ("error",)
)


def resolve_scenarios(config: RunConfig) -> list[ScenarioFile]:
    out = []
    for template in config.templates:
        for seed in range(config.seed, config.seed + config.seeds):
            out.append(synth_scenario(SynthSpec(template, config.background_agents), seed))
    for pattern in config.scenario_globs:
        paths = sorted(glob.glob(pattern))
        if not paths:
            raise ConfigError(f"scenario pattern {pattern!r} matches no files")
        out.extend(load_scenario(p) for p in paths)
    ids = [sf.scenario_id for sf in out]
    if len(set(ids)) != len(ids):
        raise ConfigError("scenario ids must be unique within a run")
    if not out:
        raise ConfigError("the scenario set is empty")
    return out


def make_planner(name: str, config: RunConfig, llm_url: Optional[str] = None):
    if name == "log-replay":
        return LogReplayPlanner()
    if name == "chain-oracle":
        return ChainOraclePlanner(config.chain_steps, config.chain)
    if name == "idm":
        return IdmPlanner(config.idm, dt=config.features.dt, horizon=config.features.future_horizon)
    if name == "llm":
        c = config.llm
        try:
            return LlmPlanner(llm_url or c.url, config.instructions, config.features, config.decode, c.max_tokens,
                              c.retries, c.backoff, c.timeout, config.chain)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown planner {name!r}")


def _num(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _poly(points) -> list:
    return [[round(float(x), 4), round(float(y), 4)] for x, y in points]


@dataclass
class CellResult:
    row: dict
    files: dict  # relative path -> text


def run_cell(sf: ScenarioFile, planner, config: RunConfig) -> CellResult:
    """Open-loop plan plus both closed-loop rollouts for one scenario and planner."""
    name = planner.name
    sid = sf.scenario_id
    steps = ",".join(sorted(s.value for s in config.chain_steps)) or "none"
    row = {
        "planner": name, "scenario_id": sid, "tag": sf.tag, "chain_steps": steps,
        "previous_plan": config.instructions.include_previous_plan,
        "category_correction": config.instructions.category_correction, "error": "",
    }
    files = {}
    k0 = start_index(sf, config.features)
    scene = build_scenario_state(sf, k0, config.features)
    try:
        prompt_text = build_prompt(scene, config.instructions, config.features, config.chain).text
    except ValueError as exc:
        prompt_text = f"prompt unavailable: {exc}\n"
    plan_doc = {"scenario_id": sid, "planner": name, "chain_steps": steps, "prompt": prompt_text}
    planned_global = None
    try:
        result = planner.plan(scene)
        ol = open_loop_report(result.trajectory, scene.expert_future, config.metrics)
        row.update(open_loop_status="ok", ade=ol.ade, fde=ol.fde, ahe=ol.ahe, fhe=ol.fhe, miss=ol.miss_rate, ols=ol.ols)
        plan_doc["response"] = render_response(result.chain, result.trajectory)
        planned_global = EgoFrameTransform(sf.frames[k0].ego.pose).inverse_trajectory(result.trajectory)
    except Exception as exc:  # planner failures are scored, not raised
        row.update(open_loop_status="failed", ade=float("nan"), fde=float("nan"), ahe=float("nan"),
                   fhe=float("nan"), miss=1.0, ols=0.0, error=str(exc))
        plan_doc["response"] = f"planner failed: {exc}\n"
    files[f"openloop/{name}/{sid}.json"] = json.dumps(plan_doc, sort_keys=True, indent=1)

    n = config.sim.steps
    log_step = int(round(config.sim.dt / 0.1))
    plot = {
        "expert": _poly((sf.frames[k0 + k * log_step].ego.x, sf.frames[k0 + k * log_step].ego.y) for k in range(n + 1)),
        "planned": _poly((p.x, p.y) for p in planned_global.poses) if planned_global is not None else [],
    }
    for mode, prefix in ((SimMode.NONREACTIVE, "nr"), (SimMode.REACTIVE, "r")):
        simlog = run_closed_loop(sf, planner, dataclasses.replace(config.sim, mode=mode), config.features)
        rep = closed_loop_score(simlog, config.metrics)
        row.update({
            f"{prefix}_status": simlog.status, f"{prefix}_cls": rep.cls,
            f"{prefix}_collision_free": rep.collision_free, f"{prefix}_drivable": rep.drivable_compliance,
            f"{prefix}_direction": rep.direction_compliance, f"{prefix}_progress": rep.progress_ratio,
            f"{prefix}_comfort": rep.comfort_score, f"{prefix}_speed": rep.speed_compliance,
        })
        if simlog.message and not row["error"] and simlog.status == "planner-failed":
            row["error"] = simlog.message
        files[f"simlogs/{name}/{sid}.{mode.value}.json"] = simlog.dumps()
        plot[f"driven_{mode.value}"] = _poly((r["x"], r["y"]) for r in simlog.records)
    files[f"plots/{name}/{sid}.json"] = json.dumps(plot, sort_keys=True)
    return CellResult(row, files)


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_num(r[c]) for c in columns])
    return buf.getvalue()


def summarize(rows: list[dict], planners) -> list[dict]:
    out = []
    for name in planners:
        mine = [r for r in rows if r["planner"] == name]
        k = len(mine)
        out.append({
            "planner": name,
            "OLS": sum(r["ols"] for r in mine) / k,
            "NR-CLS": sum(r["nr_cls"] for r in mine) / k,
            "R-CLS": sum(r["r_cls"] for r in mine) / k,
        })
    return out


def transcript_text(doc: dict) -> str:
    return "".join([
        f"Scenario: {doc['scenario_id']}\n",
        f"Planner: {doc['planner']}\n",
        f"Chain steps: {doc['chain_steps']}\n",
        "=== Prompt ===\n",
        doc["prompt"],
        "=== Response ===\n",
        doc["response"],
    ])


def split_transcript(text: str) -> tuple[str, str]:
    """``(prompt, response)`` sections of a transcript."""
    head, _, rest = text.partition("=== Prompt ===\n")
    prompt, _, response = rest.partition("=== Response ===\n")
    return prompt, response


def export_transcripts(run_dir) -> list[Path]:
    """Write one transcript per scenario and planner from the stored open-loop records."""
    run_dir = Path(run_dir)
    out = []
    for path in sorted((run_dir / "openloop").glob("*/*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        target = run_dir / "transcripts" / path.parent.name / (path.stem + ".txt")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(transcript_text(doc), encoding="utf-8")
        out.append(target)
    return out


def write_manifest(run_dir) -> Path:
    run_dir = Path(run_dir)
    entries = []
    for path in sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json"):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append({"path": path.relative_to(run_dir).as_posix(), "sha256": digest})
    target = run_dir / "manifest.json"
    target.write_text(json.dumps({"files": entries}, indent=1) + "\n", encoding="utf-8")
    return target


@dataclass
class RunResult:
    run_dir: Path
    summary: list
    rows: list


def run_benchmark(config: RunConfig, output_dir=None) -> RunResult:
    """Run every scenario x planner cell and write the run directory."""
    run_dir = Path(output_dir or config.output_dir)
    scenarios = resolve_scenarios(config)
    with contextlib.ExitStack() as stack:
        llm_url = None
        if "llm" in config.planners and config.llm.use_stub:
            llm_url = stack.enter_context(StubServer()).url
        planners = [make_planner(name, config, llm_url) for name in config.planners]
        cells = [(sf, p) for p in planners for sf in scenarios]
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_cell, sf, p, config) for sf, p in cells]
            results = [f.result() for f in futures]

    run_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        for rel, text in res.files.items():
            target = run_dir / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
    rows = [r.row for r in results]
    summary = summarize(rows, config.planners)
    stored = config_to_dict(config)
    stored.pop("output_dir")  # keeps run directories relocatable and comparable
    (run_dir / "config.json").write_text(json.dumps(stored, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (run_dir / "details.csv").write_text(_csv(rows, DETAIL_COLUMNS), encoding="utf-8")
    (run_dir / "report.csv").write_text(_csv(summary, SUMMARY_COLUMNS), encoding="utf-8")
    (run_dir / "report.json").write_text(
        json.dumps({"summary": summary, "scenarios": rows}, indent=1, sort_keys=True, default=str) + "\n",
        encoding="utf-8")
    export_transcripts(run_dir)
    write_manifest(run_dir)
    return RunResult(run_dir, summary, rows)


def format_table(summary: list[dict]) -> str:
    lines = [f"{'planner':<14} {'OLS':>8} {'NR-CLS':>8} {'R-CLS':>8}"]
    for r in summary:
        lines.append(f"{r['planner']:<14} {r['OLS']:8.2f} {r['NR-CLS']:8.2f} {r['R-CLS']:8.2f}")
    return "\n".join(lines)


__all__ = [
    "CellResult", "RunResult", "export_transcripts", "format_table", "make_planner", "resolve_scenarios",
    "run_benchmark", "run_cell", "split_transcript", "summarize", "transcript_text", "write_manifest",
]
