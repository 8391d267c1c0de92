"""Command-line front end: campaigns, ablations, threshold sweeps,
offline trajectory scoring and memory-bank management.

Every subcommand is deterministic under (config, seed): repeated runs
write byte-identical CSV/JSON outputs. Exit codes: 0 ok, 2 usage or
configuration error, 3 environment fault budget exceeded.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import AppConfig, load_config
from .errors import ConfigError, ParseError, ValidationError
from .evaluation import evaluate
from .geometry import Pose, Trajectory
from .loop import CampaignReport, TaskStats, config_fingerprint, run_campaign
from .memory import MemoryStore

_EXIT_FAULT_BUDGET = 3


def _load_app_config(config_path) -> AppConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


def _apply_toggles(config, correction, termination, gate_threshold, max_steps):
    loop = config.loop
    if correction is not None:
        loop = dataclasses.replace(loop, correction_enabled=correction)
    if termination is not None:
        loop = dataclasses.replace(loop, termination_enabled=termination)
    if gate_threshold is not None:
        if not 0.0 <= gate_threshold <= 1.0:
            raise click.UsageError(f"--gate-threshold must lie in [0, 1], got {gate_threshold}")
        loop = dataclasses.replace(
            loop, evaluation=dataclasses.replace(loop.evaluation, gate_threshold=gate_threshold)
        )
    if max_steps is not None:
        loop = dataclasses.replace(loop, max_steps=max_steps)
    return loop


def _open_store(loop_config, memory_params, bank_path):
    image_shape = (loop_config.termination.resolution[1], loop_config.termination.resolution[0])
    if bank_path is None:
        return MemoryStore(
            feature_dim=loop_config.feature_dim,
            image_shape=image_shape,
            entry_capacity=memory_params.entry_capacity,
            image_capacity=memory_params.image_capacity,
        )
    try:
        return MemoryStore.load(
            bank_path,
            feature_dim=loop_config.feature_dim,
            image_shape=image_shape,
            entry_capacity=memory_params.entry_capacity,
            image_capacity=memory_params.image_capacity,
        )
    except (ConfigError, ParseError, OSError) as exc:
        raise click.UsageError(f"cannot load bank {bank_path}: {exc}") from exc


def _write_outputs(out_dir: Path, csv_name: str, csv_text: str, summary: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / csv_name).write_text(csv_text, encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _check_fault_budget(report: CampaignReport, budget: int) -> None:
    faults = sum(t.env_failures for t in report.tasks)
    if faults > budget:
        click.echo(f"environment fault budget exceeded: {faults} > {budget}", err=True)
        sys.exit(_EXIT_FAULT_BUDGET)


_shared_options = [
    click.option(
        "--config",
        "config_path",
        envvar="SCT_CONFIG",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="Configuration file (YAML); SCT_CONFIG is the fallback.",
    ),
    click.option("--task", "tasks", multiple=True, default=("object",), show_default=True,
                 help="Task id, repeatable: family or family:kind."),
    click.option("--episodes", default=10, show_default=True, type=click.IntRange(min=1)),
    click.option("--seed", default=0, show_default=True, type=int),
    click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
                 default=Path("out"), show_default=True),
    click.option("--bank", "bank_path", type=click.Path(dir_okay=False, path_type=Path),
                 default=None, help="Load this memory store before the campaign."),
    click.option("--save-bank", "save_bank", type=click.Path(dir_okay=False, path_type=Path),
                 default=None, help="Save the final memory store here."),
    click.option("--freeze-bank", is_flag=True, default=False,
                 help="Read-only replay: never update the memory store."),
    click.option("--parallel", default=1, show_default=True, type=click.IntRange(min=1),
                 help="Worker processes; requires --freeze-bank."),
    click.option("--fault-budget", default=0, show_default=True, type=click.IntRange(min=0),
                 help="Max tolerated environment failures before exit 3."),
    click.option("--max-steps", default=None, type=click.IntRange(min=1),
                 help="Override the episode step limit."),
]


def _with_shared_options(fn):
    for option in reversed(_shared_options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Self-correction and termination control layer tools."""


@main.command()
@_with_shared_options
@click.option("--correction/--no-correction", "correction", default=None,
              help="Override the correction toggle.")
@click.option("--termination/--no-termination", "termination", default=None,
              help="Override the termination toggle.")
@click.option("--gate-threshold", type=float, default=None,
              help="Override the quality gate threshold.")
def run(config_path, tasks, episodes, seed, out_dir, bank_path, save_bank, freeze_bank,
        parallel, fault_budget, max_steps, correction, termination, gate_threshold):
    """Run one campaign and write campaign.csv plus summary.json."""
    app = _load_app_config(config_path)
    loop_config = _apply_toggles(app, correction, termination, gate_threshold, max_steps)
    store = _open_store(loop_config, app.memory, bank_path)
    if parallel > 1 and not freeze_bank:
        raise click.UsageError("--parallel requires --freeze-bank (read-only replay)")
    try:
        report, _ = run_campaign(
            list(tasks), loop_config, episodes, seed,
            store=store, freeze_store=freeze_bank, parallel=parallel,
        )
    except ValidationError as exc:
        raise click.UsageError(str(exc)) from exc
    _write_outputs(out_dir, "campaign.csv", report.to_csv(), report.to_summary())
    if save_bank is not None:
        store.save(save_bank)
    _check_fault_budget(report, fault_budget)
    click.echo(f"campaign written to {out_dir / 'campaign.csv'}")


@main.command()
@_with_shared_options
def ablate(config_path, tasks, episodes, seed, out_dir, bank_path, save_bank, freeze_bank,
           parallel, fault_budget, max_steps):
    """Run the four toggle combinations on identical seeds (ablation.csv)."""
    app = _load_app_config(config_path)
    base = _apply_toggles(app, None, None, None, max_steps)
    if parallel > 1 and not freeze_bank:
        raise click.UsageError("--parallel requires --freeze-bank (read-only replay)")
    combos = ((False, False), (True, False), (False, True), (True, True))
    lines = [
        "# schema: sct-ablation-v1",
        "correction,termination,config_hash,episodes,success_rate,timeout_rate,mean_steps,"
        "activation_rate",
    ]
    summary = {}
    total_faults = 0
    for correction, termination in combos:
        loop_config = dataclasses.replace(
            base, correction_enabled=correction, termination_enabled=termination
        )
        store = _open_store(loop_config, app.memory, bank_path)
        try:
            report, _ = run_campaign(
                list(tasks), loop_config, episodes, seed,
                store=store, freeze_store=freeze_bank, parallel=parallel,
            )
        except ValidationError as exc:
            raise click.UsageError(str(exc)) from exc
        episodes_total = sum(t.episodes for t in report.tasks)
        successes = sum(t.successes for t in report.tasks)
        timeouts = sum(t.timeouts for t in report.tasks)
        steps = [s for t in report.tasks for s in t.steps_to_success]
        evaluated = sum(t.windows_evaluated for t in report.tasks)
        gated = sum(t.windows_gated for t in report.tasks)
        total_faults += sum(t.env_failures for t in report.tasks)
        mean_steps = sum(steps) / len(steps) if steps else float("nan")
        lines.append(
            f"{int(correction)},{int(termination)},{report.config_hash},{episodes_total},"
            f"{successes / episodes_total:.4f},{timeouts / episodes_total:.4f},"
            f"{mean_steps:.4f},{gated / evaluated if evaluated else 0.0:.4f}"
        )
        summary[f"correction={int(correction)},termination={int(termination)}"] = {
            "config_hash": report.config_hash,
            "success_rate": round(successes / episodes_total, 4),
            "timeout_rate": round(timeouts / episodes_total, 4),
        }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if total_faults > fault_budget:
        click.echo(f"environment fault budget exceeded: {total_faults} > {fault_budget}", err=True)
        sys.exit(_EXIT_FAULT_BUDGET)
    click.echo(f"ablation written to {out_dir / 'ablation.csv'}")


@main.command()
@_with_shared_options
@click.option("--grid", default="0.55,0.65,0.75,0.85,0.95", show_default=True,
              help="Comma-separated gate thresholds, strictly increasing, in [0, 1].")
def sweep(config_path, tasks, episodes, seed, out_dir, bank_path, save_bank, freeze_bank,
          parallel, fault_budget, max_steps, grid):
    """Sweep the quality gate threshold on identical seeds (sweep.csv)."""
    app = _load_app_config(config_path)
    try:
        thresholds = [float(v) for v in grid.split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(f"cannot parse --grid: {exc}") from exc
    if not thresholds:
        raise click.UsageError("--grid must contain at least one threshold")
    if any(not 0.0 <= v <= 1.0 for v in thresholds):
        raise click.UsageError(f"--grid values must lie in [0, 1], got {thresholds}")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise click.UsageError(f"--grid values must be strictly increasing, got {thresholds}")
    if parallel > 1 and not freeze_bank:
        raise click.UsageError("--parallel requires --freeze-bank (read-only replay)")

    lines = ["# schema: sct-sweep-v1", "threshold,activation_rate,success_rate"]
    total_faults = 0
    for threshold in thresholds:
        loop_config = _apply_toggles(app, None, None, threshold, max_steps)
        store = _open_store(loop_config, app.memory, bank_path)
        try:
            report, _ = run_campaign(
                list(tasks), loop_config, episodes, seed,
                store=store, freeze_store=freeze_bank, parallel=parallel,
            )
        except ValidationError as exc:
            raise click.UsageError(str(exc)) from exc
        episodes_total = sum(t.episodes for t in report.tasks)
        successes = sum(t.successes for t in report.tasks)
        evaluated = sum(t.windows_evaluated for t in report.tasks)
        gated = sum(t.windows_gated for t in report.tasks)
        total_faults += sum(t.env_failures for t in report.tasks)
        lines.append(
            f"{threshold:.4f},{gated / evaluated if evaluated else 0.0:.4f},"
            f"{successes / episodes_total:.4f}"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if total_faults > fault_budget:
        click.echo(f"environment fault budget exceeded: {total_faults} > {fault_budget}", err=True)
        sys.exit(_EXIT_FAULT_BUDGET)
    click.echo(f"sweep written to {out_dir / 'sweep.csv'}")


def _parse_pose_log(path: Path) -> Trajectory:
    lines = path.read_text(encoding="utf-8").splitlines()
    times: list[float] = []
    poses: list[Pose] = []
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        fields = [f.strip() for f in stripped.split(",")]
        if lineno == 1 and any(not _is_number(f) for f in fields):
            continue  # header row
        if len(fields) != 8:
            raise ParseError(f"expected 8 comma-separated values, got {len(fields)}", lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from exc
        quat = np.array(values[4:8])
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > 1e-6:
            raise ParseError(f"quaternion norm {norm!r} is not 1 within 1e-6", lineno)
        times.append(values[0])
        poses.append(Pose(np.array(values[1:4]), quat))
    if len(poses) < 2:
        raise ParseError("pose log needs at least 2 rows", len(lines))
    gaps = np.diff(np.array(times))
    dt = float(gaps[0])
    if dt <= 0.0 or np.any(np.abs(gaps - dt) > 1e-9 + 1e-6 * abs(dt)):
        raise ParseError("time column must be uniformly increasing", len(lines))
    return Trajectory(tuple(poses), dt)


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _parse_trace_poses(path: Path) -> Trajectory:
    dt = None
    poses: list[Pose] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        kind = record.get("kind")
        if kind == "episode":
            dt = float(record["dt"])
        elif kind == "step":
            p = record["pose"]
            poses.append(Pose(np.array(p[:3]), np.array(p[3:7])))
    if dt is None or len(poses) < 2:
        raise ParseError("trace contains no scoreable pose sequence", 1)
    return Trajectory(tuple(poses), dt)


@main.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--config", "config_path", envvar="SCT_CONFIG",
              type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also write the report JSON here.")
def score(log_path, config_path, out_path):
    """Score a pose log (CSV: t,px,py,pz,qw,qx,qy,qz) or an episode trace."""
    app = _load_app_config(config_path)
    first = log_path.read_text(encoding="utf-8").lstrip()[:1]
    try:
        traj = _parse_trace_poses(log_path) if first == "{" else _parse_pose_log(log_path)
        report = evaluate(traj, app.loop.evaluation)
    except (ParseError, ValidationError) as exc:
        raise click.UsageError(str(exc)) from exc
    payload = {k: (round(v, 4) if isinstance(v, float) else v) for k, v in report.to_dict().items()}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    click.echo(text, nl=False)
    if out_path is not None:
        out_path.write_text(text, encoding="utf-8")


@main.group()
def bank():
    """Inspect and manage memory-store files."""


@bank.command("inspect")
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--config", "config_path", envvar="SCT_CONFIG",
              type=click.Path(dir_okay=False, path_type=Path), default=None)
def bank_inspect(path, config_path):
    """Print entry/image counts and dimensions of a store file."""
    app = _load_app_config(config_path)
    loop_config = app.loop
    try:
        store = MemoryStore.load(
            path,
            feature_dim=loop_config.feature_dim,
            image_shape=(loop_config.termination.resolution[1],
                         loop_config.termination.resolution[0]),
            entry_capacity=app.memory.entry_capacity,
            image_capacity=app.memory.image_capacity,
        )
    except (ConfigError, ParseError) as exc:
        raise click.UsageError(str(exc)) from exc
    entries, images = store.sizes
    click.echo(json.dumps(
        {
            "entries": entries,
            "images": images,
            "feature_dim": store.feature_dim,
            "image_shape": list(store.image_shape),
        },
        sort_keys=True, indent=2,
    ))


@bank.command("init")
@click.argument("path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--config", "config_path", envvar="SCT_CONFIG",
              type=click.Path(dir_okay=False, path_type=Path), default=None)
def bank_init(path, config_path):
    """Write an empty store file with the configured dimensions."""
    app = _load_app_config(config_path)
    store = MemoryStore(
        feature_dim=app.loop.feature_dim,
        image_shape=(app.loop.termination.resolution[1], app.loop.termination.resolution[0]),
        entry_capacity=app.memory.entry_capacity,
        image_capacity=app.memory.image_capacity,
    )
    store.save(path)
    click.echo(f"empty bank written to {path}")


if __name__ == "__main__":
    main()
