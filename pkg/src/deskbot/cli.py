"""Command-line entry points; each verb is a thin composition of module
operations. Every run writes a machine-readable JSON report next to its
artifacts. Exit codes: 0 success, 1 runtime failure (structured error on
stderr), 2 usage error."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import episodes as E
from . import policy as P
from . import orchestrator as O
from .errors import DeskbotError
from .planner import PlannerConfig, decompose, rule_plan
from .sim import get_task, load_task, run_scripted_episode
from .sim.evaluate import evaluate, format_stage_table, make_policy_runner
from .vision import fusion_overhead

VARIANTS = {
    "dp": (False, False),
    "dp_quat": (True, False),
    "dp_fusion": (False, True),
    "dp_full": (True, True),
}


def _fail(e: Exception) -> None:
    err = {"error": type(e).__name__, "message": str(e)}
    click.echo(json.dumps(err), err=True)
    sys.exit(1)


def _resolve_task(name: str):
    if name.endswith((".yaml", ".yml")):
        return load_task(name)
    return get_task(name)


def _write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    click.echo(f"report: {path}")


def _load_episodes(data_dir: str) -> list[E.Episode]:
    paths = sorted(Path(data_dir).glob("*.dbe"))
    if not paths:
        raise DeskbotError(f"no .dbe episode files under {data_dir}")
    return [E.load_episode(p) for p in paths]


def _policy_config(ds: E.SampleSet, variant: str, seed: int,
                   horizon: int, history: int) -> P.PolicyConfig:
    use_quat, use_fusion = VARIANTS[variant]
    return P.PolicyConfig(
        action_dim=ds.action_dim, proprio_dim=ds.proprio_dim,
        cameras=ds.cameras, use_fusion=use_fusion, use_quat=use_quat,
        horizon=horizon, history=history, seed=seed)


@click.group()
@click.version_option(__version__)
def main():
    """Desk-scale mobile-manipulation stack: collect, train, evaluate."""


@main.command("collect-scripted")
@click.option("--task", required=True, help="built-in task name or spec .yaml")
@click.option("--episodes", "n_episodes", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--noise", default=1.0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def collect_scripted(task, n_episodes, seed, noise, out_dir):
    """Generate scripted demonstrations (failures are discarded)."""
    try:
        spec = _resolve_task(task)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        kept, attempts, cur = [], 0, seed
        t0 = time.time()
        while len(kept) < n_episodes:
            attempts += 1
            ep, ok = run_scripted_episode(spec, cur, noise=noise)
            if ok:
                path = out / f"scripted_{spec.name}_{cur}.dbe"
                E.save_episode(ep, path)
                kept.append(path)
            cur += 1
            if attempts > 4 * n_episodes:
                raise DeskbotError(
                    f"scripted success rate too low: {len(kept)}/{attempts}")
        E.write_manifest(kept, out / "manifest.txt")
        _write_report(out / "collect_report.json", {
            "task": spec.name, "episodes": len(kept), "attempts": attempts,
            "discarded": attempts - len(kept), "seed_base": seed,
            "noise": noise, "seconds": round(time.time() - t0, 2),
            "files": [p.name for p in kept]})
    except DeskbotError as e:
        _fail(e)


@main.command("serve-teleop")
@click.option("--task", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8300, show_default=True)
@click.option("--record-dir", default=None, type=click.Path())
def serve_teleop(task, seed, host, port, record_dir):
    """Serve the teleoperation gateway (WebSocket /session)."""
    import uvicorn
    from .service import create_app
    _resolve_task(task)  # validate before binding the port
    app = create_app(record_dir=record_dir)
    click.echo(f"session endpoint: ws://{host}:{port}/session?task={task}&seed={seed}")
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(sorted(VARIANTS)), default="dp_full",
              show_default=True)
@click.option("--steps", default=1800, show_default=True)
@click.option("--batch", default=24, show_default=True)
@click.option("--lr", default=2e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--horizon", default=16, show_default=True)
@click.option("--history", default=2, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def train(data_dir, variant, steps, batch, lr, seed, horizon, history, out_path):
    """Train one policy variant on a directory of episodes."""
    try:
        eps = _load_episodes(data_dir)
        ds = E.build_dataset(eps, history=history, horizon=horizon)
        cfg = _policy_config(ds, variant, seed, horizon, history)

        def progress(step, total, loss):
            click.echo(f"  step {step:>5}/{total}  loss {loss:8.3f}")

        params, report = P.train(ds, cfg, steps=steps, batch_size=batch,
                                 lr=lr, progress=progress)
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        P.save_checkpoint(out, params, cfg, ds.stats, extra={
            "variant": variant, "dataset_hash": ds.content_hash,
            "episodes": ds.dataset_stats.episode_count})
        report["checkpoint"] = str(out)
        _write_report(out.with_suffix(".report.json"), report)
    except DeskbotError as e:
        _fail(e)


@main.command("train-specialists")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--task", required=True)
@click.option("--variant", type=click.Choice(sorted(VARIANTS)), default="dp_full",
              show_default=True)
@click.option("--steps", default=1200, show_default=True)
@click.option("--batch", default=24, show_default=True)
@click.option("--lr", default=2e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--horizon", default=16, show_default=True)
@click.option("--history", default=2, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def train_specialists(data_dir, task, variant, steps, batch, lr, seed,
                      horizon, history, out_dir):
    """Segment long episodes by stage and train one specialist per skill."""
    try:
        spec = _resolve_task(task)
        eps = _load_episodes(data_dir)
        ds_probe = E.build_dataset(eps[:1], history=history, horizon=horizon)
        cfg = _policy_config(ds_probe, variant, seed, horizon, history)

        def progress(step, total, loss):
            click.echo(f"  step {step:>5}/{total}  loss {loss:8.3f}")

        registry, reports = O.train_specialists(
            eps, spec, cfg, out_dir, steps=steps, batch_size=batch, lr=lr,
            progress=progress)
        _write_report(Path(out_dir) / "specialists_report.json", {
            "task": spec.name, "skills": registry.names(),
            "registry": str(Path(out_dir) / "registry.txt"),
            "per_skill": reports})
    except DeskbotError as e:
        _fail(e)


@main.command("eval")
@click.option("--task", required=True)
@click.option("--policy", "policy_path", default=None, type=click.Path(exists=True))
@click.option("--registry", "registry_path", default=None, type=click.Path(exists=True))
@click.option("--instruction", default=None,
              help="instruction for the registry path (offline planned)")
@click.option("--episodes", "n_episodes", default=50, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--label", default=None)
@click.option("--report", "report_path", default=None, type=click.Path())
def eval_cmd(task, policy_path, registry_path, instruction, n_episodes, seed,
             label, report_path):
    """Per-stage success table for a policy or a matched skill sequence."""
    try:
        if (policy_path is None) == (registry_path is None):
            raise click.UsageError("provide exactly one of --policy / --registry")
        spec = _resolve_task(task)
        if policy_path:
            runtime = P.load_checkpoint(policy_path)
            runner = make_policy_runner(runtime)
            label = label or f"policy:{runtime.cfg.variant}"
        else:
            plan = rule_plan(instruction or f"run {spec.name}")
            registry = O.load_registry(registry_path, action_dim=spec.action_dim)
            runner = O.make_executor_runner(registry, plan)
            label = label or "orchestrated"
        report = evaluate(runner, spec, n_episodes, seed, label=label)
        click.echo(format_stage_table([report]))
        if report_path:
            _write_report(Path(report_path), report)
    except DeskbotError as e:
        _fail(e)


@main.command("plan")
@click.option("--instruction", required=True)
@click.option("--offline", is_flag=True, help="use the rule-based planner only")
@click.option("--image", "image_path", default=None, type=click.Path(exists=True))
@click.option("--endpoint", default=None, help="override DESKBOT_PLANNER_URL")
def plan_cmd(instruction, offline, image_path, endpoint):
    """Decompose an instruction into a skill sequence."""
    try:
        if offline:
            result = rule_plan(instruction)
        else:
            scene = None
            if image_path:
                from PIL import Image
                arr = np.asarray(Image.open(image_path).convert("RGB"))
                scene = arr.transpose(2, 0, 1).astype(np.float64) / 255.0
            cfg = PlannerConfig(endpoint=endpoint) if endpoint else PlannerConfig()
            result = decompose(instruction, scene, cfg)
        click.echo(f"# source: {result.source}")
        for i, s in enumerate(result.steps, 1):
            click.echo(f"{i}. {s.skill}" + (f" | {s.rationale}" if s.rationale else ""))
    except DeskbotError as e:
        _fail(e)


@main.command("execute")
@click.option("--task", required=True)
@click.option("--registry", "registry_path", required=True,
              type=click.Path(exists=True))
@click.option("--instruction", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--offline", is_flag=True, default=True,
              help="plan offline (default; live planning needs an endpoint)")
@click.option("--report", "report_path", default=None, type=click.Path())
def execute_cmd(task, registry_path, instruction, seed, offline, report_path):
    """Plan, match, and run one orchestrated episode."""
    try:
        spec = _resolve_task(task)
        result = rule_plan(instruction) if offline else decompose(
            instruction, None, PlannerConfig())
        registry = O.load_registry(registry_path, action_dim=spec.action_dim)
        resolved = O.match(result, registry)
        outcome = O.execute(resolved, spec, seed)
        for skill, ok, used in zip(outcome["skills"], outcome["stages"],
                                   outcome["stage_steps"]):
            status = "ok" if ok else f"FAILED ({outcome['cause']})"
            click.echo(f"{skill:16s} {status:18s} steps={used}")
        if report_path:
            _write_report(Path(report_path), outcome)
        if not all(outcome["stages"]):
            sys.exit(1)
    except DeskbotError as e:
        _fail(e)


@main.command("inspect-episode")
@click.option("--file", "path", required=True, type=click.Path(exists=True))
@click.option("--export-frames", "frames_dir", default=None, type=click.Path())
def inspect_episode(path, frames_dir):
    """Print an episode's header, stages, and integrity status."""
    try:
        ep = E.load_episode(path)
        click.echo(f"file:     {path}")
        click.echo(f"sha256:   {E.episode_hash(path)}")
        for k in sorted(ep.header):
            click.echo(f"  {k} = {ep.header[k]}")
        click.echo(f"steps:    {len(ep)}")
        click.echo(f"segments: {len(ep.boundaries)}")
        for name, s, e in ep.boundaries:
            click.echo(f"  {name:16s} [{s:5d}, {e:5d})  {e - s} steps")
        events = [(i, ev) for i, rec in enumerate(ep.steps) for ev in rec.events]
        click.echo(f"events:   {events}")
        click.echo("integrity: ok")
        if frames_dir:
            from .sim.render import export_png
            out = Path(frames_dir)
            out.mkdir(parents=True, exist_ok=True)
            for i, rec in enumerate(ep.steps):
                export_png(rec.obs.images[0], out / f"frame_{i:05d}.png")
            click.echo(f"frames exported to {out}")
    except DeskbotError as e:
        _fail(e)


@main.command("inspect-checkpoint")
@click.option("--file", "path", required=True, type=click.Path(exists=True))
def inspect_checkpoint(path):
    """Print checkpoint config, parameter counts, and fusion overhead."""
    try:
        rt = P.load_checkpoint(path)
        overhead = fusion_overhead(rt.params, "enc.")
        click.echo(f"file:            {path}")
        click.echo(f"variant:         {rt.cfg.variant}")
        click.echo(f"total params:    {rt.params.num_params()}")
        click.echo(f"encoder params:  {overhead['encoder_params']}")
        click.echo(f"fusion params:   {overhead['fusion_params']}")
        click.echo(f"fusion overhead: {100 * overhead['overhead_fraction']:.4f}% "
                   f"of encoder parameters")
        for k, v in sorted(rt.cfg.to_manifest().items()):
            click.echo(f"  {k} = {v}")
    except DeskbotError as e:
        _fail(e)


if __name__ == "__main__":
    main()
