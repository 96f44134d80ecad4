"""Skill registry, plan matching, and sequential matched execution.

A long-horizon plan runs as a relay: each step resolves to a pre-trained
specialist policy plus a termination rule (the simulator stage event it
must trigger, with a step timeout). Specialists execute receding-horizon
in sequence, carrying the world state over; a timeout halts the relay and
the outcome record marks every later stage failed.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import policy as P
from .episodes import Episode, build_dataset, segment_by_stage
from .errors import ConfigurationError, ContractError, MatchError
from .planner import TaskPlan
from .sim.tasks import TaskSpec
from .sim.world import reset, step

REGISTRY_VERSION = 1


@dataclass
class SkillEntry:
    skill: str
    checkpoint: str
    termination_event: str
    timeout_steps: int
    runtime: P.PolicyRuntime | None = None


class SkillRegistry:
    """Named specialist checkpoints with termination rules.

    Manifest format (text, one line per skill):

        # deskbot-registry v1
        <skill> = <checkpoint file> | event=<stage event> | timeout=<steps>
    """

    def __init__(self):
        self.entries: dict[str, SkillEntry] = {}

    def add(self, entry: SkillEntry) -> None:
        if entry.skill in self.entries:
            raise ConfigurationError(f"duplicate skill {entry.skill!r} in registry")
        self.entries[entry.skill] = entry

    def names(self) -> list[str]:
        return sorted(self.entries)

    def save(self, path) -> None:
        lines = [f"# deskbot-registry v{REGISTRY_VERSION}"]
        for name in self.names():
            e = self.entries[name]
            lines.append(f"{name} = {e.checkpoint} | event={e.termination_event} "
                         f"| timeout={e.timeout_steps}")
        Path(path).write_text("\n".join(lines) + "\n")


_REG_LINE = re.compile(
    r"^(\S+)\s*=\s*(.+?)\s*\|\s*event=(.+?)\s*\|\s*timeout=(\d+)$")


def load_registry(path, action_dim: int | None = None) -> SkillRegistry:
    """Parse a manifest and load every checkpoint up front (fail-fast)."""
    path = Path(path)
    reg = SkillRegistry()
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _REG_LINE.match(line)
        if not m:
            raise ConfigurationError(f"bad registry line: {line!r}")
        skill, ckpt, event, timeout = m.groups()
        entry = SkillEntry(skill, ckpt, event, int(timeout))
        ckpt_path = path.parent / ckpt
        entry.runtime = P.load_checkpoint(ckpt_path)
        if action_dim is not None and entry.runtime.cfg.action_dim != action_dim:
            raise ConfigurationError(
                f"skill {skill!r}: checkpoint action dim "
                f"{entry.runtime.cfg.action_dim} != simulator {action_dim}")
        reg.add(entry)
    return reg


@dataclass
class ResolvedStep:
    skill: str
    runtime: P.PolicyRuntime
    termination_event: str
    timeout_steps: int


def match(plan: TaskPlan, registry: SkillRegistry) -> list[ResolvedStep]:
    """Resolve every plan step before any motion starts."""
    if not plan.steps:
        raise ContractError("cannot match an empty plan")
    resolved = []
    for s in plan.steps:
        entry = registry.entries.get(s.skill)
        if entry is None:
            raise MatchError(s.skill)
        if entry.runtime is None:
            raise ConfigurationError(f"skill {s.skill!r} has no loaded checkpoint")
        resolved.append(ResolvedStep(s.skill, entry.runtime,
                                     entry.termination_event, entry.timeout_steps))
    return resolved


def execute(resolved: list[ResolvedStep], spec: TaskSpec, seed: int,
            exec_fraction: float = 0.5) -> dict:
    """Run the matched sequence in one world; returns the outcome record.

    Record fields: per-stage reached flags (cumulative), the halting stage
    index (or None), and per-stage step counts.
    """
    if not resolved:
        raise ContractError("empty execution sequence")
    state, obs = reset(spec, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7]))
    reached: list[bool] = []
    stage_steps: list[int] = []
    halted_at: int | None = None
    cause = ""

    for i, rstep in enumerate(resolved):
        runtime = rstep.runtime
        history = deque([obs] * runtime.cfg.history, maxlen=runtime.cfg.history)
        exec_len = max(1, int(runtime.cfg.horizon * exec_fraction))
        chunk, ptr = None, 0
        done = False
        used = 0
        while used < rstep.timeout_steps and state.t < spec.step_limit:
            if chunk is None or ptr >= exec_len:
                chunk = runtime.sample_action(list(history), rng)
                ptr = 0
            obs, events = step(state, chunk.actions[ptr], spec)
            ptr += 1
            used += 1
            history.append(obs)
            if rstep.termination_event in events:
                done = True
                break
        reached.append(done)
        stage_steps.append(used)
        if not done:
            halted_at = i
            cause = ("timeout" if used >= rstep.timeout_steps else "step-limit")
            break

    n = len(resolved)
    while len(reached) < n:
        reached.append(False)
        stage_steps.append(0)
    return {
        "skills": [r.skill for r in resolved],
        "stages": reached,
        "stage_steps": stage_steps,
        "halted_at": halted_at,
        "cause": cause,
        "steps": state.t,
        "seed": seed,
    }


def make_executor_runner(registry: SkillRegistry, plan: TaskPlan,
                         exec_fraction: float = 0.5):
    """Adapter so evaluate() can drive the relay like any policy."""
    resolved = match(plan, registry)

    def run(spec: TaskSpec, seed: int) -> dict:
        out = execute(resolved, spec, seed, exec_fraction)
        return {"stages": out["stages"], "steps": out["steps"]}

    return run


def train_specialists(episodes: list[Episode], spec: TaskSpec,
                      base_cfg: P.PolicyConfig, out_dir,
                      steps: int = 1200, batch_size: int = 24, lr: float = 2e-3,
                      timeout_factor: float = 2.0,
                      progress=None) -> tuple[SkillRegistry, dict]:
    """One policy per stage skill, trained on its step-wise segments."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_stage: dict[str, list[Episode]] = {s.name: [] for s in spec.stages}
    for ep in episodes:
        for sub in segment_by_stage(ep):
            name = sub.header["stage"]
            if name in by_stage:
                by_stage[name].append(sub)

    registry = SkillRegistry()
    reports = {}
    base_timeout = int(timeout_factor * spec.step_limit / max(1, len(spec.stages)))
    for idx, stage in enumerate(spec.stages):
        subs = by_stage[stage.name]
        if not subs:
            raise ContractError(
                f"training specialists: no segments for skill {stage.skill!r}")
        ds = build_dataset(subs, base_cfg.history, base_cfg.horizon)
        cfg = P.PolicyConfig.from_manifest(base_cfg.to_manifest())
        cfg.seed = base_cfg.seed + 101 * idx
        params, report = P.train(ds, cfg, steps=steps, batch_size=batch_size,
                                 lr=lr, progress=progress)
        ckpt_name = f"{stage.skill}.ckpt"
        P.save_checkpoint(out_dir / ckpt_name, params, cfg, ds.stats,
                          extra={"skill": stage.skill, "stage": stage.name,
                                 "task": spec.name, "segments": len(subs)})
        report["segments"] = len(subs)
        reports[stage.skill] = report
        registry.add(SkillEntry(stage.skill, ckpt_name, stage.name,
                                base_timeout, runtime=None))
    registry.save(out_dir / "registry.txt")
    return registry, reports
