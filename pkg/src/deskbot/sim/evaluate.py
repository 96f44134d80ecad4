"""Seeded evaluation rollouts and the per-stage success table."""

from __future__ import annotations

from collections import deque

import numpy as np

from .tasks import TaskSpec
from .world import reset, step


def make_policy_runner(runtime, exec_fraction: float = 0.5):
    """Closed-loop receding-horizon runner for a trained policy.

    A fresh chunk is sampled every horizon*exec_fraction steps; the episode
    ends at the task's step limit or when every stage is complete.
    """
    exec_len = max(1, int(runtime.cfg.horizon * exec_fraction))

    def run(spec: TaskSpec, seed: int) -> dict:
        state, obs = reset(spec, seed)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC7]))
        history = deque([obs] * runtime.cfg.history, maxlen=runtime.cfg.history)
        chunk, ptr = None, 0
        while state.t < spec.step_limit:
            if chunk is None or ptr >= exec_len:
                chunk = runtime.sample_action(list(history), rng)
                ptr = 0
            obs, _ = step(state, chunk.actions[ptr], spec)
            ptr += 1
            history.append(obs)
            if state.stages_done(spec):
                break
        return {
            "stages": [i < state.stage_idx for i in range(len(spec.stages))],
            "steps": state.t,
        }

    return run


def make_scripted_runner(noise: float = 0.0):
    from .scripted import run_scripted_episode

    def run(spec: TaskSpec, seed: int) -> dict:
        episode, _ = run_scripted_episode(spec, seed, noise=noise)
        reached = set()
        for rec in episode.steps:
            reached.update(rec.events)
        return {
            "stages": [s.name in reached for s in spec.stages],
            "steps": len(episode),
        }

    return run


def evaluate(run_episode, spec: TaskSpec, n_episodes: int, seed: int,
             label: str = "") -> dict:
    """Cumulative per-stage success fractions over seeded episodes.

    Stage i's column is the fraction of episodes whose stage-i predicate
    fired; the stage machine is ordered, so columns are non-increasing.
    """
    outcomes = [run_episode(spec, seed + e) for e in range(n_episodes)]
    n_stages = len(spec.stages)
    per_stage = [sum(o["stages"][i] for o in outcomes) / n_episodes
                 for i in range(n_stages)]
    return {
        "label": label,
        "task": spec.name,
        "episodes": n_episodes,
        "seed_base": seed,
        "stage_names": spec.stage_names(),
        "per_stage_success": per_stage,
        "final_success": per_stage[-1],
        "mean_steps": float(np.mean([o["steps"] for o in outcomes])),
        "outcomes": [o["stages"] for o in outcomes],
    }


def format_stage_table(reports: list[dict]) -> str:
    """Render reports as one aligned text table (one row per method)."""
    if not reports:
        return "(no results)"
    names = reports[0]["stage_names"]
    width = max(len(r["label"]) for r in reports) + 2
    head = "method".ljust(width) + "  ".join(f"{n:>14}" for n in names)
    lines = [head]
    for r in reports:
        cells = "  ".join(f"{100 * v:>13.0f}%" for v in r["per_stage_success"])
        lines.append(r["label"].ljust(width) + cells)
    return "\n".join(lines)
