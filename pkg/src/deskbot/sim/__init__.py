"""Deterministic planar mobile-manipulation environment."""

from .world import WorldState, reset, step, observe  # noqa: F401
from .tasks import TaskSpec, get_task, load_task, builtin_task_names  # noqa: F401
from .scripted import scripted_policy, run_scripted_episode  # noqa: F401
from .evaluate import evaluate, make_policy_runner  # noqa: F401
