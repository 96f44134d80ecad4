"""Task decomposition: a chat-completion planner client with a
deterministic rule-based fallback.

The remote planner receives one scene image plus the instruction and must
answer with its reasoning followed by a fenced plan block:

    ```plan
    1. skill_name | short rationale
    2. skill_name | short rationale
    ```

Only the fenced block is parsed; every step must name a skill from the
published vocabulary. The fallback planner maps instruction keywords to
canned plans and is a pure function of the instruction string, which keeps
tests and offline runs hermetic.
"""

from __future__ import annotations

import base64
import io
import os
import re
from dataclasses import dataclass, field

import httpx
import numpy as np

from .errors import ConfigurationError, PlanningError, UnknownTaskError

# union of the built-in tasks' stage skills
SKILL_VOCABULARY = (
    "push_block",
    "sort_workpiece",
    "grasp_trash", "move_to_bin", "throw", "go_back",
    "move_to_table", "grasp_screw", "grasp_pouch", "move_to_worker", "put",
)

PROMPT_TEMPLATE_V1 = """\
You are the task planner of a dual-arm mobile manipulator working on a
tabletop arena. Decompose the operator's instruction into an ordered list
of skills, reasoning step by step about the scene image first.

Allowed skills (use these names exactly, one per step):
{vocabulary}

Think through the task, then answer with a fenced plan block:

```plan
1. skill_name | one-line rationale
2. skill_name | one-line rationale
```

Rules: output every step on its own line inside the single ```plan block;
use only allowed skill names; order steps by execution sequence.
"""


@dataclass
class PlanStep:
    skill: str
    rationale: str = ""


@dataclass
class TaskPlan:
    instruction: str
    steps: list[PlanStep]
    source: str  # "vlm" | "fallback"

    def skill_names(self) -> list[str]:
        return [s.skill for s in self.steps]


@dataclass
class PlannerConfig:
    endpoint: str = field(
        default_factory=lambda: os.environ.get("DESKBOT_PLANNER_URL", ""))
    model: str = field(
        default_factory=lambda: os.environ.get("DESKBOT_PLANNER_MODEL", "glm-4v"))
    token: str = field(
        default_factory=lambda: os.environ.get("DESKBOT_PLANNER_TOKEN", ""))
    timeout: float = 20.0
    max_retries: int = 2
    temperature: float = 0.0
    prompt_template: str = "v1"

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ConfigurationError("planner temperature is fixed to 0 for reproducibility")
        if self.prompt_template != "v1":
            raise ConfigurationError(f"unknown prompt template {self.prompt_template!r}")


class PlanValidationError(PlanningError):
    """A parsed step names a skill outside the vocabulary."""

    def __init__(self, step: str):
        self.step = step
        super().__init__(f"plan step uses unknown skill: {step!r}")


# ----------------------------------------------------------------------
# rule-based fallback
# ----------------------------------------------------------------------

_RULES = [
    (("clean", "trash"), [
        ("grasp_trash", "pick the trash off the floor"),
        ("move_to_bin", "carry it to the bin"),
        ("throw", "drop it into the bin"),
        ("go_back", "return to the home marker"),
    ]),
    (("deliver", "tool"), [
        ("move_to_table", "drive to the parts table"),
        ("grasp_screw", "take the screw with the left gripper"),
        ("grasp_pouch", "take the pouch with the right gripper"),
        ("move_to_worker", "carry both to the worker"),
        ("put", "set both items down"),
        ("go_back", "return to the home marker"),
    ]),
    (("push", "block"), [("push_block", "move the block onto the target ring")]),
    (("sort",), [("sort_workpiece", "place each piece in its matching bin")]),
]


def rule_plan(instruction: str) -> TaskPlan:
    """Keyword-pattern lookup; pure function of the instruction string."""
    low = instruction.lower()
    for keywords, steps in _RULES:
        if all(k in low for k in keywords):
            return TaskPlan(instruction,
                            [PlanStep(skill, why) for skill, why in steps],
                            source="fallback")
    raise UnknownTaskError(f"no planning pattern matches instruction: {instruction!r}")


# ----------------------------------------------------------------------
# reply parsing / validation
# ----------------------------------------------------------------------

_PLAN_BLOCK = re.compile(r"```plan\s*\n(.*?)```", re.DOTALL)
_STEP_LINE = re.compile(r"^\s*(?:\d+[.)]\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*(?:\|\s*(.*))?$")


def parse_plan_reply(text: str) -> list[PlanStep]:
    """Extract steps from the fenced plan block; raises on malformed text."""
    m = _PLAN_BLOCK.search(text)
    if not m:
        raise PlanningError(f"no ```plan block found in reply: {text!r}")
    steps = []
    for line in m.group(1).splitlines():
        if not line.strip():
            continue
        sm = _STEP_LINE.match(line)
        if not sm:
            raise PlanningError(f"unparseable plan line: {line!r}")
        steps.append(PlanStep(sm.group(1), (sm.group(2) or "").strip()))
    if not steps:
        raise PlanningError(f"plan block is empty in reply: {text!r}")
    return steps


def validate_steps(steps: list[PlanStep]) -> None:
    for s in steps:
        if s.skill not in SKILL_VOCABULARY:
            raise PlanValidationError(s.skill)


# ----------------------------------------------------------------------
# remote planner
# ----------------------------------------------------------------------

def frame_to_b64png(frame: np.ndarray) -> str:
    """[3,H,W] float frame -> base64 PNG string."""
    from PIL import Image
    arr = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _request_body(instruction: str, image_b64: str | None, cfg: PlannerConfig) -> dict:
    prompt = PROMPT_TEMPLATE_V1.format(vocabulary="\n".join(
        f"- {s}" for s in SKILL_VOCABULARY))
    user_content: list[dict] = [{"type": "text", "text": instruction}]
    if image_b64:
        user_content.append({
            "type": "image_url",
            "image_url": {"url": f"data:image/png;base64,{image_b64}"}})
    return {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [
            {"role": "system", "content": prompt},
            {"role": "user", "content": user_content},
        ],
    }


def _reply_text(data: dict) -> str:
    try:
        return data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise PlanningError(f"planner reply has no message content: {data!r}")


def decompose(instruction: str, scene: np.ndarray | None, cfg: PlannerConfig,
              fallback: bool = True, client: httpx.Client | None = None) -> TaskPlan:
    """Ask the configured endpoint for a plan; fall back on endpoint failure.

    Validation failures (a parseable plan naming an unknown skill) are
    raised, not silently replaced: they indicate a planner that misread
    the vocabulary contract.
    """
    if not instruction.strip():
        raise PlanningError("instruction is empty")
    if not cfg.endpoint:
        if fallback:
            return rule_plan(instruction)
        raise ConfigurationError("no planner endpoint configured (DESKBOT_PLANNER_URL)")

    image_b64 = frame_to_b64png(scene) if scene is not None else None
    body = _request_body(instruction, image_b64, cfg)
    headers = {"Content-Type": "application/json"}
    if cfg.token:
        headers["Authorization"] = f"Bearer {cfg.token}"

    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    last_error: Exception | None = None
    try:
        for _ in range(cfg.max_retries + 1):
            try:
                resp = client.post(cfg.endpoint, json=body, headers=headers)
                resp.raise_for_status()
                steps = parse_plan_reply(_reply_text(resp.json()))
                validate_steps(steps)
                return TaskPlan(instruction, steps, source="vlm")
            except PlanValidationError:
                raise
            except (httpx.HTTPError, PlanningError, ValueError) as e:
                last_error = e
    finally:
        if own_client:
            client.close()
    if fallback:
        return rule_plan(instruction)
    raise PlanningError(f"planner failed after {cfg.max_retries + 1} attempts: {last_error}")
