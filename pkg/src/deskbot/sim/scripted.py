"""Waypoint/IK controllers that demonstrate the built-in tasks.

Each controller is a phase list built from shared primitives: drive to a
standoff point, reach with analytic two-link IK, squeeze or open the
gripper. They read privileged world state (the policies never do) and are
used to mass-generate demonstrations, optionally with injected action
noise. A layout the controller cannot finish raises ScriptedFailure so
collectors can discard the episode.
"""

from __future__ import annotations

import math

import numpy as np

from ..episodes import Episode, StepRecord, derive_boundaries
from ..errors import ScriptedFailure
from .tasks import TaskSpec
from .world import ARMS, WorldState, _wrap, reset, step

# folded poses with net wrist rotations 0 (left) and -pi/2 (right): the two
# wrist quaternions then hit their sign-canonicalization wrap at different
# base headings, so at least one varies smoothly everywhere
TUCK = {"left": (1.6, -1.6, 0.0), "right": (-1.6, 1.6, -1.5708)}


def ik_joint_targets(state: WorldState, spec: TaskSpec, arm: str,
                     target: np.ndarray) -> np.ndarray:
    """Two-link planar IK (third joint kept straight)."""
    pts = state.arm_points(spec, arm)
    S = np.array(pts[0])
    L1 = spec.link_lengths[0]
    L2 = spec.link_lengths[1] + spec.link_lengths[2]
    d = target - S
    r = float(np.clip(np.hypot(*d), abs(L1 - L2) + 1e-3, L1 + L2 - 1e-3))
    alpha = math.atan2(d[1], d[0]) - state.base[2]
    c2 = np.clip((r * r - L1 * L1 - L2 * L2) / (2 * L1 * L2), -1.0, 1.0)
    q2 = math.acos(c2) * (1.0 if arm == "left" else -1.0)
    q1 = alpha - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
    lim = spec.joint_limit
    return np.clip([_wrap(q1), q2, 0.0], -lim, lim)


class Script:
    """Sequential phases; each phase maps state -> (action, done)."""

    def __init__(self, spec: TaskSpec, phases):
        self.spec = spec
        self.phases = phases
        self.i = 0

    def act(self, state: WorldState) -> np.ndarray:
        while self.i < len(self.phases):
            action, done = self.phases[self.i](state)
            if not done:
                return action
            self.i += 1
        return np.zeros(self.spec.action_dim)

    # -- action assembly ------------------------------------------------

    def _blank(self):
        return np.zeros(self.spec.action_dim)

    # commanded deltas stay in a tight range so the recorded action
    # distribution is well conditioned for min-max normalization
    DQ_CAP = 0.3
    W_CAP = 1.2

    def _set_joints(self, action, state, arm, q_des):
        i = ARMS.index(arm)
        lo = i * (self.spec.joints_per_arm + 1)
        action[lo:lo + self.spec.joints_per_arm] = np.clip(
            q_des - state.qpos[i], -self.DQ_CAP, self.DQ_CAP)

    def _set_grip(self, action, state, arm, g_des):
        i = ARMS.index(arm)
        lo = i * (self.spec.joints_per_arm + 1)
        action[lo + self.spec.joints_per_arm] = np.clip(
            g_des - state.grip[i], -self.DQ_CAP, self.DQ_CAP)

    def _drive(self, action, state, target, stop_dist=0.0):
        # smooth arcs: proportional turn plus a forward term tapered by the
        # heading error, so demonstrations stay unimodal in (obs -> action)
        d = target - state.base[:2]
        dist = float(np.hypot(*d))
        err = _wrap(math.atan2(d[1], d[0]) - state.base[2])
        action[-1] = np.clip(1.8 * err, -self.W_CAP, self.W_CAP)
        if dist > stop_dist:
            taper = max(0.0, math.cos(err)) ** 2
            speed = min(1.0, (dist - stop_dist) / 0.1 + 0.2)
            action[-2] = self.spec.kin.v_max * taper * speed
        return dist

    # -- phase factories -------------------------------------------------

    def hold_arms(self, action, state, held_arms=()):
        for arm in ARMS:
            if arm in held_arms:
                self._set_grip(action, state, arm, 0.0)   # keep squeezing
            else:
                self._set_joints(action, state, arm, np.array(TUCK[arm]))
                self._set_grip(action, state, arm, 1.0)   # fully open, no lurking

    def goto(self, point_fn, tol, held_arms=()):
        def phase(state):
            action = self._blank()
            self.hold_arms(action, state, held_arms)
            dist = self._drive(action, state, np.asarray(point_fn(state)))
            return action, dist <= tol
        return phase

    def approach(self, obj_name, standoff=0.09, held_arms=()):
        """Drive to a standoff ring around the object, gripper open."""
        def point(state):
            obj = state.objects[obj_name].pos
            d = state.base[:2] - obj
            n = np.hypot(*d)
            u = d / n if n > 1e-9 else np.array([0.0, -1.0])
            return np.clip(obj + standoff * u, 0.08, 0.92)

        def phase(state):
            action = self._blank()
            self.hold_arms(action, state, held_arms)
            dist = float(np.linalg.norm(
                state.base[:2] - state.objects[obj_name].pos))
            self._drive(action, state, np.asarray(point(state)))
            return action, abs(dist - standoff) <= 0.02
        return phase

    def reach(self, arm, point_fn, eps=0.028, held_arms=()):
        def phase(state):
            action = self._blank()
            self.hold_arms(action, state, held_arms)
            target = np.asarray(point_fn(state))
            self._set_joints(action, state, arm, ik_joint_targets(
                state, self.spec, arm, target))
            self._set_grip(action, state, arm, 1.0)
            ee = state.ee(self.spec, arm)
            return action, float(np.linalg.norm(ee - target)) <= eps
        return phase

    def grasp(self, arm, obj_name, held_arms=()):
        """Keep the IK pose and squeeze until the object is held.

        If a close misses (object drifted out of capture), reopen fully and
        try again; the grasp event only fires on a fresh 0.5 crossing.
        """
        mode = {"v": "close"}

        def phase(state):
            action = self._blank()
            self.hold_arms(action, state, held_arms)
            obj = state.objects[obj_name]
            self._set_joints(action, state, arm, ik_joint_targets(
                state, self.spec, arm, obj.pos))
            i = ARMS.index(arm)
            if mode["v"] == "close" and state.grip[i] <= 0.02 and obj.held_by != arm:
                mode["v"] = "open"
            elif mode["v"] == "open" and state.grip[i] >= 0.9:
                mode["v"] = "close"
            self._set_grip(action, state, arm, 0.0 if mode["v"] == "close" else 1.0)
            return action, obj.held_by == arm
        return phase

    def release(self, arm, obj_name, held_arms=()):
        def phase(state):
            action = self._blank()
            self.hold_arms(action, state, held_arms)
            i = ARMS.index(arm)
            self._set_joints(action, state, arm, state.qpos[i])  # hold pose
            self._set_grip(action, state, arm, 1.0)
            done = (state.objects[obj_name].held_by is None
                    and state.grip[i] >= 0.8)
            return action, done
        return phase

    def reach_holding(self, arm, point_fn, eps=0.03, held_arms=()):
        """Reach while keeping the gripper closed on its object."""
        def phase(state):
            action = self._blank()
            self.hold_arms(action, state, held_arms)
            target = np.asarray(point_fn(state))
            self._set_joints(action, state, arm, ik_joint_targets(
                state, self.spec, arm, target))
            self._set_grip(action, state, arm, 0.0)
            ee = state.ee(self.spec, arm)
            return action, float(np.linalg.norm(ee - target)) <= eps
        return phase


def _zone(name):
    return lambda state: state.zones[name].pos


def _pick_place(sc: Script, obj: str, arm: str, dest: str, held_arms=()):
    both = tuple(held_arms) + (arm,)
    return [
        sc.approach(obj, held_arms=held_arms),
        sc.reach(arm, lambda s, o=obj: s.objects[o].pos, held_arms=held_arms),
        sc.grasp(arm, obj, held_arms=held_arms),
        sc.goto(_zone(dest), tol=0.055, held_arms=both),
        sc.reach_holding(arm, _zone(dest), held_arms=held_arms),
        sc.release(arm, obj, held_arms=held_arms),
    ]


def build_script(spec: TaskSpec) -> Script:
    sc = Script(spec, [])
    if spec.name == "push-block":
        sc.phases = _pick_place(sc, "block", "left", "target")
    elif spec.name == "sort-workpiece":
        sc.phases = (_pick_place(sc, "piece_red", "left", "bin_red")
                     + _pick_place(sc, "piece_blue", "left", "bin_blue"))
    elif spec.name == "clean-trash-4stage":
        sc.phases = (_pick_place(sc, "trash", "left", "bin")
                     + [sc.goto(_zone("home"), tol=0.06)])
    elif spec.name == "deliver-tool-6stage":
        sc.phases = [
            sc.goto(_zone("table"), tol=0.1),
            sc.approach("screw"),
            sc.reach("left", lambda s: s.objects["screw"].pos),
            sc.grasp("left", "screw"),
            sc.approach("pouch", held_arms=("left",)),
            sc.reach("right", lambda s: s.objects["pouch"].pos, held_arms=("left",)),
            sc.grasp("right", "pouch", held_arms=("left",)),
            sc.goto(_zone("worker"), tol=0.055, held_arms=("left", "right")),
            sc.reach_holding("left", _zone("worker"), held_arms=("right",)),
            sc.reach_holding("right", _zone("worker"), held_arms=("left",)),
            sc.release("left", "screw", held_arms=("right",)),
            sc.release("right", "pouch"),
            sc.goto(_zone("home"), tol=0.06),
        ]
    else:
        raise ScriptedFailure(f"no scripted controller registered for {spec.name!r}")
    return sc


def scripted_policy(spec: TaskSpec, state: WorldState, script: Script | None = None
                    ) -> np.ndarray:
    """One scripted action for the current state (stateless convenience)."""
    if script is None:
        script = build_script(spec)
    return script.act(state)


NOISE_SIGMA = {"joint": 0.02, "grip": 0.01, "v": 0.01, "w": 0.05}


def _noise_vector(spec: TaskSpec, scale: float, rng) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(spec.action_dim)
    J = spec.joints_per_arm
    sigma = np.zeros(spec.action_dim)
    for i in range(2):
        lo = i * (J + 1)
        sigma[lo:lo + J] = NOISE_SIGMA["joint"]
        sigma[lo + J] = NOISE_SIGMA["grip"]
    sigma[-2] = NOISE_SIGMA["v"]
    sigma[-1] = NOISE_SIGMA["w"]
    return rng.normal(0.0, sigma * scale)


def run_scripted_episode(spec: TaskSpec, seed: int, noise: float = 1.0,
                         extra_steps: int = 4) -> tuple[Episode, bool]:
    """Roll one scripted demonstration; returns (episode, success).

    Noise is seeded from the episode seed, so a given (seed, noise) pair
    always produces the identical trajectory.
    """
    script = build_script(spec)
    state, obs = reset(spec, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C]))
    steps = []
    tail = None
    for _ in range(spec.step_limit):
        action = script.act(state) + _noise_vector(spec, noise, rng)
        obs_before = obs
        obs, events = step(state, action, spec)
        steps.append(StepRecord(obs_before, action, events))
        if state.stages_done(spec) and tail is None:
            tail = extra_steps
        if tail is not None:
            tail -= 1
            if tail <= 0:
                break
    success = state.stages_done(spec)
    header = {
        "task": spec.name, "seed": seed, "J": spec.joints_per_arm,
        "dt": 0.05, "cameras": ",".join(spec.cameras),
        "action_dim": spec.action_dim, "step_limit": spec.step_limit,
        "collector": "scripted", "noise": noise,
    }
    boundaries = derive_boundaries(steps, spec.stage_names())
    return Episode(header, steps, boundaries), success
