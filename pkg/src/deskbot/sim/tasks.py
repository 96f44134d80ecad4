"""Task specifications: stages, predicates, layout ranges, limits.

Tasks are declarative YAML documents (schema below); the four built-in
tasks ship as YAML strings so external files and built-ins go through the
same parser.

Schema (all lengths in arena units, arena is the unit square):

    name: <task name>
    step_limit: <int>
    imu_sigma: <float>                  # wrist IMU noise
    cameras: [top]                      # top | wrist_left | wrist_right
    kinematics:                         # optional overrides
      v_max: 0.15                       # base linear speed
      w_max: 2.5                        # base angular speed
      joint_rate: 0.2                   # per-step joint delta limit
      grip_rate: 0.25
    base: {x: [lo,hi], y: [lo,hi], heading: [lo,hi]}
    objects:
      <name>: {x: [lo,hi], y: [lo,hi], radius: r, color: c}
    zones:
      <name>: {x: [lo,hi], y: [lo,hi], radius: r, color: c, style: fill|ring}
    stages:                             # ordered; each has one predicate
      - name: <stage name>              # emitted as the stage event
        skill: <skill vocabulary name>
        predicate:
          kind: holding | base_in_zone | objects_in_zone
          objects: [names]              # holding
          arm: left|right               # optional, holding
          zone: <zone>                  # base_in_zone
          holding: [names]              # optional extra condition
          pairs: [[obj, zone], ...]     # objects_in_zone (released objects)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from ..errors import ConfigurationError


@dataclass
class Predicate:
    kind: str
    objects: list = field(default_factory=list)
    arm: str | None = None
    zone: str | None = None
    holding: list = field(default_factory=list)
    pairs: list = field(default_factory=list)


@dataclass
class StageDef:
    name: str
    skill: str
    predicate: Predicate


@dataclass
class EntityDef:
    name: str
    x: tuple[float, float]
    y: tuple[float, float]
    radius: float
    color: str
    style: str = "fill"


@dataclass
class Kinematics:
    v_max: float = 0.15
    w_max: float = 2.5
    joint_rate: float = 0.2
    grip_rate: float = 0.25


@dataclass
class TaskSpec:
    name: str
    step_limit: int
    stages: list[StageDef]
    objects: list[EntityDef]
    zones: list[EntityDef]
    base_x: tuple[float, float]
    base_y: tuple[float, float]
    base_heading: tuple[float, float]
    cameras: list[str] = field(default_factory=lambda: ["top"])
    imu_sigma: float = 0.01
    kin: Kinematics = field(default_factory=Kinematics)
    base_radius: float = 0.05
    capture_radius: float = 0.06
    link_lengths: tuple[float, ...] = (0.055, 0.045, 0.035)
    shoulder_offset: float = 0.03
    joint_limit: float = 2.6
    min_separation: float = 0.05

    @property
    def joints_per_arm(self) -> int:
        return len(self.link_lengths)

    @property
    def action_dim(self) -> int:
        return 2 * self.joints_per_arm + 2 + 2

    def stage_names(self) -> list[str]:
        return [s.name for s in self.stages]

    def skill_names(self) -> list[str]:
        return [s.skill for s in self.stages]


def _pair(v) -> tuple[float, float]:
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    lo, hi = float(v[0]), float(v[1])
    if hi < lo:
        raise ConfigurationError(f"range [{lo}, {hi}] is inverted")
    return (lo, hi)


def parse_task(text: str) -> TaskSpec:
    doc = yaml.safe_load(text)
    try:
        stages = []
        seen = set()
        for s in doc["stages"]:
            if s["name"] in seen:
                raise ConfigurationError(f"duplicate stage name {s['name']!r}")
            seen.add(s["name"])
            p = s["predicate"]
            stages.append(StageDef(
                name=s["name"], skill=s["skill"],
                predicate=Predicate(
                    kind=p["kind"], objects=p.get("objects", []),
                    arm=p.get("arm"), zone=p.get("zone"),
                    holding=p.get("holding", []),
                    pairs=[tuple(x) for x in p.get("pairs", [])])))
        objects = [EntityDef(n, _pair(o["x"]), _pair(o["y"]),
                             float(o["radius"]), o["color"])
                   for n, o in doc.get("objects", {}).items()]
        zones = [EntityDef(n, _pair(z["x"]), _pair(z["y"]),
                           float(z["radius"]), z["color"], z.get("style", "fill"))
                 for n, z in doc.get("zones", {}).items()]
        base = doc["base"]
        kin = Kinematics(**doc.get("kinematics", {}))
        return TaskSpec(
            name=doc["name"], step_limit=int(doc["step_limit"]), stages=stages,
            objects=objects, zones=zones,
            base_x=_pair(base["x"]), base_y=_pair(base["y"]),
            base_heading=_pair(base.get("heading", [-math.pi, math.pi])),
            cameras=list(doc.get("cameras", ["top"])),
            imu_sigma=float(doc.get("imu_sigma", 0.01)), kin=kin)
    except KeyError as e:
        raise ConfigurationError(f"task spec missing field: {e}")


def load_task(path) -> TaskSpec:
    with open(path) as f:
        return parse_task(f.read())


# ----------------------------------------------------------------------
# built-in tasks
# ----------------------------------------------------------------------

PUSH_BLOCK = """
name: push-block
step_limit: 280
imu_sigma: 0.01
cameras: [top, wrist_left]
base: {x: [0.35, 0.65], y: [0.18, 0.32], heading: [0.0, 3.141592653589793]}
objects:
  block: {x: [0.28, 0.72], y: [0.55, 0.72], radius: 0.04, color: blue}
zones:
  target: {x: [0.3, 0.7], y: [0.82, 0.88], radius: 0.07, color: yellow, style: ring}
stages:
  - name: Place
    skill: push_block
    predicate: {kind: objects_in_zone, pairs: [[block, target]]}
"""

SORT_WORKPIECE = """
name: sort-workpiece
step_limit: 420
imu_sigma: 0.01
cameras: [top, wrist_left]
base: {x: [0.4, 0.6], y: [0.2, 0.3], heading: [-3.141592653589793, 3.141592653589793]}
objects:
  piece_red: {x: [0.3, 0.45], y: [0.5, 0.65], radius: 0.035, color: red}
  piece_blue: {x: [0.55, 0.7], y: [0.5, 0.65], radius: 0.035, color: blue}
zones:
  bin_red: {x: [0.2, 0.2], y: [0.85, 0.85], radius: 0.08, color: red, style: ring}
  bin_blue: {x: [0.8, 0.8], y: [0.85, 0.85], radius: 0.08, color: blue, style: ring}
stages:
  - name: Sort
    skill: sort_workpiece
    predicate: {kind: objects_in_zone, pairs: [[piece_red, bin_red], [piece_blue, bin_blue]]}
"""

CLEAN_TRASH = """
name: clean-trash-4stage
step_limit: 800
imu_sigma: 0.01
cameras: [top, wrist_left]
kinematics: {v_max: 0.08, w_max: 2.0}
base: {x: [0.45, 0.55], y: [0.14, 0.2], heading: [0.8, 2.4]}
objects:
  trash: {x: [0.18, 0.45], y: [0.55, 0.8], radius: 0.035, color: red}
zones:
  bin: {x: [0.72, 0.82], y: [0.66, 0.8], radius: 0.09, color: gray}
  home: {x: [0.5, 0.5], y: [0.16, 0.16], radius: 0.09, color: green}
stages:
  - name: Grasp
    skill: grasp_trash
    predicate: {kind: holding, objects: [trash]}
  - name: Move
    skill: move_to_bin
    predicate: {kind: base_in_zone, zone: bin, holding: [trash]}
  - name: Throw
    skill: throw
    predicate: {kind: objects_in_zone, pairs: [[trash, bin]]}
  - name: Back
    skill: go_back
    predicate: {kind: base_in_zone, zone: home}
"""

DELIVER_TOOL = """
name: deliver-tool-6stage
step_limit: 1000
imu_sigma: 0.01
cameras: [top, wrist_left, wrist_right]
kinematics: {v_max: 0.08, w_max: 2.0}
base: {x: [0.45, 0.55], y: [0.14, 0.2], heading: [0.8, 2.4]}
objects:
  screw: {x: [0.2, 0.3], y: [0.62, 0.72], radius: 0.03, color: gray}
  pouch: {x: [0.3, 0.4], y: [0.74, 0.84], radius: 0.035, color: orange}
zones:
  table: {x: [0.27, 0.33], y: [0.68, 0.76], radius: 0.13, color: cyan, style: ring}
  worker: {x: [0.78, 0.82], y: [0.72, 0.8], radius: 0.1, color: magenta}
  home: {x: [0.5, 0.5], y: [0.16, 0.16], radius: 0.09, color: green}
stages:
  - name: Move
    skill: move_to_table
    predicate: {kind: base_in_zone, zone: table}
  - name: Grasp (screw)
    skill: grasp_screw
    predicate: {kind: holding, objects: [screw], arm: left}
  - name: Grasp (pouch)
    skill: grasp_pouch
    predicate: {kind: holding, objects: [pouch], arm: right}
  - name: Move (worker)
    skill: move_to_worker
    predicate: {kind: base_in_zone, zone: worker, holding: [screw, pouch]}
  - name: Put
    skill: put
    predicate: {kind: objects_in_zone, pairs: [[screw, worker], [pouch, worker]]}
  - name: Back
    skill: go_back
    predicate: {kind: base_in_zone, zone: home}
"""

_BUILTINS = {
    "push-block": PUSH_BLOCK,
    "sort-workpiece": SORT_WORKPIECE,
    "clean-trash-4stage": CLEAN_TRASH,
    "deliver-tool-6stage": DELIVER_TOOL,
}


def builtin_task_names() -> list[str]:
    return sorted(_BUILTINS)


def get_task(name: str) -> TaskSpec:
    if name not in _BUILTINS:
        raise ConfigurationError(
            f"unknown task {name!r}; built-ins: {builtin_task_names()}")
    return parse_task(_BUILTINS[name])
