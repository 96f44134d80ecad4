"""Wrist orientation quaternions and the fused proprioceptive vector.

The simulator's arms rotate in the plane, so emulated wrist IMUs report
rotations about the axis normal to it; the quaternion type still carries
all four components. Quaternions are kept unit-norm and sign-canonical
(w >= 0) because q and -q encode the same rotation and a consistent sign
avoids discontinuous training targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericDivergenceError
from .tensor import Tensor

UNIT_TOL = 1e-6


class DegenerateRotationError(NumericDivergenceError):
    """Quaternion norm too close to zero to define a rotation."""


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)


def quat_normalize(q: Quaternion) -> Quaternion:
    """Scale to unit norm and canonicalize the sign.

    Canonical form: w > 0, or w == 0 and the first nonzero of (x, y, z)
    positive. Idempotent; scale-invariant for positive scales.
    """
    n = q.norm()
    if n < 1e-12:
        raise DegenerateRotationError(f"quaternion norm {n} too small to normalize")
    if abs(n - 1.0) < 1e-12:  # exact idempotence on already-unit input
        w, x, y, z = q.w, q.x, q.y, q.z
    else:
        w, x, y, z = q.w / n, q.x / n, q.y / n, q.z / n
    flip = w < 0 or (w == 0 and (x < 0 or (x == 0 and (y < 0 or (y == 0 and z < 0)))))
    if flip:
        w, x, y, z = -w, -x, -y, -z
    return Quaternion(w, x, y, z)


def quat_from_planar_angle(theta: float) -> Quaternion:
    """Rotation by theta about the axis normal to the workplane."""
    return quat_normalize(Quaternion(math.cos(theta / 2.0), 0.0, 0.0,
                                     math.sin(theta / 2.0)))


def imu_noise(q: Quaternion, sigma: float, rng) -> Quaternion:
    """Perturb each component with N(0, sigma^2) noise, then renormalize.

    rng is an integer seed or a numpy Generator; a fixed seed reproduces
    the same perturbation.
    """
    if sigma == 0.0:
        return quat_normalize(q)
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    eps = gen.normal(0.0, sigma, size=4)
    return quat_normalize(Quaternion(q.w + eps[0], q.x + eps[1],
                                     q.y + eps[2], q.z + eps[3]))


@dataclass
class ProprioState:
    """Joint angles, gripper openings, and per-wrist orientation.

    qpos is [2, J] (left arm row 0, right arm row 1), radians; gripper is
    [2] openings in [0, 1]. The fused vector has 2J + 2 + 8 entries.
    """

    qpos: np.ndarray
    gripper: np.ndarray
    quat_left: Quaternion
    quat_right: Quaternion

    def __post_init__(self):
        self.qpos = np.asarray(self.qpos, dtype=np.float64)
        self.gripper = np.asarray(self.gripper, dtype=np.float64)
        if self.qpos.ndim != 2 or self.qpos.shape[0] != 2:
            raise ContractError(f"qpos must be [2, J], got {self.qpos.shape}")
        if self.gripper.shape != (2,):
            raise ContractError(f"gripper must be [2], got {self.gripper.shape}")

    @property
    def joints_per_arm(self) -> int:
        return self.qpos.shape[1]

    def fused_length(self) -> int:
        return 2 * self.joints_per_arm + 2 + 8


def fuse_proprio(s: ProprioState) -> Tensor:
    """Concatenate joint/gripper readings with both wrist quaternions.

    Slot order: [qpos_L, grip_L, qpos_R, grip_R, quat_L(w,x,y,z),
    quat_R(w,x,y,z)]. Quaternions must already be unit-norm.
    """
    for name, q in (("left", s.quat_left), ("right", s.quat_right)):
        if abs(q.norm() - 1.0) > UNIT_TOL:
            raise ContractError(
                f"{name} wrist quaternion has norm {q.norm():.8f}; normalize first")
    vec = np.concatenate([
        s.qpos[0], s.gripper[:1], s.qpos[1], s.gripper[1:],
        s.quat_left.as_array(), s.quat_right.as_array(),
    ])
    return Tensor(vec)
