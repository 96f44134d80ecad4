"""Synthetic fixtures shared across test modules."""

import numpy as np

from deskbot.episodes import Episode, StepRecord, derive_boundaries
from deskbot.policy import Observation, PolicyConfig
from deskbot.proprio import ProprioState, quat_from_planar_angle
from deskbot.vision import EncoderConfig, FusionConfig


def rand_frame(rng, shape=(3, 16, 16)):
    """A frame with exactly 8-bit-quantized float pixels."""
    return rng.integers(0, 256, size=shape).astype(np.float64) / 255.0


def rand_proprio(rng, J=3):
    return ProprioState(
        qpos=rng.uniform(-1, 1, (2, J)),
        gripper=rng.uniform(0, 1, 2),
        quat_left=quat_from_planar_angle(rng.uniform(-3, 3)),
        quat_right=quat_from_planar_angle(rng.uniform(-3, 3)),
    )


def make_episode(rng, n_steps=20, J=3, A=10, task="toy", img_shape=(3, 16, 16),
                 event_steps=None, stage_names=None, seed=0):
    """Episode with optional stage events at the given step indices."""
    event_steps = dict(event_steps or {})
    steps = []
    for t in range(n_steps):
        obs = Observation(images=[rand_frame(rng, img_shape)],
                          proprio=rand_proprio(rng, J), t=t)
        events = [event_steps[t]] if t in event_steps else []
        steps.append(StepRecord(obs, rng.uniform(-1, 1, A), events))
    header = {"task": task, "seed": seed, "J": J, "dt": 0.05,
              "cameras": "top", "action_dim": A, "step_limit": n_steps + 10}
    bounds = derive_boundaries(steps, stage_names or ["all"])
    return Episode(header, steps, bounds)


def tiny_policy_config(**kw):
    """Smallest sensible config: 16x16 frames, 4-step horizon."""
    fusion = FusionConfig(channels=8, groups=4) if kw.get("use_fusion", True) else None
    enc = EncoderConfig(input_size=(3, 16, 16), stage_channels=(4, 8),
                        fusion_stage=2, embed_dim=6, stem_pool=1,
                        norm_groups=2, coord_channels=False, fusion=fusion)
    defaults = dict(action_dim=10, proprio_dim=16, horizon=4, history=2,
                    diffusion_steps=5, unet_width=8, unet_groups=2,
                    cond_hidden=16, k_embed_dim=4, encoder=enc)
    defaults.update(kw)
    return PolicyConfig(**defaults)
