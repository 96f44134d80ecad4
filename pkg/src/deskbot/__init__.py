"""deskbot: a desk-scale 2D mobile-manipulation learning stack.

Core pieces: a small autodiff tensor engine, an exact Haar wavelet
transform, a spatio-frequency visual encoder, quaternion proprioception,
a diffusion action policy, a deterministic planar simulator, an episode
datastore, a task planner with skill matching, and a teleoperation
gateway service.
"""

__version__ = "0.1.0"
