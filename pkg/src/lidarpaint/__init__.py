"""LiDAR-guided artifact repair for dynamic Gaussian-splat street scenes.

The package trains a splat scene on a driving log, renders novel views whose
artifacts are repaired by a one-step latent denoiser conditioned on rasterized
LiDAR, and feeds the repaired views back as extra supervision.
"""

__version__ = "0.1.0"
