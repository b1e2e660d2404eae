"""Self-improvement loop for diffusion policies on small 2D multimodal tasks.

The package wires together five stages:

1. ``envs`` — deterministic 2D tasks with multimodal scripted experts that
   stand in for human demonstrations.
2. ``policy`` — a conditional diffusion policy (observation encoder +
   noise-prediction MLP) trained by denoising regression and sampled with a
   DDIM-style scheduler under receding-horizon control.
3. ``explore`` — inference-time exploration strategies, chiefly annealed
   perturbation of the conditioning latent, plus action-noise and
   raised-eta baselines.
4. ``selection`` — inter-demo filtering by per-scenario success rate and
   intra-demo weighting from IQL value increments.
5. ``orchestrate`` — the evaluate/collect/select/retrain loop with
   reproducible seeding and auditable JSON reports.

Everything is a deterministic function of (config, seed); re-running a
command reproduces output files byte for byte.
"""

__version__ = "0.1.0"
