"""Inference-time exploration strategies, pluggable into chunk sampling.

The main strategy perturbs the conditioning latent with a single Gaussian
draw per chunk, scaled by a piecewise-linear annealing factor over the
denoising run, so the sampler commits to an alternative solution mode early
and still refines precisely at the end. Action-space noise and a raised
DDIM eta are kept as ablation baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngKey, gaussian

KINDS = ("none", "modal", "action_noise", "ddim_eta")
ORIENTATIONS = ("intent", "literal")


@dataclass
class ExplorationConfig:
    kind: str = "none"
    sigma_lat: float = 0.15  # calibrated so perturbation flips modes without
    kappa1: int = 4          # collapsing competent scenarios (latent is (-1,1))
    kappa2: int = 16
    orientation: str = "intent"
    action_sigma: float = 0.1
    eta_override: float = 1.0
    k_infer: int = 20             # denoising steps the knots refer to
    fresh_noise_per_step: bool = False  # ablation: redraw n at every step

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown exploration kind {self.kind!r}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.sigma_lat < 0:
            raise ValueError(f"sigma_lat must be >= 0, got {self.sigma_lat}")
        if not 0 <= self.kappa1 < self.kappa2 <= self.k_infer:
            raise ValueError(
                f"need 0 <= kappa1 < kappa2 <= k_infer, got "
                f"({self.kappa1}, {self.kappa2}, {self.k_infer})")


def anneal_gamma(k, kappa1: float, kappa2: float) -> float:
    """Piecewise-linear decay: 1 up to kappa1, 0 from kappa2 onward."""
    if kappa1 >= kappa2:
        raise ValueError(f"kappa1 {kappa1} must be < kappa2 {kappa2}")
    if k <= kappa1:
        return 1.0
    if k >= kappa2:
        return 0.0
    return (kappa2 - k) / (kappa2 - kappa1)


def _gamma_effective(config: ExplorationConfig, k: int) -> float:
    """Annealing factor at remaining-step count k (k_infer first, 1 last).

    Orientation "intent" reflects the index so the factor is maximal at the
    start of denoising and zero at the end; "literal" applies the printed
    piecewise form to k directly.
    """
    if config.orientation == "intent":
        return anneal_gamma(config.k_infer - k, config.kappa1, config.kappa2)
    return anneal_gamma(k, config.kappa1, config.kappa2)


def perturb_latent(latent: np.ndarray, config: ExplorationConfig, k: int,
                   key: RngKey) -> np.ndarray:
    """latent + gamma_eff(k) * sigma_lat * n with n ~ N(0, I) drawn from key.

    Reuse of one n across every step of a chunk is achieved by passing the
    same key at each step; only the annealing factor varies with k.
    """
    if config.kind != "modal":
        raise ValueError(f"perturb_latent requires kind='modal', got {config.kind!r}")
    g = _gamma_effective(config, k)
    if g == 0.0 or config.sigma_lat == 0.0:
        return latent
    n = gaussian(key, latent.shape)
    return latent + g * config.sigma_lat * n


def perturb_action(chunk: np.ndarray, config: ExplorationConfig,
                   key: RngKey) -> np.ndarray:
    """Add N(0, action_sigma^2 I) in normalized units, then re-clip."""
    if config.kind != "action_noise":
        raise ValueError(f"perturb_action requires kind='action_noise', got {config.kind!r}")
    if config.action_sigma == 0.0:
        return chunk
    noisy = chunk + gaussian(key, chunk.shape) * config.action_sigma
    return np.clip(noisy, -1.0, 1.0)


def make_latent_provider(base_latent: np.ndarray,
                         config: ExplorationConfig | None, key: RngKey):
    """Per-step conditioning latent for one chunk generation.

    Only kind="modal" perturbs; every other kind conditions on the clean
    latent (their effects live elsewhere in the sampler).
    """
    if config is None or config.kind != "modal":
        return lambda k: base_latent
    if config.fresh_noise_per_step:
        return lambda k: perturb_latent(base_latent, config, k, key.child("step", k))
    chunk_key = key.child("chunk_noise")
    return lambda k: perturb_latent(base_latent, config, k, chunk_key)
