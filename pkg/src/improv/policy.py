"""Conditional diffusion policy over action chunks.

An observation encoder maps the state to a bounded 32-d latent; a
noise-prediction MLP takes [noisy action chunk | latent | timestep features]
and is trained by denoising regression (plain or per-sample weighted). A
DDIM-style sampler with a squared-cosine schedule generates chunks, and a
receding-horizon controller executes the first few actions of each chunk.

Action chunks are normalized per dimension to [-1,1] using statistics frozen
from the initial demonstration set, so policies from every round share one
action space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import envs, explore, fileio
from .numerics import (MlpParams, RngKey, adam_init, adam_step,
                       _backward_from_cache, _forward_cached, init_mlp,
                       mlp_forward, mlp_param_arrays, mlp_with_arrays)

LATENT_DIM = 32
TEMB_DIM = 16
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass
class NoiseSchedule:
    k_train: int
    k_infer: int
    betas: np.ndarray        # (k_train,)
    alphas: np.ndarray       # (k_train,)
    alpha_bars: np.ndarray   # (k_train,) strictly decreasing
    infer_steps: np.ndarray  # (k_infer,) training indices, descending
    infer_prev: np.ndarray   # (k_infer,) previous index per step, -1 at the end
    sigma_full: np.ndarray   # (k_infer,) per-step sigma at eta=1


def make_schedule(k_train: int = 100, k_infer: int = 20) -> NoiseSchedule:
    """Squared-cosine beta schedule with an evenly strided inference subset."""
    if k_infer <= 0:
        raise ValueError("k_infer must be positive")
    if k_infer > k_train:
        raise ValueError(f"k_infer {k_infer} exceeds k_train {k_train}")
    if k_train % k_infer != 0:
        raise ValueError(f"k_infer {k_infer} must divide k_train {k_train} evenly")

    s = 0.008
    ts = np.arange(k_train + 1) / k_train
    f = np.cos((ts + s) / (1.0 + s) * np.pi / 2.0) ** 2
    betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, 0.999)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)

    stride = k_train // k_infer
    infer_steps = np.arange(k_train - stride, -1, -stride)
    infer_prev = np.concatenate([infer_steps[1:], [-1]])

    ab = alpha_bars[infer_steps]
    ab_prev = np.where(infer_prev >= 0, alpha_bars[np.maximum(infer_prev, 0)], 1.0)
    sigma_full = np.sqrt((1.0 - ab_prev) / (1.0 - ab)) * np.sqrt(1.0 - ab / ab_prev)

    return NoiseSchedule(k_train, k_infer, betas, alphas, alpha_bars,
                         infer_steps, infer_prev, sigma_full)


def timestep_embedding(k) -> np.ndarray:
    """16-dim sinusoidal features of the training step index."""
    k = np.asarray(k, dtype=np.float64)
    half = TEMB_DIM // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = k[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


# ---------------------------------------------------------------------------
# Policy parameters
# ---------------------------------------------------------------------------

@dataclass
class SamplerConfig:
    eta: float = 0.0
    exploration: explore.ExplorationConfig | None = None

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0,1], got {self.eta}")


@dataclass
class PolicyParams:
    encoder: MlpParams   # obs -> latent in (-1,1)^32
    eps_net: MlpParams   # [chunk | latent | temb] -> predicted noise
    schedule: NoiseSchedule
    obs_dim: int
    act_dim: int
    h: int               # chunk horizon
    h_exec: int          # executed prefix
    act_lo: np.ndarray   # (act_dim,) normalization statistics
    act_hi: np.ndarray


def action_stats(trajectories) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension min/max over every action in the dataset."""
    acts = np.concatenate([t.actions for t in trajectories], axis=0)
    lo = acts.min(axis=0)
    hi = acts.max(axis=0)
    span = hi - lo
    tiny = span < 1e-9
    if np.any(tiny):  # degenerate dimension: widen so normalize stays finite
        hi = np.where(tiny, lo + 1e-9, hi)
    return lo, hi


def init_policy(obs_dim: int, act_dim: int, act_lo, act_hi, key: RngKey,
                h: int = 8, h_exec: int = 4,
                enc_hidden=(3,), eps_hidden=(128, 128),
                k_train: int = 100, k_infer: int = 20) -> PolicyParams:
    """Fresh policy parameters with frozen action-normalization statistics.

    Default hidden widths are deliberately small: the few-shot regime needs
    an imperfect starting policy whose failures the improvement loop can fix.
    """
    if h_exec > h:
        raise ValueError(f"h_exec {h_exec} exceeds chunk horizon {h}")
    encoder = init_mlp((obs_dim, *enc_hidden, LATENT_DIM), key.child("encoder"),
                       hidden_activation="relu", output_activation="tanh")
    eps_in = h * act_dim + LATENT_DIM + TEMB_DIM
    eps_net = init_mlp((eps_in, *eps_hidden, h * act_dim), key.child("eps"),
                       hidden_activation="relu", output_activation="identity")
    return PolicyParams(encoder, eps_net, make_schedule(k_train, k_infer),
                        obs_dim, act_dim, h, h_exec,
                        np.asarray(act_lo, dtype=np.float64),
                        np.asarray(act_hi, dtype=np.float64))


def normalize_actions(params: PolicyParams, actions: np.ndarray) -> np.ndarray:
    span = params.act_hi - params.act_lo
    return 2.0 * (actions - params.act_lo) / span - 1.0


def denormalize_actions(params: PolicyParams, normed: np.ndarray) -> np.ndarray:
    span = params.act_hi - params.act_lo
    return (normed + 1.0) / 2.0 * span + params.act_lo


def encode_obs(params: PolicyParams, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != params.obs_dim:
        raise ValueError(f"observation shape {obs.shape} does not match obs_dim {params.obs_dim}")
    return mlp_forward(params.encoder, obs)


# ---------------------------------------------------------------------------
# Training set construction
# ---------------------------------------------------------------------------

@dataclass
class TrainingSet:
    obs: np.ndarray      # (N, obs_dim)
    chunks: np.ndarray   # (N, h*act_dim) normalized to [-1,1]
    weights: np.ndarray  # (N,) positive


def build_training_set(trajectories, params: PolicyParams,
                       drop_masked: bool = False) -> TrainingSet:
    """One sample per trajectory step: (obs_t, normalized padded chunk, weight).

    Chunks are tail-padded by repeating the last action. Steps whose segment
    mask is False are dropped when drop_masked is set (hard exclusion);
    otherwise soft exclusion is expected to be baked into the weights.
    """
    obs_rows, chunk_rows, w_rows = [], [], []
    h = params.h
    for traj in trajectories:
        acts = traj.actions
        n = len(acts)
        wts = traj.weights if traj.weights is not None else np.ones(n)
        for t in range(n):
            if drop_masked and traj.segment_mask is not None and not traj.segment_mask[t]:
                continue
            chunk = acts[t:t + h]
            if len(chunk) < h:
                pad = np.repeat(chunk[-1:], h - len(chunk), axis=0)
                chunk = np.concatenate([chunk, pad], axis=0)
            obs_rows.append(traj.observations[t])
            chunk_rows.append(normalize_actions(params, chunk).reshape(-1))
            w_rows.append(wts[t])
    if not obs_rows:
        return TrainingSet(np.zeros((0, params.obs_dim)),
                           np.zeros((0, h * params.act_dim)), np.zeros(0))
    return TrainingSet(np.array(obs_rows), np.array(chunk_rows), np.array(w_rows))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _loss_and_grads(params: PolicyParams, obs: np.ndarray, chunks: np.ndarray,
                    weights: np.ndarray, key: RngKey, eps_oracle=None):
    batch = obs.shape[0]
    dim = chunks.shape[1]
    gen = key.generator()
    ks = gen.integers(0, params.schedule.k_train, batch)
    eps = gen.standard_normal((batch, dim))

    ab = params.schedule.alpha_bars[ks][:, None]
    noisy = np.sqrt(ab) * chunks + np.sqrt(1.0 - ab) * eps

    latent, enc_cache = _forward_cached(params.encoder, obs)
    if eps_oracle is not None:
        # test seam: score an oracle noise predictor instead of the network
        pred = eps_oracle(noisy, latent, ks)
        resid = pred - eps
        return float(np.mean(weights * np.mean(resid * resid, axis=1))), None
    temb = timestep_embedding(ks)
    net_in = np.concatenate([noisy, latent, temb], axis=1)
    pred, eps_cache = _forward_cached(params.eps_net, net_in)

    resid = pred - eps
    per_sample = np.mean(resid * resid, axis=1)
    loss = float(np.mean(weights * per_sample))

    d_resid = resid * (2.0 / dim) * (weights / batch)[:, None]
    eps_grads, d_in = _backward_from_cache(params.eps_net, eps_cache, d_resid)
    d_latent = d_in[:, dim:dim + LATENT_DIM]
    enc_grads, _ = _backward_from_cache(params.encoder, enc_cache, d_latent)
    return loss, enc_grads + eps_grads


def weighted_diffusion_loss(params: PolicyParams, obs, chunks, weights, key: RngKey):
    """Per-sample weighted denoising loss and exact joint gradients.

    Returns (scalar, grads) where grads covers encoder then eps_net arrays in
    ``policy_param_arrays`` order. All-ones weights reproduce
    ``diffusion_loss`` bit for bit.
    """
    obs = np.asarray(obs, dtype=np.float64)
    chunks = np.asarray(chunks, dtype=np.float64)
    if obs.ndim != 2 or chunks.ndim != 2 or obs.shape[0] != chunks.shape[0]:
        raise ValueError(f"bad batch shapes obs={obs.shape} chunks={chunks.shape}")
    if obs.shape[0] == 0:
        raise ValueError("empty batch")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (obs.shape[0],) or not np.all(np.isfinite(weights)) \
            or np.any(weights <= 0.0):
        raise ValueError("weights must be positive and finite, one per sample")
    return _loss_and_grads(params, obs, chunks, weights, key)


def diffusion_loss(params: PolicyParams, obs, chunks, key: RngKey):
    """Mean squared error between sampled and predicted noise, with gradients."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise ValueError("empty batch")
    return weighted_diffusion_loss(params, obs, chunks, np.ones(obs.shape[0]), key)


def policy_param_arrays(params: PolicyParams) -> list[np.ndarray]:
    return mlp_param_arrays(params.encoder) + mlp_param_arrays(params.eps_net)


def policy_with_arrays(params: PolicyParams, arrays) -> PolicyParams:
    n_enc = 2 * len(params.encoder.weights)
    encoder = mlp_with_arrays(params.encoder, arrays[:n_enc])
    eps_net = mlp_with_arrays(params.eps_net, arrays[n_enc:])
    return replace(params, encoder=encoder, eps_net=eps_net)


def train_policy(params: PolicyParams, data: TrainingSet, key: RngKey,
                 iters: int, batch_size: int = 64, lr: float = 3e-4,
                 log_every: int = 0) -> PolicyParams:
    """Fixed-budget weighted denoising regression with Adam.

    Deterministic given (params, data, key); batch order and gradient
    accumulation are single-threaded and order-fixed.
    """
    n = data.obs.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    arrays = policy_param_arrays(params)
    state = adam_init(arrays, lr=lr)
    bgen = key.child("batches").generator()
    current = params
    t0 = time.perf_counter()
    for it in range(iters):
        idx = bgen.integers(0, n, batch_size)
        loss, grads = weighted_diffusion_loss(
            current, data.obs[idx], data.chunks[idx], data.weights[idx],
            key.child("loss", it))
        state, arrays = adam_step(state, arrays, grads)
        current = policy_with_arrays(current, arrays)
        if log_every and (it + 1) % log_every == 0:
            print(f"    iter {it + 1}/{iters} loss {loss:.4f} "
                  f"({time.perf_counter() - t0:.1f}s)")
    return current


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _mlp_record(mlp: MlpParams) -> dict:
    return {
        "layer_sizes": list(mlp.layer_sizes),
        "hidden_activation": mlp.hidden_activation,
        "output_activation": mlp.output_activation,
        "weights": [w.reshape(-1) for w in mlp.weights],
        "biases": [b for b in mlp.biases],
    }


def _mlp_from_record(rec: dict) -> MlpParams:
    sizes = tuple(int(s) for s in rec["layer_sizes"])
    weights = []
    biases = []
    for i in range(len(sizes) - 1):
        w = np.asarray(rec["weights"][i], dtype=np.float64).reshape(sizes[i + 1], sizes[i])
        b = np.asarray(rec["biases"][i], dtype=np.float64)
        weights.append(w)
        biases.append(b)
    return MlpParams(sizes, weights, biases,
                     rec["hidden_activation"], rec["output_activation"])


def checkpoint_record(params: PolicyParams, config_hash: str) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "h": params.h,
        "h_exec": params.h_exec,
        "act_lo": params.act_lo,
        "act_hi": params.act_hi,
        "schedule": {"k_train": params.schedule.k_train,
                     "k_infer": params.schedule.k_infer},
        "encoder": _mlp_record(params.encoder),
        "eps_net": _mlp_record(params.eps_net),
    }


def save_checkpoint(params: PolicyParams, path, config_hash: str) -> None:
    fileio.write_json(path, checkpoint_record(params, config_hash))


def load_checkpoint(path) -> tuple[PolicyParams, str]:
    rec = fileio.read_json(path)
    if rec.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {rec.get('version')!r}")
    params = PolicyParams(
        encoder=_mlp_from_record(rec["encoder"]),
        eps_net=_mlp_from_record(rec["eps_net"]),
        schedule=make_schedule(int(rec["schedule"]["k_train"]),
                               int(rec["schedule"]["k_infer"])),
        obs_dim=int(rec["obs_dim"]),
        act_dim=int(rec["act_dim"]),
        h=int(rec["h"]),
        h_exec=int(rec["h_exec"]),
        act_lo=np.asarray(rec["act_lo"], dtype=np.float64),
        act_hi=np.asarray(rec["act_hi"], dtype=np.float64),
    )
    return params, rec["config_hash"]


def params_digest(params: PolicyParams) -> str:
    """Stable identifier for a set of weights (config hash excluded)."""
    return fileio.sha256_hex(fileio.canonical_json(checkpoint_record(params, "")))[:16]


def ddim_sample(eps_fn, schedule: NoiseSchedule, dim: int, eta: float,
                latent_provider, key: RngKey) -> np.ndarray:
    """Run the denoising loop from Gaussian noise; returns the raw chunk.

    eps_fn(x, latent, t) predicts the noise at training index t. The latent
    provider is called with the remaining-step count k (k_infer at the first,
    noisiest step, down to 1 at the last) so exploration can anneal over the
    denoising run.
    """
    x = key.child("init").normal(dim)
    ab = schedule.alpha_bars
    for i, t in enumerate(schedule.infer_steps):
        k_level = schedule.k_infer - i
        latent = latent_provider(k_level)
        eps = eps_fn(x, latent, int(t))
        ab_t = ab[t]
        prev = schedule.infer_prev[i]
        ab_prev = ab[prev] if prev >= 0 else 1.0
        x0 = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        sigma = eta * schedule.sigma_full[i]
        x = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0)) * eps
        if sigma > 0.0:
            x = x + sigma * key.child("z", i).normal(dim)
    return x


def sample_chunk(params: PolicyParams, latent_provider, sampler: SamplerConfig,
                 key: RngKey) -> np.ndarray:
    """Sample one action chunk; clipped to [-1,1] then denormalized.

    The latent provider supplies the conditioning latent per denoising step
    (a constant function for plain inference).
    """
    dim = params.h * params.act_dim

    def eps_fn(x, latent, t):
        net_in = np.concatenate([x, latent, timestep_embedding(t)])
        return mlp_forward(params.eps_net, net_in)

    eta = sampler.eta
    expl = sampler.exploration
    if expl is not None and expl.kind == "ddim_eta":
        eta = expl.eta_override
    chunk = ddim_sample(eps_fn, params.schedule, dim, eta, latent_provider, key)
    if expl is not None and expl.kind == "action_noise":
        chunk = explore.perturb_action(chunk, expl, key.child("action_noise"))
    chunk = np.clip(chunk, -1.0, 1.0)
    return denormalize_actions(params, chunk.reshape(params.h, params.act_dim))


def sample_for_state(params: PolicyParams, obs_vec, sampler: SamplerConfig,
                     key: RngKey) -> np.ndarray:
    """Encode the observation, wire up exploration, and sample a chunk."""
    base_latent = encode_obs(params, obs_vec)
    provider = explore.make_latent_provider(
        base_latent, sampler.exploration, key.child("latent_noise"))
    return sample_chunk(params, provider, sampler, key)


def act(params: PolicyParams, env_name: str, state, sampler: SamplerConfig,
        key: RngKey):
    """Sample one chunk and execute its first h_exec actions.

    Returns (steps, state, done, success) where steps is a list of
    (observation, action) pairs actually executed.
    """
    chunk = sample_for_state(params, envs.observation(env_name, state), sampler, key)
    steps = []
    done = False
    success = False
    for j in range(params.h_exec):
        obs_before = envs.observation(env_name, state)
        action = chunk[j]
        state, done, success = envs.step(env_name, state, action)
        steps.append((obs_before, action))
        if done:
            break
    return steps, state, done, success


def rollout(params: PolicyParams, env_name: str, scenario_id: int,
            sampler: SamplerConfig, key: RngKey, traj_id: str,
            source: str = "self", round_tag: int = 0) -> envs.Trajectory:
    """Receding-horizon episode from a scenario's initial state."""
    state = envs.reset(env_name, scenario_id)
    observations = [envs.observation(env_name, state)]
    actions = []
    done = False
    success = False
    chunk_idx = 0
    while not done:
        chunk = sample_for_state(params, observations[-1], sampler,
                                 key.child("chunk", chunk_idx))
        for j in range(params.h_exec):
            action = chunk[j]
            state, done, success = envs.step(env_name, state, action)
            actions.append(action)
            observations.append(envs.observation(env_name, state))
            if done:
                break
        chunk_idx += 1
    return envs.Trajectory(
        traj_id=traj_id,
        scenario_id=scenario_id,
        source=source,
        round=round_tag,
        success=success,
        observations=np.array(observations),
        actions=np.array(actions).reshape(len(actions), 2),
    )
