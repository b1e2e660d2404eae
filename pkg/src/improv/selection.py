"""Data selection for self-collected trials.

Inter-demo selection keeps only the successful trials of scenarios whose
per-scenario success rate is below a threshold: rare successes in hard
scenarios carry the learning signal, while trials from scenarios the policy
already handles are dropped. Intra-demo selection weights trajectory steps by
the change in a learned state value over the chunk horizon, fitted offline
with expectile-regressed Q/V networks on sparse terminal rewards; a manual
segment-mask path covers hand-annotated data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import Trajectory
from .numerics import (MlpParams, RngKey, adam_init, adam_step,
                       _backward_from_cache, _forward_cached, init_mlp,
                       mlp_forward, mlp_param_arrays, mlp_with_arrays)

SELECTION_MODES = ("none", "threshold")
INTRA_MODES = ("none", "iql")
MASK_MODES = ("soft", "hard")
MASK_EPSILON = 1e-3


@dataclass
class SelectionConfig:
    theta: float = 0.5          # per-scenario success-rate threshold (strict)
    tau_e: float = 0.7          # expectile for the V fit
    discount: float = 0.99
    beta: float = 0.5           # weight temperature
    w_max: float = 20.0         # weight clip
    iql_iters: int = 15000
    iql_lr: float = 1e-3
    iql_batch: int = 256
    target_rate: float = 0.005  # soft target update
    mode: str = "threshold"     # "none": keep every successful trial
    intra: str = "none"         # "iql": attach value-increment weights
    mask_mode: str = "soft"     # manual segment masks: soft or hard exclusion

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0,1], got {self.theta}")
        if not 0.5 <= self.tau_e < 1.0:
            raise ValueError(f"tau_e must lie in [0.5,1), got {self.tau_e}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0,1), got {self.discount}")
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.w_max < 1.0:
            raise ValueError(f"w_max must be >= 1, got {self.w_max}")
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if self.intra not in INTRA_MODES:
            raise ValueError(f"unknown intra mode {self.intra!r}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")


# ---------------------------------------------------------------------------
# Inter-demo selection
# ---------------------------------------------------------------------------

def group_by_scenario(trials) -> dict[int, list[Trajectory]]:
    """Stable grouping by scenario id, preserving trial order within groups."""
    groups: dict[int, list[Trajectory]] = {}
    for trial in trials:
        groups.setdefault(trial.scenario_id, []).append(trial)
    return groups


def inter_demo_filter(trials, theta: float) -> list[Trajectory]:
    """Keep the successes of scenarios with 0 < success rate < theta."""
    kept: list[Trajectory] = []
    for _, group in group_by_scenario(trials).items():
        successes = [t for t in group if t.success]
        rate = len(successes) / len(group)
        if 0.0 < rate < theta:
            kept.extend(successes)
    return kept


def select_trials(trials, config: SelectionConfig) -> list[Trajectory]:
    if config.mode == "threshold":
        return inter_demo_filter(trials, config.theta)
    return [t for t in trials if t.success]


# ---------------------------------------------------------------------------
# IQL value estimation
# ---------------------------------------------------------------------------

@dataclass
class ValueParams:
    q_net: MlpParams      # (obs, action) -> scalar
    v_net: MlpParams      # obs -> scalar
    q_target: MlpParams
    v_target: MlpParams
    target_rate: float
    act_scale: float      # action feature scaling used at fit time


def expectile_loss(u, tau_e: float):
    """|tau_e - 1(u<0)| * u^2, elementwise."""
    u = np.asarray(u, dtype=np.float64)
    w = np.where(u < 0.0, 1.0 - tau_e, tau_e)
    return w * u * u


def _transitions(trajectories):
    """(obs, act, reward, next_obs, done) with reward 1 at successful ends."""
    obs, act, rew, nxt, done = [], [], [], [], []
    for traj in trajectories:
        n = len(traj.actions)
        for t in range(n):
            obs.append(traj.observations[t])
            act.append(traj.actions[t])
            nxt.append(traj.observations[t + 1])
            last = t == n - 1
            rew.append(1.0 if (last and traj.success) else 0.0)
            done.append(1.0 if last else 0.0)
    return (np.array(obs), np.array(act), np.array(rew),
            np.array(nxt), np.array(done))


def v_objective(v_net: MlpParams, obs: np.ndarray, q_values: np.ndarray,
                tau_e: float):
    """Expectile regression of V toward fixed Q values; (loss, grads)."""
    batch = obs.shape[0]
    v, cache = _forward_cached(v_net, obs)
    v = v[:, 0]
    u = q_values - v
    loss = float(np.mean(expectile_loss(u, tau_e)))
    w = np.where(u < 0.0, 1.0 - tau_e, tau_e)
    d_v = (-2.0 * w * u / batch)[:, None]
    grads, _ = _backward_from_cache(v_net, cache, d_v)
    return loss, grads


def q_objective(q_net: MlpParams, qin: np.ndarray, targets: np.ndarray):
    """Squared regression of Q toward fixed targets; (loss, grads)."""
    batch = qin.shape[0]
    q, cache = _forward_cached(q_net, qin)
    q = q[:, 0]
    diff = q - targets
    loss = float(np.mean(diff * diff))
    grads, _ = _backward_from_cache(q_net, cache, (2.0 * diff / batch)[:, None])
    return loss, grads


def _soft_update(target: MlpParams, online: MlpParams, rate: float) -> MlpParams:
    arrays = [(1.0 - rate) * t + rate * o
              for t, o in zip(mlp_param_arrays(target), mlp_param_arrays(online))]
    return mlp_with_arrays(target, arrays)


def iql_fit(trajectories, config: SelectionConfig, key: RngKey,
            hidden=(64, 64)) -> ValueParams:
    """Fit Q and V networks by alternating expectile/bellman updates.

    Rewards are sparse: 1 at the terminal step of successful trajectories,
    else 0, so fitted values approximate discount^(steps to success).
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("empty dataset")
    obs, act, rew, nxt, done = _transitions(trajectories)
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty dataset: no transitions")
    obs_dim = obs.shape[1]
    act_dim = act.shape[1]
    act_scale = float(max(np.max(np.abs(act)), 1e-9))

    q_net = init_mlp((obs_dim + act_dim, *hidden, 1), key.child("q"))
    v_net = init_mlp((obs_dim, *hidden, 1), key.child("v"))
    q_target = mlp_with_arrays(q_net, [a.copy() for a in mlp_param_arrays(q_net)])
    v_target = mlp_with_arrays(v_net, [a.copy() for a in mlp_param_arrays(v_net)])

    qin_all = np.concatenate([obs, act / act_scale], axis=1)
    q_state = adam_init(mlp_param_arrays(q_net), lr=config.iql_lr)
    v_state = adam_init(mlp_param_arrays(v_net), lr=config.iql_lr)
    bgen = key.child("batches").generator()

    for _ in range(config.iql_iters):
        idx = bgen.integers(0, n, min(config.iql_batch, max(n, 1)))
        # V step: expectile toward target Q
        q_tgt_vals = mlp_forward(q_target, qin_all[idx])[:, 0]
        _, v_grads = v_objective(v_net, obs[idx], q_tgt_vals, config.tau_e)
        v_state, v_arrays = adam_step(v_state, mlp_param_arrays(v_net), v_grads)
        v_net = mlp_with_arrays(v_net, v_arrays)
        # Q step: bellman target from target V
        v_next = mlp_forward(v_target, nxt[idx])[:, 0]
        targets = rew[idx] + config.discount * (1.0 - done[idx]) * v_next
        _, q_grads = q_objective(q_net, qin_all[idx], targets)
        q_state, q_arrays = adam_step(q_state, mlp_param_arrays(q_net), q_grads)
        q_net = mlp_with_arrays(q_net, q_arrays)
        # soft target sync
        q_target = _soft_update(q_target, q_net, config.target_rate)
        v_target = _soft_update(v_target, v_net, config.target_rate)

    return ValueParams(q_net, v_net, q_target, v_target,
                       config.target_rate, act_scale)


def state_values(values: ValueParams, observations: np.ndarray) -> np.ndarray:
    out = mlp_forward(values.v_net, np.asarray(observations, dtype=np.float64))
    return out[:, 0] if out.ndim == 2 else out[0:1]


# ---------------------------------------------------------------------------
# Intra-demo weighting
# ---------------------------------------------------------------------------

def segment_weights(traj: Trajectory, values: ValueParams, h: int,
                    beta: float, w_max: float) -> np.ndarray:
    """exp((V(o_{t+h}) - V(o_t)) / beta) clipped to w_max, one per step."""
    v = state_values(values, traj.observations)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{traj.traj_id}: non-finite value estimates")
    n = len(traj.actions)
    last = len(traj.observations) - 1
    idx_now = np.arange(n)
    idx_ahead = np.minimum(idx_now + h, last)
    raw = np.exp((v[idx_ahead] - v[idx_now]) / beta)
    return np.minimum(raw, w_max)


def attach_segment_weights(trajectories, values: ValueParams, h: int,
                           config: SelectionConfig) -> list[Trajectory]:
    out = []
    for traj in trajectories:
        w = segment_weights(traj, values, h, config.beta, config.w_max)
        out.append(replace(traj, weights=w))
    return out


def apply_segment_mask(traj: Trajectory, mask, mode: str = "soft") -> Trajectory:
    """Record a manual keep-mask; soft mode down-weights dropped steps.

    Soft exclusion multiplies masked-out steps' weights by MASK_EPSILON; hard
    exclusion leaves weights alone and relies on the training-set builder to
    drop masked steps entirely.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    mask = np.asarray(mask, dtype=bool)
    n = len(traj.actions)
    if mask.shape != (n,):
        raise ValueError(f"mask length {mask.shape} does not match {n} training steps")
    base = traj.weights if traj.weights is not None else np.ones(n)
    if mode == "soft":
        weights = np.where(mask, base, base * MASK_EPSILON)
        return replace(traj, segment_mask=mask.copy(), weights=weights)
    return replace(traj, segment_mask=mask.copy())
