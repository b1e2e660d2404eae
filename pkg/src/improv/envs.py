"""Two deterministic 2D tasks with multimodal solutions and scripted experts.

fork_reach: reach a goal behind a square obstacle; the obstacle blocks the
straight line so a demonstration must detour left or right.

pick_place: approach an object (from the left or the right), grasp it by
proximity, and carry it to a fixed container.

Dynamics are pure functions; contact with the obstacle slides instead of
stopping the episode, so recovery behavior is reachable. Scripted experts
with per-mode waypoints stand in for human demonstrations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngKey

ENV_NAMES = ("fork_reach", "pick_place")

T_MAX = 100
STEP_MAX = 0.05
START = np.array([0.5, 0.1])
START_JITTER = 0.05

# fork_reach geometry
GOAL = np.array([0.5, 0.9])
GOAL_TOL = 0.05
OBSTACLE_LO = np.array([0.40, 0.40])
OBSTACLE_HI = np.array([0.60, 0.60])

# pick_place geometry
OBJECT_LO = np.array([0.2, 0.2])
OBJECT_HI = np.array([0.8, 0.5])
CONTAINER = np.array([0.5, 0.85])
CONTAINER_TOL = 0.06
GRASP_TOL = 0.03

EXPERT_SPEED = 0.03
EXPERT_JITTER = 0.005


@dataclass(frozen=True)
class EnvState:
    agent_pos: np.ndarray          # 2-vector in [0,1]^2
    object_pos: np.ndarray | None  # pick_place only
    holding: bool                  # pick_place only
    t: int


@dataclass(frozen=True)
class Scenario:
    scenario_id: int
    env_name: str


@dataclass
class Trajectory:
    traj_id: str
    scenario_id: int
    source: str  # "expert" | "self"
    round: int
    success: bool
    observations: np.ndarray            # (T+1, obs_dim)
    actions: np.ndarray                 # (T, 2)
    segment_mask: np.ndarray | None = None  # (T,) bool
    weights: np.ndarray | None = None       # (T,) positive floats


def _check_env(env_name: str) -> None:
    if env_name not in ENV_NAMES:
        raise ValueError(f"unknown env_name {env_name!r}; expected one of {ENV_NAMES}")


def obs_dim(env_name: str) -> int:
    _check_env(env_name)
    return 2 if env_name == "fork_reach" else 5


def observation(env_name: str, state: EnvState) -> np.ndarray:
    """Flatten the task state: agent pos (+ object pos and holding).

    The step counter is omitted: positions are Markov for these dynamics
    (t only drives the timeout), and time conditioning would hand the policy
    an out-of-distribution escape signal in stuck states, masking the modal
    collapse this testbed exists to exhibit.
    """
    _check_env(env_name)
    if env_name == "fork_reach":
        return state.agent_pos.copy()
    return np.array([
        state.agent_pos[0], state.agent_pos[1],
        state.object_pos[0], state.object_pos[1],
        1.0 if state.holding else 0.0,
    ])


def reset(env_name: str, scenario_id: int) -> EnvState:
    """Deterministic initial state derived from the scenario id."""
    _check_env(env_name)
    key = RngKey(scenario_id).child("reset", env_name)
    gen = key.generator()
    jitter = gen.uniform(-START_JITTER, START_JITTER, 2)
    agent = START + jitter
    if env_name == "fork_reach":
        return EnvState(agent, None, False, 0)
    obj = gen.uniform(OBJECT_LO, OBJECT_HI)
    return EnvState(agent, obj, False, 0)


def _clip_step(action: np.ndarray) -> np.ndarray:
    norm = float(np.hypot(action[0], action[1]))
    if norm > STEP_MAX:
        return action * (STEP_MAX / norm)
    return action


def _project_out_of_obstacle(pos: np.ndarray) -> np.ndarray:
    """Push a point strictly inside the obstacle to the nearest face."""
    x, y = pos
    if not (OBSTACLE_LO[0] < x < OBSTACLE_HI[0] and OBSTACLE_LO[1] < y < OBSTACLE_HI[1]):
        return pos
    pushes = (
        (x - OBSTACLE_LO[0], 0, OBSTACLE_LO[0]),
        (OBSTACLE_HI[0] - x, 0, OBSTACLE_HI[0]),
        (y - OBSTACLE_LO[1], 1, OBSTACLE_LO[1]),
        (OBSTACLE_HI[1] - y, 1, OBSTACLE_HI[1]),
    )
    depth, axis, face = min(pushes, key=lambda p: p[0])
    out = pos.copy()
    out[axis] = face
    return out


def success_predicate(env_name: str, state: EnvState) -> bool:
    _check_env(env_name)
    if env_name == "fork_reach":
        return float(np.linalg.norm(state.agent_pos - GOAL)) <= GOAL_TOL
    return (not state.holding
            and float(np.linalg.norm(state.object_pos - CONTAINER)) <= CONTAINER_TOL)


def step(env_name: str, state: EnvState, action) -> tuple[EnvState, bool, bool]:
    """Advance one step; returns (state', done, success). Pure function."""
    _check_env(env_name)
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (2,) or not np.all(np.isfinite(action)):
        raise ValueError(f"action must be a finite 2-vector, got {action!r}")
    moved = _clip_step(action)
    pos = np.clip(state.agent_pos + moved, 0.0, 1.0)

    if env_name == "fork_reach":
        pos = _project_out_of_obstacle(pos)
        new_state = EnvState(pos, None, False, state.t + 1)
    else:
        holding = state.holding
        obj = state.object_pos
        if (not holding
                and float(np.linalg.norm(pos - obj)) <= GRASP_TOL
                and float(np.hypot(moved[0], moved[1])) > 0.0):
            holding = True
        if holding:
            obj = pos.copy()
            if float(np.linalg.norm(obj - CONTAINER)) <= CONTAINER_TOL:
                holding = False  # release inside the container
        new_state = EnvState(pos, obj, holding, state.t + 1)

    success = success_predicate(env_name, new_state)
    done = success or new_state.t >= T_MAX
    return new_state, done, success


# ---------------------------------------------------------------------------
# Scripted experts
# ---------------------------------------------------------------------------

def _toward(pos: np.ndarray, target: np.ndarray, speed: float) -> np.ndarray:
    delta = target - pos
    dist = float(np.linalg.norm(delta))
    if dist <= 1e-12:
        return np.zeros(2)
    return delta * (min(speed, dist) / dist)


def scripted_expert(env_name: str, state: EnvState, mode: str, key: RngKey,
                    jitter_std: float = EXPERT_JITTER) -> np.ndarray:
    """Waypoint-following velocity command with Gaussian jitter.

    mode "left"/"right" picks the detour side (fork_reach) or the approach
    side of the object (pick_place).
    """
    _check_env(env_name)
    if mode not in ("left", "right"):
        raise ValueError(f"mode must be 'left' or 'right', got {mode!r}")
    pos = state.agent_pos
    if env_name == "fork_reach":
        waypoint = np.array([0.25, 0.5]) if mode == "left" else np.array([0.75, 0.5])
        past_fork = pos[1] >= 0.48 or float(np.linalg.norm(pos - waypoint)) <= 0.04
        target = GOAL if past_fork else waypoint
    else:
        if state.holding:
            target = CONTAINER
        else:
            side = np.array([-0.06, 0.0]) if mode == "left" else np.array([0.06, 0.0])
            approach = state.object_pos + side
            near_object = float(np.linalg.norm(pos - state.object_pos)) <= 0.07
            target = state.object_pos if near_object else approach
    action = _toward(pos, target, EXPERT_SPEED)
    jitter = key.normal(2) * jitter_std
    return action + jitter


def rollout_expert(env_name: str, scenario_id: int, mode: str, key: RngKey,
                   traj_id: str = "expert",
                   jitter_std: float = EXPERT_JITTER) -> Trajectory:
    """Run the scripted expert from a scenario's initial state to done."""
    state = reset(env_name, scenario_id)
    observations = [observation(env_name, state)]
    actions = []
    success = False
    done = False
    while not done:
        step_key = key.child("jitter", state.t)
        action = scripted_expert(env_name, state, mode, step_key, jitter_std)
        state, done, success = step(env_name, state, action)
        observations.append(observation(env_name, state))
        actions.append(np.asarray(action, dtype=np.float64))
    return Trajectory(
        traj_id=traj_id,
        scenario_id=scenario_id,
        source="expert",
        round=0,
        success=success,
        observations=np.array(observations),
        actions=np.array(actions).reshape(len(actions), 2),
    )


def gen_demos(env_name: str, n: int, mode_mix: float, key: RngKey) -> list[Trajectory]:
    """Generate n successful expert trajectories; modes drawn Bernoulli(mode_mix).

    mode_mix is the probability of the "right" mode. Failed attempts are
    re-rolled with a fresh key and never returned.
    """
    _check_env(env_name)
    if not 0.0 <= mode_mix <= 1.0:
        raise ValueError(f"mode_mix must be in [0,1], got {mode_mix}")
    demos: list[Trajectory] = []
    max_attempts = 10 * n
    attempt = 0
    while len(demos) < n:
        if attempt >= max_attempts:
            raise RuntimeError(
                f"expert failed more than half of {max_attempts} attempts on "
                f"{env_name}; environment misconfigured")
        akey = key.child("attempt", attempt)
        scenario_id = int(akey.child("scenario").integers(0, 2**63))
        mode = "right" if float(akey.child("mode").uniform()) < mode_mix else "left"
        traj = rollout_expert(env_name, scenario_id, mode, akey.child("traj"),
                              traj_id=f"expert-{len(demos):04d}")
        attempt += 1
        if traj.success:
            demos.append(traj)
    return demos


# ---------------------------------------------------------------------------
# Trajectory records
# ---------------------------------------------------------------------------

def validate_trajectory(traj: Trajectory) -> None:
    n_obs = len(traj.observations)
    n_act = len(traj.actions)
    if n_act not in (n_obs - 1, n_obs):
        raise ValueError(f"{traj.traj_id}: {n_act} actions vs {n_obs} observations")
    if traj.weights is not None:
        w = np.asarray(traj.weights)
        if len(w) != n_act or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError(f"{traj.traj_id}: weights must be positive finite, one per action")
    if traj.segment_mask is not None and len(traj.segment_mask) != n_act:
        raise ValueError(f"{traj.traj_id}: segment mask length {len(traj.segment_mask)} != {n_act}")
    if traj.source not in ("expert", "self"):
        raise ValueError(f"{traj.traj_id}: unknown source {traj.source!r}")


def traj_to_record(traj: Trajectory) -> dict:
    return {
        "traj_id": traj.traj_id,
        "scenario_id": int(traj.scenario_id),
        "source": traj.source,
        "round": int(traj.round),
        "success": bool(traj.success),
        "observations": traj.observations,
        "actions": traj.actions,
        "segment_mask": None if traj.segment_mask is None
        else [bool(v) for v in traj.segment_mask],
        "weights": None if traj.weights is None else traj.weights,
    }


def traj_from_record(rec: dict) -> Trajectory:
    traj = Trajectory(
        traj_id=rec["traj_id"],
        scenario_id=int(rec["scenario_id"]),
        source=rec["source"],
        round=int(rec["round"]),
        success=bool(rec["success"]),
        observations=np.asarray(rec["observations"], dtype=np.float64),
        actions=np.asarray(rec["actions"], dtype=np.float64).reshape(-1, 2),
        segment_mask=None if rec.get("segment_mask") is None
        else np.asarray(rec["segment_mask"], dtype=bool),
        weights=None if rec.get("weights") is None
        else np.asarray(rec["weights"], dtype=np.float64),
    )
    validate_trajectory(traj)
    return traj


def replay_trajectory(env_name: str, traj: Trajectory, atol: float = 1e-9) -> list[str]:
    """Re-simulate stored actions; report any mismatch with the record."""
    problems: list[str] = []
    state = reset(env_name, traj.scenario_id)
    obs = [observation(env_name, state)]
    success = False
    for action in traj.actions:
        state, done, success = step(env_name, state, action)
        obs.append(observation(env_name, state))
    obs_arr = np.array(obs)
    if obs_arr.shape != traj.observations.shape:
        problems.append(
            f"{traj.traj_id}: replay produced {obs_arr.shape} observations, "
            f"stored {traj.observations.shape}")
    elif float(np.max(np.abs(obs_arr - traj.observations))) > atol:
        problems.append(
            f"{traj.traj_id}: replayed observations deviate by "
            f"{float(np.max(np.abs(obs_arr - traj.observations))):.3e}")
    if bool(success) != bool(traj.success):
        problems.append(
            f"{traj.traj_id}: replayed success={success} but stored {traj.success}")
    return problems
