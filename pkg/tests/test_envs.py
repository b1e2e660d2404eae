import numpy as np
import pytest

from improv import envs, fileio
from improv.envs import (EnvState, Trajectory, gen_demos, observation, reset,
                         replay_trajectory, rollout_expert, scripted_expert,
                         step, traj_from_record, traj_to_record)
from improv.numerics import RngKey


# ---------------------------------------------------------------------------
# reset
# ---------------------------------------------------------------------------

def test_reset_deterministic():
    for env in envs.ENV_NAMES:
        a = reset(env, 42)
        b = reset(env, 42)
        assert np.array_equal(a.agent_pos, b.agent_pos)
        if env == "pick_place":
            assert np.array_equal(a.object_pos, b.object_pos)


def test_reset_unknown_env():
    with pytest.raises(ValueError, match="unknown env_name"):
        reset("lunar_lander", 0)


def test_fork_reach_starts_inside_jitter_box():
    for i in range(1000):
        s = reset("fork_reach", i)
        assert 0.45 <= s.agent_pos[0] <= 0.55
        assert 0.05 <= s.agent_pos[1] <= 0.15
        assert s.t == 0


def test_pick_place_object_in_stated_box():
    for i in range(500):
        s = reset("pick_place", i)
        assert 0.2 <= s.object_pos[0] <= 0.8
        assert 0.2 <= s.object_pos[1] <= 0.5
        assert not s.holding


def test_distinct_scenarios_differ():
    a = reset("fork_reach", 0)
    b = reset("fork_reach", 1)
    assert not np.array_equal(a.agent_pos, b.agent_pos)


# ---------------------------------------------------------------------------
# step
# ---------------------------------------------------------------------------

def test_zero_action_only_increments_time():
    s = reset("fork_reach", 3)
    s2, done, success = step("fork_reach", s, np.zeros(2))
    assert np.array_equal(s.agent_pos, s2.agent_pos)
    assert s2.t == s.t + 1
    assert not done and not success


def test_step_is_pure():
    s = reset("pick_place", 5)
    a = np.array([0.02, 0.03])
    r1 = step("pick_place", s, a)
    r2 = step("pick_place", s, a)
    assert np.array_equal(r1[0].agent_pos, r2[0].agent_pos)
    assert np.array_equal(r1[0].object_pos, r2[0].object_pos)
    assert r1[1:] == r2[1:]


def test_step_clips_displacement():
    s = EnvState(np.array([0.5, 0.1]), None, False, 0)
    s2, _, _ = step("fork_reach", s, np.array([10.0, 0.0]))
    assert abs(np.linalg.norm(s2.agent_pos - s.agent_pos) - envs.STEP_MAX) < 1e-12


def test_step_rejects_non_finite_action():
    s = reset("fork_reach", 1)
    with pytest.raises(ValueError):
        step("fork_reach", s, np.array([np.nan, 0.0]))


def test_obstacle_contact_slides_along_face():
    # approach the bottom face from below, pushing up and slightly right
    s = EnvState(np.array([0.50, 0.38]), None, False, 0)
    positions = []
    for _ in range(6):
        s, _, _ = step("fork_reach", s, np.array([0.01, 0.05]))
        positions.append(s.agent_pos.copy())
        inside = (envs.OBSTACLE_LO[0] < s.agent_pos[0] < envs.OBSTACLE_HI[0]
                  and envs.OBSTACLE_LO[1] < s.agent_pos[1] < envs.OBSTACLE_HI[1])
        assert not inside
    # x advanced while y stayed pinned at the face
    assert positions[-1][0] > positions[0][0]
    assert all(abs(p[1] - envs.OBSTACLE_LO[1]) < 1e-12 for p in positions[:-1])


def test_no_reachable_state_strictly_inside_obstacle():
    rng = np.random.default_rng(0)
    s = reset("fork_reach", 9)
    for _ in range(500):
        a = rng.uniform(-0.05, 0.05, 2)
        s, done, _ = step("fork_reach", s, a)
        assert not (envs.OBSTACLE_LO[0] < s.agent_pos[0] < envs.OBSTACLE_HI[0]
                    and envs.OBSTACLE_LO[1] < s.agent_pos[1] < envs.OBSTACLE_HI[1])
        if done:
            s = reset("fork_reach", 9)


def test_greedy_controller_blocked_detour_succeeds():
    # greedy straight-line: pinned on the obstacle's bottom face forever
    s = reset("fork_reach", 7)
    success = False
    for _ in range(envs.T_MAX):
        a = envs.GOAL - s.agent_pos
        s, done, success = step("fork_reach", s, a)
        if done:
            break
    assert not success

    # detour through a side waypoint: reaches the goal
    s = reset("fork_reach", 7)
    success = False
    for _ in range(envs.T_MAX):
        target = envs.GOAL if s.agent_pos[1] >= 0.5 else np.array([0.25, 0.5])
        a = target - s.agent_pos
        s, done, success = step("fork_reach", s, a)
        if done:
            break
    assert success


def test_pick_place_grasp_carry_release():
    s = EnvState(np.array([0.5, 0.3]), np.array([0.52, 0.3]), False, 0)
    s, _, _ = step("pick_place", s, np.array([0.02, 0.0]))
    assert s.holding  # within grasp tolerance and motion requested
    # carry to container
    done = success = False
    for _ in range(40):
        a = envs.CONTAINER - s.agent_pos
        s, done, success = step("pick_place", s, a)
        if done:
            break
    assert success and not s.holding
    assert np.linalg.norm(s.object_pos - envs.CONTAINER) <= envs.CONTAINER_TOL


# ---------------------------------------------------------------------------
# scripted expert
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["left", "right"])
def test_expert_success_sweep_fork(mode):
    successes = 0
    for i in range(100):
        traj = rollout_expert("fork_reach", 10_000 + i, mode, RngKey(1).child(i))
        successes += traj.success
        assert len(traj.actions) <= envs.T_MAX
    assert successes >= 99


def test_expert_success_sweep_pick():
    successes = 0
    for i in range(100):
        mode = "left" if i % 2 == 0 else "right"
        traj = rollout_expert("pick_place", 20_000 + i, mode, RngKey(2).child(i))
        successes += traj.success
    assert successes >= 99


def test_expert_modes_separate_at_fork():
    for i in range(20):
        left = rollout_expert("fork_reach", 30_000 + i, "left", RngKey(3).child(i))
        right = rollout_expert("fork_reach", 30_000 + i, "right", RngKey(3).child(i))
        for traj, check in ((left, lambda x: x < 0.4), (right, lambda x: x > 0.6)):
            xs = traj.observations[:, 0]
            ys = traj.observations[:, 1]
            near_mid = np.abs(ys - 0.5) < 0.05
            assert near_mid.any()
            assert check(xs[near_mid]).all()


def test_expert_zero_jitter_deterministic():
    a = rollout_expert("fork_reach", 55, "left", RngKey(4), jitter_std=0.0)
    b = rollout_expert("fork_reach", 55, "left", RngKey(5), jitter_std=0.0)
    assert np.array_equal(a.actions, b.actions)


# ---------------------------------------------------------------------------
# gen_demos
# ---------------------------------------------------------------------------

def test_gen_demos_all_successful():
    demos = gen_demos("fork_reach", 20, 0.5, RngKey(0).child("demos"))
    assert len(demos) == 20
    assert all(t.success for t in demos)
    assert all(t.source == "expert" for t in demos)
    assert len({t.traj_id for t in demos}) == 20


def test_gen_demos_mode_mix_zero_all_left():
    demos = gen_demos("fork_reach", 10, 0.0, RngKey(1).child("demos"))
    for traj in demos:
        xs = traj.observations[:, 0]
        ys = traj.observations[:, 1]
        near_mid = np.abs(ys - 0.5) < 0.05
        assert (xs[near_mid] < 0.4).all()


def test_gen_demos_deterministic_bytes(tmp_path):
    f1 = tmp_path / "a.jsonl"
    f2 = tmp_path / "b.jsonl"
    for f in (f1, f2):
        demos = gen_demos("pick_place", 5, 0.5, RngKey(9).child("demos"))
        fileio.write_jsonl(f, [traj_to_record(t) for t in demos])
    assert f1.read_bytes() == f2.read_bytes()


# ---------------------------------------------------------------------------
# trajectories: replay and serialization
# ---------------------------------------------------------------------------

def test_successful_trajectories_replay_exactly():
    demos = gen_demos("fork_reach", 10, 0.5, RngKey(2).child("demos"))
    demos += gen_demos("pick_place", 5, 0.5, RngKey(3).child("demos"))
    for traj in demos:
        env = ("fork_reach" if traj.observations.shape[1] == envs.obs_dim("fork_reach")
               else "pick_place")
        assert replay_trajectory(env, traj) == []


def test_replay_after_jsonl_roundtrip(tmp_path):
    demos = gen_demos("fork_reach", 5, 0.5, RngKey(4).child("demos"))
    path = tmp_path / "demos.jsonl"
    fileio.write_jsonl(path, [traj_to_record(t) for t in demos])
    loaded = [traj_from_record(r) for r in fileio.read_jsonl(path)]
    for orig, back in zip(demos, loaded):
        assert np.array_equal(orig.observations, back.observations)
        assert np.array_equal(orig.actions, back.actions)
        assert replay_trajectory("fork_reach", back) == []


def test_replay_detects_flipped_success():
    traj = gen_demos("fork_reach", 1, 0.0, RngKey(5).child("demos"))[0]
    traj.success = False
    problems = replay_trajectory("fork_reach", traj)
    assert problems and "success" in problems[0]


def test_record_field_names():
    traj = gen_demos("fork_reach", 1, 0.0, RngKey(6).child("demos"))[0]
    rec = traj_to_record(traj)
    assert list(rec.keys()) == ["traj_id", "scenario_id", "source", "round",
                                "success", "observations", "actions",
                                "segment_mask", "weights"]
