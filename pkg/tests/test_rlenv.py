"""Decision environment: observations, rewards, episode lifecycle, rollouts."""
from dataclasses import replace

import numpy as np
import pytest

from roundsim import microsim as ms
from roundsim.config import RewardConfig, ScenarioConfig
from roundsim.emissions import instantaneous_fuel
from roundsim.microsim import AV, HV, VehicleState, make_state
from roundsim.network import build_roundabout, route_between
from roundsim.rlenv import (OBS_DIM, PLACEHOLDER, Action, EpisodeConfig,
                            RoundaboutEnv, StraightRoadEnv,
                            build_observation, calibrate_pollution_target,
                            load_rollout, pollution_reward, save_rollout,
                            stage_reward, velocity_reward)

CFG = ScenarioConfig()


def _lone_vehicle_state(net, kind=AV, offset=50.0, accel=0.0):
    state = make_state(0)
    v = VehicleState(id=0, kind=kind, route=route_between(net, 0, 2),
                     offset=offset, speed=10.0, accel=accel)
    state.vehicles[0] = v
    state.next_id = 1
    return state, v


# -- observations -------------------------------------------------------------

def test_single_vehicle_observation_uses_placeholders():
    net = build_roundabout(CFG)
    env = RoundaboutEnv(CFG)
    state, v = _lone_vehicle_state(net)
    # place the vehicle at a quarter of the longest route
    v.offset = 0.25 * env.x_max
    obs = build_observation(state, net, 0, env.x_max, env.a_max)
    assert obs.shape == (OBS_DIM,)
    np.testing.assert_allclose(
        obs, [0.25, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])


def test_leader_slots_arithmetic():
    # leader 10 m ahead with relative acceleration 1.5 on a 200 m scale
    net = build_roundabout(CFG)
    state, v = _lone_vehicle_state(net, offset=20.0, accel=0.0)
    leader = VehicleState(id=1, kind=HV, route=v.route, offset=30.0,
                          speed=10.0, accel=1.5)
    state.vehicles[1] = leader
    obs = build_observation(state, net, 0, x_max=200.0, a_max=3.0)
    assert obs[2] == pytest.approx(10.0 / 200.0)  # 0.05
    assert obs[3] == pytest.approx(1.5 / 3.0)     # 0.5
    # and the follower sees the mirrored back slot
    obs_b = build_observation(state, net, 1, x_max=200.0, a_max=3.0)
    assert obs_b[4] == pytest.approx(0.05)
    assert obs_b[5] == pytest.approx(-0.5)


def test_left_right_slots_always_placeholder_on_single_lane():
    env = RoundaboutEnv(replace(CFG, penetration=1.0, seed=2))
    env.reset()
    for obs in env.observations().values():
        assert tuple(obs[6:8]) == PLACEHOLDER
        assert tuple(obs[8:10]) == PLACEHOLDER


def test_observations_finite_across_a_run():
    env = RoundaboutEnv(replace(CFG, penetration=0.5, seed=3))
    env.reset()
    rng = np.random.default_rng(0)
    for _ in range(300):
        actions = {i: Action(float(rng.uniform(-4.0, 1.7)))
                   for i in env.av_ids()}
        obs, _, done, _ = env.step(actions)
        for o in obs.values():
            assert o.shape == (OBS_DIM,)
            assert np.all(np.isfinite(o))
        if done:
            break


def test_unknown_vehicle_rejected():
    net = build_roundabout(CFG)
    state, _ = _lone_vehicle_state(net)
    with pytest.raises(KeyError):
        build_observation(state, net, 99, 100.0, 4.0)


# -- rewards ------------------------------------------------------------------

def test_velocity_reward_examples():
    v = 13.0
    assert velocity_reward([v, v, v], v) == pytest.approx(1.0)
    assert velocity_reward([0.0, 0.0], v) == pytest.approx(0.0)
    assert velocity_reward([6.5], 13.0) == pytest.approx(0.5)


def test_velocity_reward_peak_deviation_is_all_stopped():
    # deviations beyond "all stopped" clamp at zero rather than going negative
    assert velocity_reward([30.0], 13.0) == 0.0


def test_pollution_reward_examples():
    assert pollution_reward([1.0], 1.0) == pytest.approx(1.0)
    assert pollution_reward([2.0], 1.0) == pytest.approx(0.0)
    assert pollution_reward([0.0], 1.0) == pytest.approx(0.0)
    assert pollution_reward([1.25], 1.0) == pytest.approx(0.75)


def test_pollution_target_reduces_to_cruise_fuel_rate():
    cfg = replace(CFG, reward=RewardConfig(desired_speed=10.0))
    net = build_roundabout(cfg)
    assert calibrate_pollution_target(net, cfg) == pytest.approx(
        instantaneous_fuel(10.0, 0.0, cfg.emissions))


def test_pollution_target_additive_in_idle_rate():
    net = build_roundabout(CFG)
    base = calibrate_pollution_target(net, CFG)
    bumped_em = replace(CFG.emissions,
                        idle_fuel_rate=2.0 * CFG.emissions.idle_fuel_rate)
    bumped = calibrate_pollution_target(net, replace(CFG, emissions=bumped_em))
    assert bumped - base == pytest.approx(CFG.emissions.idle_fuel_rate)


def test_stage_reward_shared_and_bounded():
    env = RoundaboutEnv(replace(CFG, penetration=0.5, seed=4))
    env.reset()
    r = stage_reward(env.state, CFG.reward, CFG.emissions,
                     env.pollution_target)
    assert 0.0 <= r <= 1.0


def test_reward_bounded_over_random_actions():
    env = RoundaboutEnv(replace(CFG, penetration=0.7, seed=5),
                        EpisodeConfig(horizon=10 ** 6,
                                      terminate_on_collision=False))
    env.reset()
    rng = np.random.default_rng(1)
    n = 0
    while n < 10 ** 4:
        actions = {i: Action(float(rng.uniform(-4.2939, 1.7634)),
                             int(rng.integers(0, 2)))
                   for i in env.av_ids()}
        _, r, _, _ = env.step(actions)
        assert 0.0 <= r <= 1.0
        n += max(1, len(actions))


def test_reward_is_one_iff_fleet_on_both_targets():
    state = make_state(0)
    net = build_roundabout(CFG)
    v = CFG.reward.desired_speed
    target = 0.5
    av = VehicleState(id=0, kind=AV, route=route_between(net, 0, 2),
                      offset=10.0, speed=v, accel=0.0)
    state.vehicles[0] = av
    r_speed_only = stage_reward(state, CFG.reward, CFG.emissions,
                                instantaneous_fuel(v, 0.0, CFG.emissions))
    assert r_speed_only == pytest.approx(1.0)


# -- episode lifecycle --------------------------------------------------------

def test_horizon_bookkeeping():
    env = RoundaboutEnv(replace(CFG, penetration=0.0, total_demand=1e-9),
                        EpisodeConfig(horizon=10))
    env.reset()
    for k in range(10):
        _, _, done, info = env.step({})
        assert done == (k == 9)
        assert info["steps"] == k + 1


def test_action_key_mismatch_rejected():
    env = RoundaboutEnv(replace(CFG, penetration=1.0, seed=6),
                        EpisodeConfig(horizon=10 ** 4, warmup=30.0))
    env.reset()
    assert env.av_ids(), "warmup should have populated the network"
    with pytest.raises(ValueError, match="exactly the living AV ids"):
        env.step({})
    ids = env.av_ids()
    bad = {i: Action(0.0) for i in ids}
    bad[10 ** 6] = Action(0.0)
    with pytest.raises(ValueError):
        env.step(bad)


def test_forced_collision_terminates_episode():
    cfg = replace(CFG, total_demand=1e-9, penetration=0.0)
    env = RoundaboutEnv(cfg, EpisodeConfig(horizon=10 ** 4,
                                           terminate_on_collision=True))
    env.reset()
    route = route_between(env.net, 0, 2)
    parked = VehicleState(id=0, kind=AV, route=route, offset=60.0, speed=0.0,
                          entry_accepted=True)
    # placed so close and fast that no feasible braking avoids contact:
    # the safety governor bounds commands, not the already-doomed kinematics
    rammer = VehicleState(id=1, kind=AV, route=route, offset=54.0, speed=13.0,
                          entry_accepted=True)
    env.state.vehicles = {0: parked, 1: rammer}
    env.state.next_id = 2
    done = False
    for _ in range(200):
        actions = {i: Action(1.7) for i in env.av_ids()}
        _, _, done, info = env.step(actions)
        if done:
            assert info["collision"]
            assert info["collisions"]
            break
    assert done, "unavoidable rear-end collision must terminate the episode"


def test_lane_change_is_noop_on_roundabout():
    cfg = replace(CFG, penetration=1.0, seed=7)
    env_a = RoundaboutEnv(cfg)
    env_b = RoundaboutEnv(cfg)
    obs_a = env_a.reset()
    env_b.reset()
    for _ in range(50):
        acts_a = {i: Action(0.5, lane_change=1) for i in env_a.av_ids()}
        acts_b = {i: Action(0.5, lane_change=0) for i in env_b.av_ids()}
        obs_a, ra, _, _ = env_a.step(acts_a)
        obs_b, rb, _, _ = env_b.step(acts_b)
        assert ra == rb
    for i in obs_a:
        np.testing.assert_array_equal(obs_a[i], obs_b[i])


def test_invalid_action_rejected():
    with pytest.raises(ValueError):
        Action(0.0, lane_change=2)


def test_hold_at_speed_beats_standing_still():
    """Sanity floor: accelerating to the desired speed then holding earns a
    strictly higher return than remaining stopped (single AV, empty road)."""
    cfg = replace(CFG, total_demand=1e-9, penetration=0.0)

    def episode_return(policy):
        env = RoundaboutEnv(cfg, EpisodeConfig(horizon=400))
        env.reset()
        route = route_between(env.net, 0, 2)
        av = VehicleState(id=0, kind=AV, route=route, offset=0.0, speed=0.0)
        env.state.vehicles[0] = av
        env.state.next_id = 1
        total = 0.0
        for _ in range(400):
            if not env.av_ids():
                break
            a = policy(av)
            _, r, done, _ = env.step({0: Action(a)})
            total += r
            if done:
                break
        return total

    go = episode_return(lambda v: 1.7634 if v.speed
                        < CFG.reward.desired_speed else 0.0)
    stop = episode_return(lambda v: -4.2939)
    assert go > stop


# -- two-lane straight road (lane-change head) --------------------------------

def test_straight_road_lane_change():
    env = StraightRoadEnv()
    av = env.add_vehicle(AV, lane=0, x=50.0, speed=10.0)
    blocker = env.add_vehicle(HV, lane=0, x=80.0, speed=2.0)
    obs = env.observation(av)
    assert obs.shape == (OBS_DIM,)
    assert obs[2] < 1.0  # leader visible ahead
    assert tuple(obs[6:8]) == PLACEHOLDER  # adjacent lane empty
    _, _, _, _ = env.step({av: Action(0.0, lane_change=1)})
    assert env.vehicles[av].lane == 1


def test_straight_road_lane_change_blocked_when_unsafe():
    env = StraightRoadEnv()
    av = env.add_vehicle(AV, lane=0, x=50.0, speed=10.0)
    env.add_vehicle(HV, lane=1, x=51.0, speed=10.0)  # alongside
    env.step({av: Action(0.0, lane_change=1)})
    assert env.vehicles[av].lane == 0


def test_straight_road_left_slot_sees_adjacent_lane():
    env = StraightRoadEnv(length=500.0)
    av = env.add_vehicle(AV, lane=0, x=100.0, speed=10.0)
    env.add_vehicle(HV, lane=1, x=120.0, speed=10.0)
    obs = env.observation(av)
    assert obs[6] == pytest.approx(20.0 / 500.0)


# -- rollout persistence ------------------------------------------------------

def test_rollout_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    n = 64
    path = tmp_path / "rollout.npz"
    data = {
        "obs": rng.normal(size=(n, OBS_DIM)),
        "actions_accel": rng.normal(size=n),
        "actions_lane": rng.integers(0, 2, size=n),
        "rewards": rng.random(size=n),
        "terminals": rng.random(size=n) < 0.1,
        "log_probs": rng.normal(size=n),
        "values": rng.normal(size=n),
    }
    save_rollout(path, **data)
    loaded = load_rollout(path)
    for k, arr in data.items():
        key = k
        np.testing.assert_array_equal(loaded[key], np.asarray(arr))


def test_rollout_misaligned_rejected(tmp_path):
    with pytest.raises(ValueError, match="misaligned"):
        save_rollout(tmp_path / "bad.npz",
                     obs=np.zeros((4, OBS_DIM)), actions_accel=np.zeros(3),
                     actions_lane=np.zeros(4), rewards=np.zeros(4),
                     terminals=np.zeros(4, dtype=bool))


def test_rollout_version_guard(tmp_path):
    path = tmp_path / "r.npz"
    np.savez_compressed(path, format_version=np.array([99]),
                        obs=np.zeros((1, OBS_DIM)))
    with pytest.raises(ValueError, match="version"):
        load_rollout(path)
