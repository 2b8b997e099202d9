"""Multi-agent decision environment on top of the microsimulator.

Builds the 10-component normalized observation per autonomous vehicle,
applies hybrid acceleration + lane-change actions, computes the shared
velocity/pollution stage reward, and manages episode lifecycle. All AVs
receive the identical reward scalar each step (central collaborative
policy with parameter sharing).
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import microsim as ms
from .config import RewardConfig, ScenarioConfig
from .emissions import instantaneous_fuel
from .microsim import AV, EGO, SimState, VehicleState
from .network import (RING, RoadNetwork, build_roundabout,
                      longitudinal_distance, ring_forward)

OBS_DIM = 10
# Absent neighbor: maximally distant position, matched acceleration.
PLACEHOLDER = (1.0, 0.0)

ROLLOUT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Action:
    """Hybrid command: continuous acceleration plus a lane-change bit."""

    accel: float
    lane_change: int = 0

    def __post_init__(self):
        if self.lane_change not in (0, 1):
            raise ValueError("lane_change must be 0 or 1")


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 36000
    warmup: float = 0.0
    terminate_on_collision: bool = True

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def _position(v: VehicleState):
    return (v.segment, v.offset)


def _front_neighbor(net, index, v: VehicleState):
    """Nearest vehicle ahead along ``v``'s remaining route: (distance, vehicle).

    Front-to-front longitudinal distance, mirroring the leader walk of the
    microsimulator but keeping the vehicle for its acceleration.
    """
    route, seg = v.route, v.segment
    if seg == RING:
        rc = ms.ring_coord(net, v)
        remaining = route.lengths[1] - v.offset
        hit = ms._ring_first_after(net, index, rc, remaining, exclude=v)
        if hit:
            return hit[0], hit[1]
        first = ms._seg_first(index, route.segments[2])
        if first:
            return first[0], remaining + first[1]
        return None
    if seg[0] == "a":
        hit = ms._seg_next_ahead(index, seg, v.offset, exclude=v)
        if hit:
            return hit[0], hit[1]
        to_line = route.lengths[0] - v.offset
        entry = net.legs[route.origin_leg].entry_coordinate
        hit = ms._ring_first_after(net, index, entry, route.lengths[1])
        if hit:
            return hit[0], to_line + hit[1]
        first = ms._seg_first(index, route.segments[2])
        if first:
            return first[0], to_line + route.lengths[1] + first[1]
        return None
    hit = ms._seg_next_ahead(index, seg, v.offset, exclude=v)
    if hit:
        return hit[0], hit[1]
    return None


def _back_neighbor(net, index, v: VehicleState):
    """Nearest vehicle behind on the same physical lane chain."""
    seg = v.segment
    entry = index.get(seg)
    if entry is None:
        return None
    if seg == RING:
        offs, vs = entry
        if len(vs) < 2:
            return None
        rc = ms.ring_coord(net, v)
        i = bisect.bisect_left(offs, rc)
        # walk backwards (wrapping) to the nearest other vehicle
        for k in range(1, len(vs) + 1):
            u = vs[(i - k) % len(vs)]
            if u is not v:
                return u, ring_forward(net, ms.ring_coord(net, u), rc)
        return None
    offs, vs = entry
    i = bisect.bisect_left(offs, v.offset)
    j = i - 1
    while j >= 0:
        if vs[j] is not v:
            return vs[j], v.offset - offs[j]
        j -= 1
    if seg[0] == "e":
        # traffic still on the ring is behind a vehicle on an exit leg
        ring_entry = index.get(RING)
        if ring_entry:
            exit_coord = net.legs[seg[1]].exit_coordinate
            best = None
            for u in ring_entry[1]:
                d = ring_forward(net, ms.ring_coord(net, u), exit_coord)
                if best is None or d < best[1]:
                    best = (u, d)
            if best:
                return best[0], best[1] + v.offset
    return None


def build_observation(state: SimState, net: RoadNetwork, vehicle_id: int,
                      x_max: float, a_max: float, index=None) -> np.ndarray:
    """10-component observation: own position/acceleration plus the four
    neighbor slots (front, back, left, right), normalized.

    On the single-lane roundabout the left/right slots always carry the
    absent-neighbor placeholder. ``index`` is the per-segment position index
    (rebuilt if not supplied) so per-step callers can share one.
    """
    v = state.vehicles.get(vehicle_id)
    if v is None:
        raise KeyError(f"unknown vehicle id {vehicle_id}")
    if index is None:
        index = ms._build_index(net, state.vehicles.values())
    obs = [v.route_pos() / x_max, v.accel / a_max]
    for hit in (_front_neighbor(net, index, v), _back_neighbor(net, index, v)):
        if hit is None:
            obs.extend(PLACEHOLDER)
        else:
            u, d = hit
            obs.append(min(d / x_max, 1.0))
            obs.append((u.accel - v.accel) / a_max)
    obs.extend(PLACEHOLDER)  # left lane: absent on a single-lane network
    obs.extend(PLACEHOLDER)  # right lane: absent
    arr = np.asarray(obs, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite observation component")
    return arr


def velocity_reward(speeds, v: float) -> float:
    """max(0, d_max - d) / d_max with d the Euclidean norm of the AV fleet's
    speed deviations and d_max = v*sqrt(N) the all-stopped peak deviation."""
    speeds = np.asarray(list(speeds), dtype=np.float64)
    n = speeds.size
    if n == 0:
        return 0.0
    d = float(np.linalg.norm(speeds - v))
    d_max = v * math.sqrt(n)
    return max(0.0, d_max - d) / d_max


def pollution_reward(fuel_rates, target: float) -> float:
    """max(0, 1 - |mean fuel rate - P| / P)."""
    rates = np.asarray(list(fuel_rates), dtype=np.float64)
    if rates.size == 0:
        return 0.0
    p_bar = float(rates.mean())
    return max(0.0, 1.0 - abs(p_bar - target) / target)


def calibrate_pollution_target(net: RoadNetwork, config: ScenarioConfig) -> float:
    """Mean fuel rate of a single vehicle traversing the longest route at
    constant desired speed (zero acceleration throughout)."""
    v = config.reward.desired_speed
    longest = max(
        (l0.approach_length
         + ((l1.exit_coordinate - l0.entry_coordinate) % net.ring_length
            or net.ring_length)
         + l1.exit_length)
        for l0 in net.legs for l1 in net.legs if l0.id != l1.id)
    steps = max(1, int(math.ceil(longest / (v * config.dt))))
    rate = instantaneous_fuel(v, 0.0, config.emissions)
    return sum(rate for _ in range(steps)) / steps


def stage_reward(state: SimState, reward: RewardConfig,
                 emissions, target: float) -> float:
    """Shared scalar reward over the current AV fleet."""
    avs = [v for v in state.vehicles.values() if v.kind == AV]
    if not avs:
        return 0.0
    r_v = velocity_reward((v.speed for v in avs), reward.desired_speed)
    r_p = pollution_reward(
        (instantaneous_fuel(v.speed, v.accel, emissions) for v in avs), target)
    return reward.velocity_weight * r_v + reward.pollution_weight * r_p


class RoundaboutEnv:
    """Episode-managing wrapper: reset -> (obs per AV); step -> shared reward.

    The environment owns one SimState; the network and configs are immutable
    and shareable across instances.
    """

    def __init__(self, config: ScenarioConfig,
                 episode: EpisodeConfig | None = None):
        self.config = config
        self.episode = episode or EpisodeConfig()
        self.net = build_roundabout(config)
        self.x_max = max(
            (l0.approach_length
             + ((l1.exit_coordinate - l0.entry_coordinate) % self.net.ring_length
                or self.net.ring_length)
             + l1.exit_length)
            for l0 in self.net.legs for l1 in self.net.legs if l0.id != l1.id)
        self.a_max = config.driver.decel_max
        self.pollution_target = (config.reward.pollution_target
                                 if config.reward.pollution_target is not None
                                 else calibrate_pollution_target(self.net, config))
        self.state: SimState | None = None
        self._steps = 0

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> dict[int, np.ndarray]:
        self.state = ms.make_state(self.config.seed if seed is None else seed)
        self._steps = 0
        warm_steps = int(self.episode.warmup / self.config.dt)
        for _ in range(warm_steps):
            ms.step(self.state, self.net, self.baseline_actions(),
                    self.config.driver, self.config, halt_on_collision=True)
        return self.observations()

    def av_ids(self) -> list[int]:
        return [v.id for v in self.state.vehicles.values() if v.kind == AV]

    def observations(self) -> dict[int, np.ndarray]:
        index = ms._build_index(self.net, self.state.vehicles.values())
        return {i: build_observation(self.state, self.net, i,
                                     self.x_max, self.a_max, index=index)
                for i in self.av_ids()}

    def baseline_actions(self) -> dict[int, float]:
        """Human-model accelerations for every AV (warmup / baseline control)."""
        index = ms._build_index(self.net, self.state.vehicles.values())
        ring_v = self.config.ring_speed_limit
        return {v.id: ms._hv_acceleration(self.net, index, v,
                                          self.config.driver, None, ring_v)
                for v in self.state.vehicles.values() if v.kind == AV}

    def step(self, actions: dict[int, Action]):
        """Advance one tick. Returns (observations, reward, done, info)."""
        living = set(self.av_ids())
        if set(actions) != living:
            raise ValueError(
                f"actions must cover exactly the living AV ids; "
                f"got {sorted(actions)} expected {sorted(living)}")
        accel = {i: a.accel for i, a in actions.items()}
        # lane_change has no adjacent lane to act on here: explicit no-op.
        info = ms.step(self.state, self.net, accel, self.config.driver,
                       self.config,
                       halt_on_collision=not self.episode.terminate_on_collision)
        self._steps += 1
        reward = stage_reward(self.state, self.config.reward,
                              self.config.emissions, self.pollution_target)
        collided = bool(info.collisions) and self.episode.terminate_on_collision
        done = collided or self._steps >= self.episode.horizon
        return self.observations(), reward, done, {
            "collision": collided,
            "collisions": info.collisions,
            "completed": info.completed,
            "steps": self._steps,
        }


# -- auxiliary two-lane straight network ------------------------------------
#
# The roundabout is single-lane, so the lane-change action head can never
# fire there. This minimal two-lane straight road exercises the discrete
# head and the left/right observation slots.


@dataclass
class _StraightVehicle:
    id: int
    kind: str
    lane: int
    x: float
    speed: float
    accel: float = 0.0
    length: float = 5.0


class StraightRoadEnv:
    """Two-lane straight road: AVs may change lanes; simple IDM traffic."""

    def __init__(self, length: float = 500.0, config: ScenarioConfig | None = None,
                 horizon: int = 600):
        self.length = length
        self.config = config or ScenarioConfig()
        self.horizon = horizon
        self.a_max = self.config.driver.decel_max
        self.vehicles: dict[int, _StraightVehicle] = {}
        self._next_id = 0
        self._steps = 0

    def add_vehicle(self, kind: str, lane: int, x: float,
                    speed: float) -> int:
        vid = self._next_id
        self._next_id += 1
        self.vehicles[vid] = _StraightVehicle(vid, kind, lane, x, speed)
        return vid

    def _nearest(self, me: _StraightVehicle, lane: int, ahead: bool):
        best = None
        for u in self.vehicles.values():
            if u is me or u.lane != lane:
                continue
            d = u.x - me.x if ahead else me.x - u.x
            if d > 0 and (best is None or d < best[0]):
                best = (d, u)
        return best

    def observation(self, vid: int) -> np.ndarray:
        me = self.vehicles[vid]
        obs = [me.x / self.length, me.accel / self.a_max]
        for lane, ahead in ((me.lane, True), (me.lane, False),
                            (1 - me.lane, True), (1 - me.lane, False)):
            hit = self._nearest(me, lane, ahead)
            if hit is None:
                obs.extend(PLACEHOLDER)
            else:
                d, u = hit
                obs.append(min(d / self.length, 1.0))
                obs.append((u.accel - me.accel) / self.a_max)
        return np.asarray(obs, dtype=np.float64)

    def _lane_change_safe(self, me: _StraightVehicle) -> bool:
        target = 1 - me.lane
        for u in self.vehicles.values():
            if u is not me and u.lane == target and abs(u.x - me.x) < \
                    u.length + self.config.driver.min_gap:
                return False
        return True

    def step(self, actions: dict[int, Action]):
        p = self.config.driver
        dt = self.config.dt
        for v in self.vehicles.values():
            if v.kind == AV:
                a = actions.get(v.id)
                if a is None:
                    raise ValueError(f"missing action for AV {v.id}")
                if a.lane_change and self._lane_change_safe(v):
                    v.lane = 1 - v.lane
                v.accel = min(p.accel_max, max(-p.decel_max, a.accel))
            else:
                hit = self._nearest(v, v.lane, ahead=True)
                leader = None if hit is None else (hit[0] - hit[1].length,
                                                  hit[1].speed)
                v.accel = ms.idm_acceleration(v.speed, leader, p)
        done = False
        for v in self.vehicles.values():
            v.speed = max(0.0, v.speed + v.accel * dt)
            v.x += v.speed * dt
        for v in self.vehicles.values():
            hit = self._nearest(v, v.lane, ahead=True)
            if hit is not None and hit[0] - hit[1].length <= 0.0:
                done = True
        self.vehicles = {i: v for i, v in self.vehicles.items()
                         if v.x < self.length}
        self._steps += 1
        avs = [v for v in self.vehicles.values() if v.kind == AV]
        reward = velocity_reward((v.speed for v in avs),
                                 self.config.reward.desired_speed)
        done = done or self._steps >= self.horizon
        obs = {v.id: self.observation(v.id) for v in avs}
        return obs, reward, done, {"steps": self._steps}


# -- rollout persistence -----------------------------------------------------


def save_rollout(path, obs, actions_accel, actions_lane, rewards, terminals,
                 log_probs=None, values=None) -> None:
    """Persist one rollout batch in the documented columnar format.

    Arrays are aligned along the first (time*agent) axis; a versioned header
    field guards against format drift.
    """
    obs = np.asarray(obs, dtype=np.float64)
    n = obs.shape[0]
    cols = {
        "format_version": np.array([ROLLOUT_FORMAT_VERSION], dtype=np.int64),
        "obs": obs,
        "actions_accel": np.asarray(actions_accel, dtype=np.float64),
        "actions_lane": np.asarray(actions_lane, dtype=np.int64),
        "rewards": np.asarray(rewards, dtype=np.float64),
        "terminals": np.asarray(terminals, dtype=np.bool_),
    }
    if log_probs is not None:
        cols["log_probs"] = np.asarray(log_probs, dtype=np.float64)
    if values is not None:
        cols["values"] = np.asarray(values, dtype=np.float64)
    for name, arr in cols.items():
        if name != "format_version" and arr.shape[0] != n:
            raise ValueError(f"column {name} misaligned: {arr.shape[0]} != {n}")
    np.savez_compressed(path, **cols)


def load_rollout(path) -> dict:
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != ROLLOUT_FORMAT_VERSION:
            raise ValueError(f"unsupported rollout format version {version}")
        return {k: data[k] for k in data.files if k != "format_version"}
