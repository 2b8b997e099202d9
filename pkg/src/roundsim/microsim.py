"""Deterministic fixed-timestep microscopic roundabout simulation.

Human-driven vehicles follow the Intelligent Driver Model with calibrated
parameters and a time-gap acceptance rule at ring entries; autonomous
vehicles take externally supplied acceleration commands (with a safety
override at unaccepted entries). Identical (config, seed) pairs replay
bit-identically.
"""
from __future__ import annotations

import bisect
import csv
import gzip
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import DriverParams, ScenarioConfig, VEHICLE_LENGTH
from .network import (RING, RoadNetwork, Route, approach, ring_forward,
                      route_between)

HV, AV, EGO = "HV", "AV", "EGO"

# An entering vehicle evaluates the gap rule once it is this close to the line.
ACCEPT_EVAL_DISTANCE = 30.0
_STOPPED_EPS = 0.1
_MERGE_MOVING_SPEED = 0.3


@dataclass(eq=False)
class VehicleState:
    id: int
    kind: str
    route: Route
    seg_idx: int = 0
    offset: float = 0.0
    speed: float = 0.0
    accel: float = 0.0      # realized acceleration (post speed caps)
    cmd_accel: float = 0.0  # commanded acceleration held between decisions
    length: float = VEHICLE_LENGTH
    wait_time: float = 0.0
    entry_accepted: bool = False
    t_spawn: float = 0.0
    t_in: float | None = None
    t_out: float | None = None
    fuel_total: float = 0.0
    co2_total: float = 0.0
    next_decision: float = 0.0
    halted: bool = False
    contact_leader: int | None = None  # leader id of an ongoing logged contact

    @property
    def segment(self):
        return self.route.segments[self.seg_idx]

    def route_pos(self) -> float:
        return sum(self.route.lengths[:self.seg_idx]) + self.offset


@dataclass
class CollisionEvent:
    t: float
    follower_id: int
    leader_id: int
    segment: tuple


@dataclass
class SimState:
    clock: float = 0.0
    step_count: int = 0
    vehicles: dict[int, VehicleState] = field(default_factory=dict)
    completed: list[VehicleState] = field(default_factory=list)
    collision_log: list[CollisionEvent] = field(default_factory=list)
    pending: list[list[tuple[str, int]]] = field(default_factory=lambda: [[] for _ in range(4)])
    spawned_count: int = 0
    next_id: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def make_state(seed: int) -> SimState:
    return SimState(rng=np.random.default_rng(seed))


def idm_acceleration(speed: float, leader, p: DriverParams,
                     v0: float | None = None) -> float:
    """IDM acceleration given optional ``(gap, leader_speed)``.

    ``v0`` overrides the desired speed (e.g. curve anticipation).
    Clamped to the vehicle's feasible range [-decel_max, accel_max].
    """
    if v0 is None:
        v0 = p.desired_speed
    free = 1.0 - (speed / v0) ** p.idm_exponent
    if leader is None:
        a = p.accel_max * free
    else:
        gap, leader_speed = leader
        gap = max(gap, 1e-2)
        dv = speed - leader_speed
        s_star = (p.min_gap + speed * p.headway_tau
                  + speed * dv / (2.0 * math.sqrt(p.accel_max * p.decel_max)))
        a = p.accel_max * (free - (s_star / gap) ** 2)
    return min(p.accel_max, max(-p.decel_max, a))


def ring_coord(net: RoadNetwork, v: VehicleState) -> float:
    entry = net.legs[v.route.origin_leg].entry_coordinate
    return (entry + v.offset) % net.ring_length


def _build_index(net: RoadNetwork, vehicles) -> dict:
    """Per physical segment: (sorted positions, vehicles). Ring uses ring coords."""
    index: dict[tuple, tuple[list[float], list[VehicleState]]] = {}
    for v in vehicles:
        seg = v.segment
        pos = ring_coord(net, v) if seg == RING else v.offset
        index.setdefault(seg, ([], []))
        offs, vs = index[seg]
        i = bisect.bisect(offs, pos)
        offs.insert(i, pos)
        vs.insert(i, v)
    return index


def _ring_first_after(net, index, start: float, max_dist: float, exclude=None):
    """Nearest ring vehicle strictly ahead of ``start`` within ``max_dist``."""
    entry = index.get(RING)
    if not entry:
        return None
    offs, vs = entry
    n = len(vs)
    i = bisect.bisect_right(offs, start)
    best = None
    for k in range(n):
        v = vs[(i + k) % n]
        if v is exclude:
            continue
        delta = ring_forward(net, start, ring_coord(net, v))
        if delta > max_dist:
            break
        return v, delta
    return None


def _seg_next_ahead(index, seg, pos: float, exclude=None):
    entry = index.get(seg)
    if not entry:
        return None
    offs, vs = entry
    i = bisect.bisect_right(offs, pos)
    while i < len(vs):
        if vs[i] is not exclude:
            return vs[i], offs[i] - pos
        i += 1
    return None


def _seg_first(index, seg):
    entry = index.get(seg)
    if not entry:
        return None
    return entry[1][0], entry[0][0]


def _merging_ahead(net, merge_heads, start: float, max_dist: float,
                   exclude_leg: int | None):
    """Nearest moving accepted enterer, projected to its conflict point,
    strictly within ``max_dist`` forward of ring coordinate ``start``."""
    best = None
    for leg_id, head in merge_heads.items():
        if leg_id == exclude_leg:
            continue
        delta = ring_forward(net, start, net.legs[leg_id].entry_coordinate)
        if 0.0 < delta < max_dist - 1e-9 and (best is None or delta < best[1]):
            best = (head, delta)
    return best


def find_leader(net: RoadNetwork, index, v: VehicleState, merge_heads=None):
    """Nearest vehicle ahead along ``v``'s remaining route.

    Returns ``(gap, leader_speed)`` with bumper-to-bumper gap, or ``None``.
    ``merge_heads`` maps leg id -> accepted, currently moving queue head;
    traffic approaching that leg's conflict point follows it (at its actual
    speed) as it would a car pulling out. Heads standing still never block
    the ring, which keeps circulating traffic's right-of-way live.
    """
    route = v.route
    seg = v.segment
    heads = merge_heads or {}
    if seg == RING:
        rc = ring_coord(net, v)
        remaining = route.lengths[1] - v.offset
        hit = _ring_first_after(net, index, rc, remaining, exclude=v)
        merge = _merging_ahead(net, heads, rc,
                               hit[1] if hit else remaining, None)
        if merge:
            hit = merge
        if hit:
            leader, delta = hit
            return delta - leader.length, leader.speed
        first = _seg_first(index, route.segments[2])
        if first:
            leader, off = first
            return remaining + off - leader.length, leader.speed
        return None
    kind = seg[0]
    if kind == "a":
        hit = _seg_next_ahead(index, seg, v.offset, exclude=v)
        if hit:
            leader, dist = hit
            return dist - leader.length, leader.speed
        to_line = route.lengths[0] - v.offset
        entry_coord = net.legs[route.origin_leg].entry_coordinate
        hit = _ring_first_after(net, index, entry_coord, route.lengths[1])
        merge = _merging_ahead(net, heads, entry_coord,
                               hit[1] if hit else route.lengths[1],
                               route.origin_leg)
        if merge:
            hit = merge
        if hit:
            leader, delta = hit
            return to_line + delta - leader.length, leader.speed
        first = _seg_first(index, route.segments[2])
        if first:
            leader, off = first
            return to_line + route.lengths[1] + off - leader.length, leader.speed
        return None
    hit = _seg_next_ahead(index, seg, v.offset, exclude=v)
    if hit:
        leader, dist = hit
        return dist - leader.length, leader.speed
    return None


def gap_accepted(net: RoadNetwork, index, v: VehicleState, p: DriverParams,
                 dt: float, horizon: float, ring_v: float,
                 accepted_heads=None) -> bool:
    """Gap acceptance at the ring entry.

    Human drivers demand a behavioral time gap (eroded by impatience) on
    top of the physical braking-distance guard; automated vehicles need
    only the physical guard — their entries are exact where human judgment
    carries a safety margin. Ring traffic keeps right-of-way and never
    yields. Accepting resets the accumulated wait; rejecting increments it
    by ``dt``.
    """
    conflict = net.legs[v.route.origin_leg].entry_coordinate
    nearest = None  # (distance to conflict, vehicle)
    entry = index.get(RING)
    if entry:
        for u in entry[1]:
            d = ring_forward(net, ring_coord(net, u), conflict)
            if d > u.route.lengths[1] - u.offset - 1e-9:
                continue  # diverges at or before this conflict: no crossing
            if d <= horizon and (nearest is None or d < nearest[0]):
                nearest = (d, u)
    # Vehicles already committed to enter from upstream legs count as
    # circulating traffic placed at their own conflict point.
    for leg_id, head in (accepted_heads or {}).items():
        if leg_id == v.route.origin_leg or head is v:
            continue
        upstream = ring_forward(net, net.legs[leg_id].entry_coordinate, conflict)
        if upstream <= 0.0 or upstream > head.route.lengths[1] + 1e-9:
            continue  # leaves the ring strictly before this conflict
        d = upstream + (head.route.lengths[0] - head.offset)
        if d <= horizon and (nearest is None or d < nearest[0]):
            nearest = (d, head)
    if nearest is None:
        v.wait_time = 0.0
        return True
    d, u = nearest
    # Acceptance commits the vehicle to enter, so judge the gap as it will
    # be when the vehicle actually reaches the conflict point.
    to_line = v.route.lengths[0] - v.offset
    t_arrive, v_arrive = _arrival_kinematics(to_line, v.speed, p, ring_v)
    v_arrive = min(v_arrive, ring_v)
    # Constant-speed prediction for the threatening vehicle. The enterer's
    # own response lags by up to one reaction period, so its arrival is
    # padded by that much; the caller re-validates every tick until the
    # entering vehicle is committed, correcting any remaining error.
    u_speed = min(u.speed, ring_v)
    covered = u_speed * t_arrive
    d_eff = d - covered
    time_gap = d_eff / max(u_speed, _STOPPED_EPS)
    erosion = 1.0 - p.impatience * min(1.0, v.wait_time / p.impatience_saturation)
    # Braking-distance guard: the circulating vehicle, after one reaction
    # period, must be able to slow to the merging vehicle's speed while a
    # full standstill gap remains.
    braking = max(0.0, u_speed ** 2 - v_arrive ** 2) / (2.0 * p.decel_max)
    safe_distance = (u.length + p.min_gap + u_speed * p.reaction_period
                     + braking)
    behavioral_ok = (time_gap >= p.gap_accept_time * erosion
                     if v.kind == HV else True)
    if behavioral_ok and d_eff >= safe_distance:
        v.wait_time = 0.0
        return True
    v.wait_time += dt
    return False


def _advance(speed: float, accel: float, t: float,
             v_cap: float) -> tuple[float, float]:
    """Distance covered and final speed after ``t`` seconds at constant
    acceleration, speed capped at ``v_cap``."""
    if accel <= 0.0 or speed >= v_cap:
        return speed * t, speed
    t_cap = (v_cap - speed) / accel
    if t <= t_cap:
        return speed * t + 0.5 * accel * t * t, speed + accel * t
    d_cap = speed * t_cap + 0.5 * accel * t_cap * t_cap
    return d_cap + v_cap * (t - t_cap), v_cap


def _arrival_kinematics(distance: float, speed: float, p: DriverParams,
                        v_cap: float | None = None) -> tuple[float, float]:
    """Time to cover ``distance`` at full acceleration, and the speed there."""
    if distance <= 0.0:
        return 0.0, speed
    if v_cap is None:
        v_cap = p.desired_speed
    a = p.accel_max
    if speed >= v_cap:
        return distance / speed, speed
    d_accel = (v_cap ** 2 - speed ** 2) / (2.0 * a)
    if distance <= d_accel:
        v_arr = math.sqrt(speed ** 2 + 2.0 * a * distance)
        return (v_arr - speed) / a, v_arr
    t_accel = (v_cap - speed) / a
    return t_accel + (distance - d_accel) / v_cap, v_cap


def spawn_arrivals(state: SimState, net: RoadNetwork, config: ScenarioConfig,
                   dt: float) -> list[VehicleState]:
    """Poisson arrivals per leg; blocked spawns stay queued until the
    approach start clears."""
    rng = state.rng
    per_hour = config.total_demand
    spawned = []
    for leg in net.legs:
        rate = per_hour * leg.demand_weight / 3600.0
        n_new = int(rng.poisson(rate * dt))
        for _ in range(n_new):
            kind = AV if rng.random() < config.penetration else HV
            others = [j for j in range(4) if j != leg.id]
            dest = others[int(rng.integers(0, 3))]
            state.pending[leg.id].append((kind, dest))
        while state.pending[leg.id]:
            speed = _safe_spawn_speed(state, net, leg.id, config)
            if speed is None:
                break
            kind, dest = state.pending[leg.id].pop(0)
            v = VehicleState(
                id=state.next_id,
                kind=kind,
                route=route_between(net, leg.id, dest),
                speed=speed,
                t_spawn=state.clock,
                next_decision=state.clock,
            )
            state.next_id += 1
            state.vehicles[v.id] = v
            state.spawned_count += 1
            spawned.append(v)
    return spawned


def _safe_spawn_speed(state: SimState, net: RoadNetwork, leg_id: int,
                      config: ScenarioConfig) -> float | None:
    """Insertion speed at the approach start, or ``None`` if blocked.

    The speed is capped so the new vehicle could still stop behind the
    current queue tail even if the tail brakes to a standstill, allowing
    one reaction period before braking starts.
    """
    p = config.driver
    seg = approach(leg_id)
    tail = None
    for v in state.vehicles.values():
        if v.segment == seg and (tail is None or v.offset < tail.offset):
            tail = v
    v0 = min(p.desired_speed, config.speed_limit)
    if tail is None:
        return v0
    if tail.offset < tail.length + 1.0:
        return None  # the start of the approach is physically occupied
    b, r = p.decel_max, p.reaction_period
    slack = tail.offset - tail.length - p.min_gap + tail.speed ** 2 / (2.0 * b)
    if slack <= 0.0:
        return None
    # Largest v with v*r + v^2/(2b) <= slack.
    v_safe = b * (math.sqrt(r * r + 2.0 * slack / b) - r)
    if v_safe < 1.0:
        return None  # creeping insertions just seed stop-and-go at the boundary
    return min(v0, v_safe)


@dataclass
class StepInfo:
    collisions: list[CollisionEvent] = field(default_factory=list)
    spawned: list[VehicleState] = field(default_factory=list)
    completed: list[VehicleState] = field(default_factory=list)


def step(state: SimState, net: RoadNetwork, actions: dict[int, float],
         p: DriverParams, config: ScenarioConfig,
         halt_on_collision: bool = True) -> StepInfo:
    """Advance the simulation by one timestep.

    ``actions`` maps AV/EGO ids to acceleration commands for this tick.
    With ``halt_on_collision`` (evaluation mode) a colliding follower is
    halted and the event logged; otherwise the caller terminates the episode.
    """
    dt = config.dt
    ring_v = config.ring_speed_limit
    info = StepInfo()
    info.spawned = spawn_arrivals(state, net, config, dt)
    index = _build_index(net, state.vehicles.values())

    # Gap acceptance for queue heads, then acceleration decisions. Heads
    # accepted earlier (including earlier legs this very tick) are visible
    # to later evaluations, so two legs never accept into the same gap.
    accepted_heads: dict[int, VehicleState] = {
        v.route.origin_leg: v for v in state.vehicles.values()
        if v.seg_idx == 0 and v.entry_accepted}
    # Acceptance can go stale while a queue head creeps toward the line, so
    # heads that could still stop short of it re-check the gap every tick.
    for leg_id, h in list(accepted_heads.items()):
        to_line = h.route.lengths[0] - h.offset
        commit = (h.speed * p.reaction_period
                  + h.speed ** 2 / (2.0 * p.decel_max))
        if to_line <= commit:
            continue  # cannot stop short of the line any more
        if not gap_accepted(net, index, h, p, dt, config.gap_horizon, ring_v,
                            accepted_heads):
            h.entry_accepted = False
            del accepted_heads[leg_id]
    for v in state.vehicles.values():
        if v.seg_idx != 0 or v.entry_accepted:
            continue
        if _seg_next_ahead(index, v.segment, v.offset, exclude=v) is not None:
            continue
        to_line = v.route.lengths[0] - v.offset
        if to_line <= ACCEPT_EVAL_DISTANCE:
            v.entry_accepted = gap_accepted(net, index, v, p, dt,
                                            config.gap_horizon, ring_v,
                                            accepted_heads)
            if v.entry_accepted:
                accepted_heads[v.route.origin_leg] = v

    merge_heads = {leg: h for leg, h in accepted_heads.items()
                   if h.speed > _MERGE_MOVING_SPEED}
    p_av = replace(p, headway_tau=p.av_headway_tau)
    for v in state.vehicles.values():
        on_approach = v.seg_idx == 0
        if v.kind == HV:
            if state.clock + 1e-9 >= v.next_decision:
                v.cmd_accel = _hv_acceleration(net, index, v, p, merge_heads,
                                               ring_v)
                v.next_decision += p.reaction_period
        else:
            cmd = actions.get(v.id, 0.0)
            cmd = min(p.accel_max, max(-p.decel_max, cmd))
            if v.kind == AV:
                # Safety governor: commands are bounded above by the
                # car-following envelope, as on a platform whose vehicle
                # dynamics never exceed the safe speed. The policy shapes
                # behavior within (and below) that envelope; the envelope
                # itself uses the automated (shorter) headway.
                cmd = min(cmd, _hv_acceleration(net, index, v, p_av,
                                                merge_heads, ring_v))
            elif on_approach and not v.entry_accepted:
                # The live-driven ego is only overridden at an unaccepted
                # ring entry (right-of-way is physical, not advisory).
                cmd = min(cmd, _hv_acceleration(net, index, v, p,
                                                merge_heads, ring_v))
            v.cmd_accel = cmd

    # Semi-implicit Euler integration and segment bookkeeping.
    finished = []
    for v in state.vehicles.values():
        prev_speed = v.speed
        v.speed = max(0.0, min(v.speed + v.cmd_accel * dt, config.speed_limit))
        # Curvature physically bounds speed in the ring; on the approach the
        # bound relaxes with the braking distance still available.
        if v.seg_idx == 1:
            v.speed = min(v.speed, ring_v)
        elif v.seg_idx == 0:
            to_line = v.route.lengths[0] - v.offset
            v.speed = min(v.speed, math.sqrt(
                ring_v ** 2 + 2.0 * p.decel_max * max(0.0, to_line)))
        # Realized acceleration: what the caps let through. Observation and
        # emission bookkeeping see this, not the command.
        v.accel = (v.speed - prev_speed) / dt
        v.offset += v.speed * dt
        while v.offset >= v.route.lengths[v.seg_idx]:
            if v.seg_idx == len(v.route.segments) - 1:
                v.offset = v.route.lengths[v.seg_idx]
                finished.append(v)
                break
            v.offset -= v.route.lengths[v.seg_idx]
            v.seg_idx += 1
            if v.seg_idx == 1:
                v.entry_accepted = True  # in the ring now, whatever the gap said
            elif v.seg_idx == 2 and v.t_out is None:
                v.t_out = state.clock + dt
        if (v.seg_idx == 0 and v.t_in is None
                and v.route.lengths[0] - v.offset <= config.measurement_region):
            v.t_in = state.clock + dt

    # Emissions bookkeeping (inline power-demand surrogate, see emissions.py).
    ep = config.emissions
    idle, fpj, co2 = ep.idle_fuel_rate, ep.fuel_per_joule, ep.co2_per_ml_fuel
    roll = ep.rolling_coeff * ep.mass * 9.81
    drag = 0.5 * ep.air_density * ep.drag_area
    for v in state.vehicles.values():
        s = v.speed
        power = ep.mass * v.accel * s + roll * s + drag * s ** 3
        fuel = (idle + fpj * max(0.0, power)) * dt
        v.fuel_total += fuel
        v.co2_total += co2 * fuel

    # Collision detection on the post-integration configuration.
    finished_ids = {v.id for v in finished}
    index2 = _build_index(net, (v for v in state.vehicles.values()
                                if v.id not in finished_ids))
    for seg, (offs, vs) in index2.items():
        n = len(vs)
        if n < 2:
            continue
        pairs = range(n) if seg == RING else range(n - 1)
        for i in pairs:
            foll, lead = vs[i], vs[(i + 1) % n]
            lead_len = lead.length
            if seg == RING:
                dist = ring_forward(net, offs[i], offs[(i + 1) % n])
                # The exit and entry of a leg share one ring coordinate but
                # are physically separate mouths: a vehicle diverging at the
                # leader's entry leg never meets the part of the leader's
                # body still crossing the yield line.
                if foll.route.destination_leg == lead.route.origin_leg:
                    lead_len = min(lead.length, lead.offset)
            else:
                dist = offs[i + 1] - offs[i]
            if dist - lead_len <= 0.0:
                # A halted pair still in contact is one event, not one per tick.
                ongoing = (halt_on_collision and foll.halted
                           and foll.contact_leader == lead.id)
                if not ongoing:
                    ev = CollisionEvent(state.clock + dt, foll.id, lead.id, seg)
                    state.collision_log.append(ev)
                    info.collisions.append(ev)
                if halt_on_collision:
                    foll.speed = 0.0
                    foll.accel = 0.0
                    foll.cmd_accel = 0.0
                    foll.halted = True
                    foll.contact_leader = lead.id
                    setback = lead_len - dist + 0.1
                    foll.offset = max(0.0, foll.offset - setback)
            elif foll.halted and foll.contact_leader == lead.id:
                foll.halted = False
                foll.contact_leader = None

    for v in finished:
        del state.vehicles[v.id]
        state.completed.append(v)
        info.completed.append(v)

    state.clock += dt
    state.step_count += 1
    return info


def _hv_acceleration(net, index, v: VehicleState, p: DriverParams,
                     merge_heads=None, ring_v: float | None = None) -> float:
    leader = find_leader(net, index, v, merge_heads)
    v0 = None
    if ring_v is not None and ring_v < p.desired_speed:
        if v.seg_idx == 1:
            v0 = ring_v
        elif v.seg_idx == 0:
            # Anticipate the curve: comfortable braking to ring speed by the line.
            to_line = v.route.lengths[0] - v.offset
            v0 = min(p.desired_speed, math.sqrt(
                ring_v ** 2 + p.decel_max * max(0.0, to_line)))
    if v.seg_idx == 0 and not v.entry_accepted:
        to_line = v.route.lengths[0] - v.offset
        if leader is None or to_line < leader[0]:
            leader = (to_line, 0.0)  # hold at the stop line
    return idm_acceleration(v.speed, leader, p, v0)


class TrajectoryLogger:
    """Per-vehicle per-step CSV trajectory log (optionally gzipped)."""

    COLUMNS = ("run_id", "t", "id", "kind", "segment", "x", "speed", "accel")

    def __init__(self, path, run_id: str):
        self.run_id = run_id
        opener = gzip.open if str(path).endswith(".gz") else open
        self._fh = opener(path, "wt", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.COLUMNS)

    def record(self, state: SimState) -> None:
        for v in state.vehicles.values():
            seg = v.segment
            seg_name = "ring" if seg == RING else f"{seg[0]}{seg[1]}"
            self._writer.writerow((
                self.run_id, f"{state.clock:.1f}", v.id, v.kind, seg_name,
                f"{v.route_pos():.4f}", f"{v.speed:.4f}", f"{v.accel:.4f}"))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
