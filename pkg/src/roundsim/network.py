"""Four-leg mini-roundabout road graph in curvilinear coordinates.

Positions are (segment, offset) pairs. Segments are identified by compact
keys: ``("a", leg)`` approach, ``("r",)`` the circulatory ring, and
``("e", leg)`` exit. The ring coordinate runs counterclockwise (right-hand
traffic) and wraps modulo the ring length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ScenarioConfig

Segment = tuple
Position = tuple  # (segment, offset)

RING: Segment = ("r",)


def approach(leg: int) -> Segment:
    return ("a", leg)


def exit_(leg: int) -> Segment:
    return ("e", leg)


@dataclass(frozen=True)
class Leg:
    id: int
    approach_length: float
    exit_length: float
    demand_weight: float
    entry_coordinate: float
    exit_coordinate: float


@dataclass(frozen=True)
class Route:
    origin_leg: int
    destination_leg: int
    segments: tuple[Segment, ...]
    lengths: tuple[float, ...]

    @property
    def total_length(self) -> float:
        return sum(self.lengths)


@dataclass(frozen=True)
class RoadNetwork:
    ring_radius: float
    ring_length: float
    legs: tuple[Leg, Leg, Leg, Leg]
    speed_limit: float

    @property
    def conflict_points(self) -> tuple[float, ...]:
        """Ring coordinate where each leg's entry merges."""
        return tuple(leg.entry_coordinate for leg in self.legs)

    def segment_length(self, seg: Segment) -> float:
        if seg == RING:
            return self.ring_length
        kind, leg = seg
        if kind == "a":
            return self.legs[leg].approach_length
        return self.legs[leg].exit_length


def build_roundabout(config: ScenarioConfig) -> RoadNetwork:
    """Build the symmetric four-leg roundabout described by ``config``."""
    ring_length = 2.0 * math.pi * config.ring_radius
    legs = tuple(
        Leg(
            id=i,
            approach_length=config.approach_length,
            exit_length=config.exit_length,
            demand_weight=config.demand_weights[i],
            entry_coordinate=i * ring_length / 4.0,
            exit_coordinate=i * ring_length / 4.0,
        )
        for i in range(4)
    )
    return RoadNetwork(
        ring_radius=config.ring_radius,
        ring_length=ring_length,
        legs=legs,
        speed_limit=config.speed_limit,
    )


def ring_forward(net: RoadNetwork, from_coord: float, to_coord: float) -> float:
    """Forward (counterclockwise) arc length from one ring coordinate to another."""
    return (to_coord - from_coord) % net.ring_length


def route_between(net: RoadNetwork, origin: int, dest: int) -> Route:
    if origin == dest:
        raise ValueError("no U-turn routes: origin and destination coincide")
    o, d = net.legs[origin], net.legs[dest]
    arc = ring_forward(net, o.entry_coordinate, d.exit_coordinate)
    if arc == 0.0:
        arc = net.ring_length
    return Route(
        origin_leg=origin,
        destination_leg=dest,
        segments=(approach(origin), RING, exit_(dest)),
        lengths=(o.approach_length, arc, d.exit_length),
    )


def longitudinal_distance(net: RoadNetwork, pos_a: Position,
                          pos_b: Position) -> float | None:
    """Shortest forward driving distance from ``pos_a`` to ``pos_b``.

    Returns ``None`` when no forward path exists (e.g. distinct approaches,
    or anything downstream of an exit leg).
    """
    (seg_a, off_a), (seg_b, off_b) = pos_a, pos_b
    if seg_a == seg_b and seg_a != RING:
        return off_b - off_a if off_b >= off_a else None
    if seg_a == RING:
        if seg_b == RING:
            return ring_forward(net, off_a, off_b)
        kind, leg = seg_b
        if kind == "e":
            return ring_forward(net, off_a, net.legs[leg].exit_coordinate) + off_b
        return None
    kind_a, leg_a = seg_a
    if kind_a == "a":
        entry = net.legs[leg_a].entry_coordinate
        remaining = net.legs[leg_a].approach_length - off_a
        if seg_b == RING:
            return remaining + ring_forward(net, entry, off_b)
        kind_b, leg_b = seg_b
        if kind_b == "e":
            return (remaining
                    + ring_forward(net, entry, net.legs[leg_b].exit_coordinate)
                    + off_b)
        return None
    return None  # exit legs lead out of the network


def route_position(net: RoadNetwork, route: Route, seg: Segment,
                   offset: float) -> float:
    """Cumulative distance along ``route`` of a position on one of its segments."""
    cum = 0.0
    for rseg, length in zip(route.segments, route.lengths):
        if rseg == seg:
            return cum + offset
        cum += length
    raise ValueError(f"segment {seg} not on route")


def project_onto_route(net: RoadNetwork, route: Route, seg: Segment,
                       offset: float) -> float | None:
    """Route coordinate of an arbitrary network position, if it lies on the route.

    Ring positions are projected onto the route's ring arc; positions outside
    the arc (or on foreign legs) yield ``None``.
    """
    if seg == RING:
        entry = net.legs[route.origin_leg].entry_coordinate
        delta = ring_forward(net, entry, offset)
        if delta <= route.lengths[1]:
            return route.lengths[0] + delta
        return None
    if seg in route.segments:
        return route_position(net, route, seg, offset)
    return None


# World-plane projection, used for rendering and the live snapshot stream.

_LANE_OFFSET = 2.5  # lateral separation between approach and exit carriageways


def leg_angle(net: RoadNetwork, leg: int) -> float:
    return 2.0 * math.pi * net.legs[leg].entry_coordinate / net.ring_length


def project_to_world(net: RoadNetwork, seg: Segment,
                     offset: float) -> tuple[float, float, float]:
    """Map a curvilinear position to (x, y, heading) in meters/radians.

    The ring center sits at the origin; approaches run radially inward and
    exits radially outward, laterally offset like a two-way carriageway.
    """
    if seg == RING:
        theta = 2.0 * math.pi * offset / net.ring_length
        x = net.ring_radius * math.cos(theta)
        y = net.ring_radius * math.sin(theta)
        heading = theta + math.pi / 2.0  # counterclockwise travel
        return x, y, heading
    kind, leg = seg
    theta = leg_angle(net, leg)
    ux, uy = math.cos(theta), math.sin(theta)  # outward radial unit vector
    px, py = -uy, ux                           # left-of-outward unit vector
    if kind == "a":
        r = net.ring_radius + net.legs[leg].approach_length - offset
        side = -_LANE_OFFSET
        heading = math.atan2(-uy, -ux)  # driving inward
    else:
        r = net.ring_radius + offset
        side = _LANE_OFFSET
        heading = math.atan2(uy, ux)    # driving outward
    return ux * r + px * side, uy * r + py * side, heading
