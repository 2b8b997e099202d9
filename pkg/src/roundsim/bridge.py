"""Real-time driving bridge: a human steers one ego vehicle in the running
mixed-autonomy simulation over a websocket.

One session = two scenarios in order (default 20% then 80% AV penetration,
5 minutes each) followed by a three-question survey. The simulation is paced
at wall-clock rate with drift correction, autonomous vehicles are driven by
the supplied policy, human-model vehicles by the car-following model, and
the ego by the latest throttle/brake message (latest-wins by client
timestamp). Frames are JSON with a ``type`` field in {hello, config,
snapshot, control, survey, error}; see docs/protocol.md.

The simulation/session core below is synchronous and fully testable without
sockets; the asyncio websocket layer is a thin shell around it.
"""
from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field, replace

import numpy as np

from . import microsim as ms
from . import nn
from .config import DriverParams, ScenarioConfig
from .microsim import AV, EGO, VehicleState
from .network import build_roundabout, project_to_world, route_between
from .rlenv import build_observation

PROTOCOL_VERSION = 1

# Survey fixture: three questions, five options each. The option strings are
# fixture data shared verbatim with the browser client.
SURVEY = (
    {
        "question": ("Regarding traffic smoothness, which of the following "
                     "statements do you agree with the most?"),
        "options": (
            "Traffic in the scenario with 20% of AVs was definitely smoother "
            "than in the scenario with 80% AVs",
            "Traffic in the scenario with 20% of AVs was partially smoother "
            "than in the scenario with 80% AVs",
            "Traffic in the scenario with 20% of AVs was partially less "
            "smooth than in the scenario with 80% AVs",
            "Traffic in the scenario with 20% of AVs was definitely less "
            "smooth than in the scenario with 80% AVs",
            "I did not perceive differences",
        ),
    },
    {
        "question": ("Regarding safety perception, which of the following "
                     "statements do you agree with the most?"),
        "options": (
            "Traffic in the scenario with 20% of AVs was definitely safer "
            "than in the scenario with 80% AVs",
            "Traffic in the scenario with 20% of AVs was partially safer "
            "than in the scenario with 80% AVs",
            "Traffic in the scenario with 20% of AVs was partially less "
            "safe than in the scenario with 80% AVs",
            "Traffic in the scenario with 20% of AVs was definitely less "
            "safe than in the scenario with 80% AVs",
            "I did not perceive differences",
        ),
    },
    {
        "question": "Globally, which of the two scenarios did you prefer?",
        "options": (
            "I definitely preferred the scenario with 20% AVs with respect "
            "to the scenario with 80% AVs",
            "I partially preferred the scenario with 20% AVs with respect "
            "to the scenario with 80% AVs",
            "I partially preferred the scenario with 80% AVs with respect "
            "to the scenario with 20% AVs",
            "I definitely preferred the scenario with 80% AVs with respect "
            "to the scenario with 20% AVs",
            "I cannot say which scenario I preferred",
        ),
    },
)

N_OPTIONS = 5


@dataclass(frozen=True)
class BridgeConfig:
    scenario_penetrations: tuple = (0.2, 0.8)
    scenario_duration: float = 300.0
    snapshot_hz: float = 20.0
    host: str = "127.0.0.1"
    port: int = 8765
    ego_route: tuple = (0, 2)  # origin leg, destination leg


def ego_acceleration(throttle: float, brake: float,
                     driver: DriverParams) -> float:
    """a = throttle*accel_max - brake*decel_max, inputs clamped to [0, 1]."""
    if not (0.0 <= throttle <= 1.0 and 0.0 <= brake <= 1.0):
        raise ValueError("throttle and brake must lie in [0, 1]")
    return throttle * driver.accel_max - brake * driver.decel_max


class ScenarioSim:
    """One scenario's simulation with an injected ego vehicle."""

    def __init__(self, config: ScenarioConfig, policy: dict | None,
                 penetration: float, seed: int,
                 ego_route: tuple = (0, 2), id_base: int = 0):
        if penetration > 0.0 and policy is None:
            raise ValueError("a policy is required when penetration > 0")
        self.config = replace(config, penetration=penetration, seed=seed)
        self.policy = policy
        self.net = build_roundabout(self.config)
        self.state = ms.make_state(seed)
        # Vehicle ids must be unique across a whole session, not just one
        # scenario: a client interpolating between snapshots pairs vehicles
        # by id, so reusing an id across a scenario switch would look like
        # a teleport. The session threads its running counter through here.
        self.state.next_id = id_base
        self.ego_route = ego_route
        self.x_max = max(
            (l0.approach_length
             + ((l1.exit_coordinate - l0.entry_coordinate) % self.net.ring_length
                or self.net.ring_length)
             + l1.exit_length)
            for l0 in self.net.legs for l1 in self.net.legs if l0.id != l1.id)
        self.throttle = 0.0
        self.brake = 1.0          # safe default until a control arrives
        self.control_stamp = -float("inf")
        self.ego_id = self._spawn_ego()

    def _spawn_ego(self) -> int | None:
        """Insert the ego at its approach start, or None while blocked."""
        if (self.state.vehicles
                and ms._safe_spawn_speed(self.state, self.net,
                                         self.ego_route[0],
                                         self.config) is None):
            return None
        v = VehicleState(
            id=self.state.next_id,
            kind=EGO,
            route=route_between(self.net, *self.ego_route),
            speed=0.0,
            t_spawn=self.state.clock,
            next_decision=self.state.clock,
        )
        self.state.next_id += 1
        self.state.vehicles[v.id] = v
        return v.id

    def apply_control(self, throttle: float, brake: float,
                      stamp: float) -> bool:
        """Latest-wins ingestion; stale messages (older stamp) are dropped."""
        a = ego_acceleration(throttle, brake, self.config.driver)  # validates
        del a
        if stamp < self.control_stamp:
            return False
        self.throttle, self.brake = float(throttle), float(brake)
        self.control_stamp = stamp
        return True

    def release_control(self) -> None:
        """Client gone: full braking until a new control arrives."""
        self.throttle, self.brake = 0.0, 1.0

    @property
    def sim_clock(self) -> float:
        return self.state.clock

    def tick(self) -> None:
        """Advance one timestep: policy AVs, model HVs, mapped ego."""
        cfg = self.config
        actions = {}
        av_ids = [v.id for v in self.state.vehicles.values() if v.kind == AV]
        if av_ids:
            index = ms._build_index(self.net, self.state.vehicles.values())
            X = np.stack([build_observation(self.state, self.net, i,
                                            self.x_max, cfg.driver.decel_max,
                                            index=index)
                          for i in av_ids])
            f = nn.forward(self.policy, X)
            actions.update({i: float(m) for i, m in zip(av_ids, f["mean"])})
        if self.ego_id is not None:
            actions[self.ego_id] = ego_acceleration(self.throttle, self.brake,
                                                    cfg.driver)
        ms.step(self.state, self.net, actions, cfg.driver, cfg,
                halt_on_collision=True)
        if self.ego_id is None or self.ego_id not in self.state.vehicles:
            self.ego_id = self._spawn_ego()  # crossed: drive another lap

    def snapshot(self) -> dict:
        vehicles = []
        for v in self.state.vehicles.values():
            seg = v.segment
            offset = ms.ring_coord(self.net, v) if seg == ms.RING else v.offset
            x, y, heading = project_to_world(self.net, seg, offset)
            vehicles.append({
                "id": v.id,
                "kind": v.kind,
                "x": round(x, 3),
                "y": round(y, 3),
                "heading": round(heading, 4),
                "speed": round(v.speed, 3),
                "ego": v.id == self.ego_id,
            })
        return {"sim_clock": round(self.state.clock, 3),
                "vehicles": vehicles}


@dataclass
class SessionRecord:
    participant: str
    penetrations: tuple
    answers: tuple  # 3 option indices
    recorded_at: float


class Session:
    """Ordered scenario pair plus the survey gate."""

    def __init__(self, scenario_config: ScenarioConfig, policy: dict | None,
                 bridge: BridgeConfig, seed: int = 0,
                 session_id: str | None = None):
        self.id = session_id or uuid.uuid4().hex[:12]
        self.bridge = bridge
        self.scenarios = tuple(bridge.scenario_penetrations)
        self._factories = [
            lambda id_base, i=i, p=p: ScenarioSim(scenario_config, policy, p,
                                                  seed=seed + i,
                                                  ego_route=bridge.ego_route,
                                                  id_base=id_base)
            for i, p in enumerate(self.scenarios)]
        self.index = 0
        self.sim = self._factories[0](0)
        self.survey_recorded = False

    @property
    def phase(self) -> str:
        if self.index < len(self.scenarios):
            return "driving"
        return "done" if self.survey_recorded else "survey"

    @property
    def elapsed_total(self) -> float:
        """Session sim time including completed scenarios (monotone)."""
        done = min(self.index, len(self.scenarios))
        base = done * self.bridge.scenario_duration
        return base + (self.sim.sim_clock if self.phase == "driving" else 0.0)

    def advance_to(self, sim_target: float) -> None:
        """Drift-corrected pacing: step until session sim time reaches target."""
        dt = self.sim.config.dt
        while (self.phase == "driving"
               and self.elapsed_total + dt <= sim_target + 1e-9):
            self.sim.tick()
            if self.sim.sim_clock >= self.bridge.scenario_duration - 1e-9:
                self.index += 1
                if self.index < len(self.scenarios):
                    self.sim = self._factories[self.index](
                        self.sim.state.next_id)
                else:
                    self.sim.release_control()

    def snapshot(self) -> dict:
        snap = self.sim.snapshot()
        snap.update({
            "type": "snapshot",
            "session_id": self.id,
            "scenario_index": min(self.index, len(self.scenarios) - 1),
            "phase": self.phase,
            "sim_clock": round(min(self.elapsed_total,
                                   len(self.scenarios)
                                   * self.bridge.scenario_duration), 3),
        })
        return snap


class SessionStore:
    """In-memory session records with optional JSONL persistence."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[SessionRecord] = []
        self._seen: set[str] = set()

    def record_survey(self, session: Session, participant: str,
                      answers) -> SessionRecord:
        if session.phase == "driving":
            raise ValueError("both scenarios must finish before the survey")
        if session.id in self._seen:
            raise ValueError("duplicate survey submission for this session")
        answers = tuple(int(a) for a in answers)
        if len(answers) != len(SURVEY):
            raise ValueError(f"expected {len(SURVEY)} answers")
        for a in answers:
            if not 0 <= a < N_OPTIONS:
                raise ValueError("option out of range")
        rec = SessionRecord(participant=str(participant),
                            penetrations=session.scenarios,
                            answers=answers,
                            recorded_at=time.time())
        self.records.append(rec)
        self._seen.add(session.id)
        session.survey_recorded = True
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps({
                    "session_id": session.id,
                    "participant": rec.participant,
                    "penetrations": list(rec.penetrations),
                    "answers": list(rec.answers),
                    "recorded_at": rec.recorded_at,
                }) + "\n")
        return rec

    def histogram(self):
        """Per-question answer counts; each question's counts sum to N."""
        counts = [[0] * N_OPTIONS for _ in SURVEY]
        for rec in self.records:
            for q, a in enumerate(rec.answers):
                counts[q][a] += 1
        return counts


def config_frame(session: Session, config: ScenarioConfig) -> dict:
    return {
        "type": "config",
        "session_id": session.id,
        "protocol_version": PROTOCOL_VERSION,
        "snapshot_hz": session.bridge.snapshot_hz,
        "scenarios": [{"penetration": p,
                       "duration": session.bridge.scenario_duration,
                       "label": f"{int(round(p * 100))}% AVs"}
                      for p in session.scenarios],
        "geometry": {
            "ring_radius": config.ring_radius,
            "approach_length": config.approach_length,
            "exit_length": config.exit_length,
            "lane_offset": 2.5,
            "vehicle_length": 5.0,
        },
        "survey": [{"question": q["question"], "options": list(q["options"])}
                   for q in SURVEY],
    }


def error_frame(message: str) -> dict:
    return {"type": "error", "message": str(message)}


def handle_frame(session: Session, store: SessionStore, frame: dict) -> dict | None:
    """Process one inbound client frame; returns a reply frame or None.

    Shared by the websocket layer and the synchronous tests.
    """
    if not isinstance(frame, dict) or "type" not in frame:
        return error_frame("frame must be an object with a 'type' field")
    kind = frame["type"]
    if kind == "control":
        if session.phase != "driving":
            return error_frame("scenario phase is over")
        try:
            session.sim.apply_control(float(frame.get("throttle", 0.0)),
                                      float(frame.get("brake", 0.0)),
                                      float(frame.get("t", time.time())))
        except (TypeError, ValueError) as exc:
            return error_frame(str(exc))
        return None
    if kind == "survey":
        try:
            rec = store.record_survey(session,
                                      frame.get("participant", "anonymous"),
                                      frame.get("answers", ()))
        except (TypeError, ValueError) as exc:
            return error_frame(str(exc))
        return {"type": "survey", "status": "recorded",
                "session_id": session.id,
                "participant": rec.participant,
                "answers": list(rec.answers)}
    return error_frame(f"unknown frame type {kind!r}")


async def serve(config: ScenarioConfig, policy: dict | None,
                bridge: BridgeConfig = BridgeConfig(), store=None,
                ready=None):
    """Run the websocket server until cancelled.

    Each connection gets its own session, paced at wall-clock rate. ``ready``
    (an asyncio.Event) is set once the server is listening, for tests.
    """
    import asyncio

    import websockets

    store = store if store is not None else SessionStore()

    async def handler(ws):
        session = Session(config, policy, bridge)
        await ws.send(json.dumps({"type": "hello", "session_id": session.id,
                                  "protocol_version": PROTOCOL_VERSION}))
        await ws.send(json.dumps(config_frame(session, config)))

        async def ingest():
            async for raw in ws:
                try:
                    frame = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send(json.dumps(error_frame("invalid JSON")))
                    continue
                reply = handle_frame(session, store, frame)
                if reply is not None:
                    await ws.send(json.dumps(reply))

        ingest_task = asyncio.create_task(ingest())
        t0 = time.monotonic()
        interval = 1.0 / bridge.snapshot_hz
        last_clock = -1.0
        try:
            while not ws.close_code:
                wall = time.monotonic() - t0
                session.advance_to(wall)
                snap = session.snapshot()
                # sim_clock is strictly increasing on the wire: frozen-clock
                # frames (e.g. while the survey form is up) are not re-sent.
                if snap["sim_clock"] > last_clock:
                    last_clock = snap["sim_clock"]
                    await ws.send(json.dumps(snap))
                if session.phase != "driving":
                    break
                sleep_for = interval - ((time.monotonic() - t0) % interval)
                await asyncio.sleep(sleep_for)
            # Keep the connection for the survey exchange.
            while not ws.close_code and session.phase != "done":
                await asyncio.sleep(0.05)
        except websockets.ConnectionClosed:
            pass
        finally:
            session.sim.release_control()
            ingest_task.cancel()

    server = await websockets.serve(handler, bridge.host, bridge.port)
    if ready is not None:
        ready.set()
    try:
        await asyncio.Future()
    finally:
        server.close()
        await server.wait_closed()
