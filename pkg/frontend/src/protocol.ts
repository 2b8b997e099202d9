/**
 * Frame types and validation for the driving-bridge websocket protocol
 * (see docs/protocol.md). Every frame is a JSON object with a `type`
 * field; unknown or malformed frames are rejected with a descriptive
 * error rather than silently dropped, so transport bugs surface early.
 */

export const PROTOCOL_VERSION = 1;

export interface HelloFrame {
  type: "hello";
  session_id: string;
  protocol_version: number;
}

export interface ScenarioInfo {
  penetration: number;
  duration: number;
  label: string;
}

export interface Geometry {
  ring_radius: number;
  approach_length: number;
  exit_length: number;
  lane_offset: number;
  vehicle_length: number;
}

export interface SurveyQuestion {
  question: string;
  options: string[];
}

export interface ConfigFrame {
  type: "config";
  session_id: string;
  protocol_version: number;
  snapshot_hz: number;
  scenarios: ScenarioInfo[];
  geometry: Geometry;
  survey: SurveyQuestion[];
}

export interface VehicleDot {
  id: number;
  kind: "HV" | "AV" | "EGO";
  x: number;
  y: number;
  heading: number;
  speed: number;
  ego: boolean;
}

export type Phase = "driving" | "survey" | "done";

export interface SnapshotFrame {
  type: "snapshot";
  session_id: string;
  scenario_index: number;
  phase: Phase;
  sim_clock: number;
  vehicles: VehicleDot[];
}

export interface SurveyAckFrame {
  type: "survey";
  status: string;
  session_id: string;
  participant: string;
  answers: number[];
}

export interface ErrorFrame {
  type: "error";
  message: string;
}

export type ServerFrame =
  | HelloFrame
  | ConfigFrame
  | SnapshotFrame
  | SurveyAckFrame
  | ErrorFrame;

export interface ControlFrame {
  type: "control";
  throttle: number;
  brake: number;
  t: number;
}

export interface SurveySubmitFrame {
  type: "survey";
  participant: string;
  answers: number[];
}

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

function num(obj: Record<string, unknown>, key: string): number {
  const v = obj[key];
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new Error(`field '${key}' must be a finite number`);
  }
  return v;
}

function str(obj: Record<string, unknown>, key: string): string {
  const v = obj[key];
  if (typeof v !== "string") throw new Error(`field '${key}' must be a string`);
  return v;
}

const PHASES: Phase[] = ["driving", "survey", "done"];
const KINDS = ["HV", "AV", "EGO"];

/** Parse one raw websocket message into a typed server frame. */
export function parseServerFrame(raw: string): ServerFrame {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new Error("frame is not valid JSON");
  }
  if (!isRecord(data)) throw new Error("frame must be a JSON object");
  const type = data["type"];
  switch (type) {
    case "hello":
      return {
        type,
        session_id: str(data, "session_id"),
        protocol_version: num(data, "protocol_version"),
      };
    case "config":
      return parseConfig(data);
    case "snapshot":
      return parseSnapshot(data);
    case "survey":
      return {
        type,
        status: str(data, "status"),
        session_id: str(data, "session_id"),
        participant: str(data, "participant"),
        answers: (data["answers"] as number[]) ?? [],
      };
    case "error":
      return { type, message: str(data, "message") };
    default:
      throw new Error(`unknown frame type '${String(type)}'`);
  }
}

function parseConfig(data: Record<string, unknown>): ConfigFrame {
  const version = num(data, "protocol_version");
  if (version !== PROTOCOL_VERSION) {
    throw new Error(`unsupported protocol version ${version}`);
  }
  const geoRaw = data["geometry"];
  if (!isRecord(geoRaw)) throw new Error("config frame missing geometry");
  const geometry: Geometry = {
    ring_radius: num(geoRaw, "ring_radius"),
    approach_length: num(geoRaw, "approach_length"),
    exit_length: num(geoRaw, "exit_length"),
    lane_offset: num(geoRaw, "lane_offset"),
    vehicle_length: num(geoRaw, "vehicle_length"),
  };
  const scenariosRaw = data["scenarios"];
  if (!Array.isArray(scenariosRaw) || scenariosRaw.length === 0) {
    throw new Error("config frame missing scenarios");
  }
  const scenarios = scenariosRaw.map((s) => {
    if (!isRecord(s)) throw new Error("scenario entry must be an object");
    return {
      penetration: num(s, "penetration"),
      duration: num(s, "duration"),
      label: str(s, "label"),
    };
  });
  const surveyRaw = data["survey"];
  if (!Array.isArray(surveyRaw)) throw new Error("config frame missing survey");
  const survey = surveyRaw.map((q) => {
    if (!isRecord(q)) throw new Error("survey entry must be an object");
    const options = q["options"];
    if (!Array.isArray(options) || options.some((o) => typeof o !== "string")) {
      throw new Error("survey options must be strings");
    }
    // Option strings pass through verbatim: no trimming, no reformatting.
    return { question: str(q, "question"), options: options as string[] };
  });
  return {
    type: "config",
    session_id: str(data, "session_id"),
    protocol_version: version,
    snapshot_hz: num(data, "snapshot_hz"),
    scenarios,
    geometry,
    survey,
  };
}

function parseSnapshot(data: Record<string, unknown>): SnapshotFrame {
  const phase = data["phase"];
  if (typeof phase !== "string" || !PHASES.includes(phase as Phase)) {
    throw new Error(`bad phase '${String(phase)}'`);
  }
  const vehiclesRaw = data["vehicles"];
  if (!Array.isArray(vehiclesRaw)) throw new Error("snapshot missing vehicles");
  const vehicles = vehiclesRaw.map((v) => {
    if (!isRecord(v)) throw new Error("vehicle entry must be an object");
    const kind = v["kind"];
    if (typeof kind !== "string" || !KINDS.includes(kind)) {
      throw new Error(`bad vehicle kind '${String(kind)}'`);
    }
    return {
      id: num(v, "id"),
      kind: kind as VehicleDot["kind"],
      x: num(v, "x"),
      y: num(v, "y"),
      heading: num(v, "heading"),
      speed: num(v, "speed"),
      ego: v["ego"] === true,
    };
  });
  return {
    type: "snapshot",
    session_id: str(data, "session_id"),
    scenario_index: num(data, "scenario_index"),
    phase: phase as Phase,
    sim_clock: num(data, "sim_clock"),
    vehicles,
  };
}

export function controlFrame(
  throttle: number,
  brake: number,
  t: number,
): ControlFrame {
  const clamp = (x: number) => Math.min(1, Math.max(0, x));
  return { type: "control", throttle: clamp(throttle), brake: clamp(brake), t };
}

export function surveyFrame(
  participant: string,
  answers: number[],
): SurveySubmitFrame {
  return { type: "survey", participant, answers };
}
