/**
 * Client session state machine.
 *
 * Owns the protocol conversation: hello → config → driving snapshots →
 * survey → done. Transport is injected as a minimal send/close pair so
 * the machine is fully testable without a browser or a socket; main.ts
 * wires it to a real WebSocket.
 */

import type {
  ConfigFrame,
  ControlFrame,
  ServerFrame,
  SnapshotFrame,
  SurveySubmitFrame,
} from "./protocol.js";
import { parseServerFrame, surveyFrame } from "./protocol.js";

export interface Transport {
  send(data: string): void;
}

export type ClientPhase =
  | "connecting"
  | "driving"
  | "survey"
  | "submitted"
  | "done"
  | "failed";

export interface SessionEvents {
  onConfig?(config: ConfigFrame): void;
  onSnapshot?(snap: SnapshotFrame): void;
  onPhase?(phase: ClientPhase): void;
  onError?(message: string): void;
}

export class SessionClient {
  phase: ClientPhase = "connecting";
  sessionId: string | null = null;
  config: ConfigFrame | null = null;
  lastClock = -1;
  errors: string[] = [];

  constructor(
    private readonly transport: Transport,
    private readonly events: SessionEvents = {},
  ) {}

  private setPhase(phase: ClientPhase): void {
    if (phase !== this.phase) {
      this.phase = phase;
      this.events.onPhase?.(phase);
    }
  }

  /** Feed one raw websocket message. */
  receive(raw: string): void {
    let frame: ServerFrame;
    try {
      frame = parseServerFrame(raw);
    } catch (err) {
      this.errors.push(String(err));
      this.events.onError?.(String(err));
      return;
    }
    switch (frame.type) {
      case "hello":
        this.sessionId = frame.session_id;
        break;
      case "config":
        this.config = frame;
        this.setPhase("driving");
        this.events.onConfig?.(frame);
        break;
      case "snapshot":
        // The server guarantees a strictly increasing clock; enforce it
        // here too so a buggy server can't rewind the scene.
        if (frame.sim_clock <= this.lastClock) return;
        this.lastClock = frame.sim_clock;
        this.events.onSnapshot?.(frame);
        if (frame.phase === "survey" && this.phase === "driving") {
          this.setPhase("survey");
        }
        break;
      case "survey":
        if (frame.status === "recorded") this.setPhase("done");
        break;
      case "error":
        this.errors.push(frame.message);
        this.events.onError?.(frame.message);
        break;
    }
  }

  sendControl(frame: ControlFrame): void {
    if (this.phase !== "driving") return; // the server would refuse anyway
    this.transport.send(JSON.stringify(frame));
  }

  /** Submit survey answers (option indices, one per question). */
  submitSurvey(participant: string, answers: number[]): void {
    if (this.phase !== "survey") {
      throw new Error(`cannot submit survey in phase '${this.phase}'`);
    }
    const n = this.config?.survey.length ?? 0;
    if (answers.length !== n) {
      throw new Error(`expected ${n} answers, got ${answers.length}`);
    }
    const sent: SurveySubmitFrame = surveyFrame(participant, answers);
    this.transport.send(JSON.stringify(sent));
    this.setPhase("submitted");
  }

  fail(message: string): void {
    this.errors.push(message);
    this.setPhase("failed");
  }
}
