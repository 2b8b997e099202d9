/**
 * Browser entry point.
 *
 * Wires the real WebSocket, keyboard, and canvas to the testable cores:
 * protocol parsing, the session state machine, snapshot interpolation,
 * and the pedal model. Server host/port and the session id come from the
 * URL query string, e.g.  ?host=localhost&port=8765&session=pilot-01
 */

import { SnapshotBuffer, RenderClock } from "./interpolate.js";
import { PedalState } from "./input.js";
import { Renderer } from "./render.js";
import { SessionClient } from "./session.js";
import type { ConfigFrame } from "./protocol.js";

const params = new URLSearchParams(window.location.search);
const host = params.get("host") ?? window.location.hostname ?? "localhost";
const port = params.get("port") ?? "8765";
const sessionId = params.get("session") ?? `web-${Date.now()}`;

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const statusEl = document.getElementById("status") as HTMLElement;
const surveyEl = document.getElementById("survey") as HTMLElement;
const ctx = canvas.getContext("2d")!;

const CONTROL_HZ = 20;

let buffer = new SnapshotBuffer(5.0);
let renderClock = new RenderClock(0.05);
const pedals = new PedalState();
let renderer: Renderer | null = null;

const ws = new WebSocket(`ws://${host}:${port}/?session=${sessionId}`);
const client = new SessionClient(
  { send: (data) => ws.send(data) },
  {
    onConfig(config) {
      renderer = new Renderer(ctx, config.geometry);
      buffer = new SnapshotBuffer(config.geometry.vehicle_length);
      renderClock = new RenderClock(1 / config.snapshot_hz);
      buildSurveyForm(config);
    },
    onSnapshot(snap) {
      buffer.push(snap);
    },
    onPhase(phase) {
      statusEl.textContent = `phase: ${phase}`;
      surveyEl.style.display = phase === "survey" ? "block" : "none";
    },
    onError(message) {
      statusEl.textContent = `error: ${message}`;
    },
  },
);

ws.addEventListener("message", (ev) => client.receive(String(ev.data)));
ws.addEventListener("close", () => {
  if (client.phase !== "done") client.fail("connection closed");
});
ws.addEventListener("error", () => client.fail("connection error"));

window.addEventListener("keydown", (ev) => {
  if (pedals.keyDown(ev.key)) ev.preventDefault();
});
window.addEventListener("keyup", (ev) => {
  if (pedals.keyUp(ev.key)) ev.preventDefault();
});

// Controls go out at a fixed rate while driving; the server applies the
// newest stamp it has seen (stale frames are dropped server-side).
setInterval(() => {
  pedals.tick(1 / CONTROL_HZ);
  if (client.phase !== "driving") return;
  const latest = buffer.latest;
  if (latest === null) return;
  client.sendControl(pedals.frame(latest.sim_clock));
}, 1000 / CONTROL_HZ);

function frame(wallMs: number): void {
  const wall = wallMs / 1000;
  const latest = buffer.latest;
  if (renderer !== null && latest !== null) {
    const clock = renderClock.at(wall, latest.sim_clock);
    const vehicles = buffer.sample(clock);
    const ego = vehicles.find((v) => v.ego);
    const speed = ego ? (ego.speed * 3.6).toFixed(0) : "--";
    const scenario = client.config?.scenarios[latest.scenario_index];
    renderer.draw(
      vehicles,
      `${scenario?.label ?? ""}   t=${latest.sim_clock.toFixed(1)}s   ` +
        `ego ${speed} km/h   throttle/brake: hold ↑ / ↓`,
    );
  }
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);

function buildSurveyForm(config: ConfigFrame): void {
  surveyEl.innerHTML = "";
  const nameLabel = document.createElement("label");
  nameLabel.textContent = "Participant id: ";
  const nameInput = document.createElement("input");
  nameInput.value = sessionId;
  nameLabel.appendChild(nameInput);
  surveyEl.appendChild(nameLabel);

  config.survey.forEach((q, qi) => {
    const fieldset = document.createElement("fieldset");
    const legend = document.createElement("legend");
    legend.textContent = q.question;
    fieldset.appendChild(legend);
    q.options.forEach((opt, oi) => {
      const label = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = `q${qi}`;
      radio.value = String(oi);
      label.appendChild(radio);
      // Option text is rendered verbatim from the config frame.
      label.appendChild(document.createTextNode(opt));
      fieldset.appendChild(label);
    });
    surveyEl.appendChild(fieldset);
  });

  const submit = document.createElement("button");
  submit.textContent = "Submit";
  submit.addEventListener("click", () => {
    const answers: number[] = [];
    for (let qi = 0; qi < config.survey.length; qi++) {
      const picked = surveyEl.querySelector<HTMLInputElement>(
        `input[name="q${qi}"]:checked`,
      );
      if (picked === null) {
        statusEl.textContent = `please answer question ${qi + 1}`;
        return;
      }
      answers.push(Number(picked.value));
    }
    client.submitSurvey(nameInput.value, answers);
  });
  surveyEl.appendChild(submit);
}

statusEl.textContent = `connecting to ws://${host}:${port} ...`;
