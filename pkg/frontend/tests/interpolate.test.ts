import { describe, expect, it } from "vitest";
import { RenderClock, SnapshotBuffer } from "../src/interpolate.js";
import type { SnapshotFrame, VehicleDot } from "../src/protocol.js";

const VEHICLE_LENGTH = 5;

function veh(id: number, x: number, y: number, heading = 0): VehicleDot {
  return { id, kind: "HV", x, y, heading, speed: 10, ego: false };
}

function snap(clock: number, vehicles: VehicleDot[]): SnapshotFrame {
  return {
    type: "snapshot",
    session_id: "s",
    scenario_index: 0,
    phase: "driving",
    sim_clock: clock,
    vehicles,
  };
}

describe("SnapshotBuffer", () => {
  it("returns nothing before any snapshot and snaps on the first", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    expect(buf.sample(0)).toEqual([]);
    buf.push(snap(1.0, [veh(1, 10, 0)]));
    const out = buf.sample(1.0);
    expect(out).toHaveLength(1);
    expect(out[0].snapped).toBe(true);
  });

  it("interpolates linearly between two snapshots", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    buf.push(snap(1.0, [veh(1, 10, 0)]));
    buf.push(snap(1.05, [veh(1, 11, 2)]));
    const mid = buf.sample(1.025)[0];
    expect(mid.snapped).toBe(false);
    expect(mid.x).toBeCloseTo(10.5);
    expect(mid.y).toBeCloseTo(1.0);
  });

  it("clamps sampling outside the buffered span", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    buf.push(snap(1.0, [veh(1, 10, 0)]));
    buf.push(snap(1.05, [veh(1, 11, 0)]));
    expect(buf.sample(0.5)[0].x).toBeCloseTo(10);
    expect(buf.sample(9.0)[0].x).toBeCloseTo(11);
  });

  it("ignores stale or repeated clocks", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    buf.push(snap(2.0, [veh(1, 10, 0)]));
    buf.push(snap(1.5, [veh(1, 99, 0)]));
    buf.push(snap(2.0, [veh(1, 99, 0)]));
    expect(buf.sample(2.0)[0].x).toBeCloseTo(10);
  });

  it("snaps instead of smearing a jump larger than one vehicle length", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    buf.push(snap(1.0, [veh(1, 0, 0)]));
    buf.push(snap(1.05, [veh(1, 40, 0)])); // respawn at the far side
    const out = buf.sample(1.025)[0];
    expect(out.snapped).toBe(true);
    expect(out.x).toBeCloseTo(40);
  });

  it("never produces an interpolated step larger than one vehicle length", () => {
    // Random-walk positions with small per-snapshot movement.
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    let x = 0;
    let y = 0;
    let worst = 0;
    for (let i = 0; i < 200; i++) {
      x += Math.sin(i * 1.7) * 2.0;
      y += Math.cos(i * 0.9) * 2.0;
      buf.push(snap(i * 0.05, [veh(1, x, y)]));
      if (i > 0) {
        worst = Math.max(worst, buf.maxStep((i - 1) * 0.05, i * 0.05));
      }
    }
    expect(worst).toBeLessThanOrEqual(VEHICLE_LENGTH);
  });

  it("snaps vehicles absent from the previous frame", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    buf.push(snap(1.0, [veh(1, 0, 0)]));
    buf.push(snap(1.05, [veh(1, 1, 0), veh(2, 50, 50)]));
    const out = buf.sample(1.025);
    const fresh = out.find((v) => v.id === 2)!;
    expect(fresh.snapped).toBe(true);
    expect(fresh.x).toBeCloseTo(50);
  });

  it("interpolates headings across the ±π wrap", () => {
    const buf = new SnapshotBuffer(VEHICLE_LENGTH);
    buf.push(snap(0.0, [veh(1, 0, 0, Math.PI - 0.1)]));
    buf.push(snap(0.05, [veh(1, 1, 0, -Math.PI + 0.1)]));
    const h = buf.sample(0.025)[0].heading;
    // Midway through the short way round, not through zero.
    expect(Math.abs(Math.abs(h) - Math.PI)).toBeLessThan(1e-9);
  });
});

describe("RenderClock", () => {
  it("anchors one delay behind the stream and then advances with wall time", () => {
    const rc = new RenderClock(0.05);
    expect(rc.at(100.0, 1.0)).toBeCloseTo(0.95);
    expect(rc.at(100.016, 1.0)).toBeCloseTo(0.966);
    expect(rc.at(100.033, 1.05)).toBeCloseTo(0.983);
  });

  it("re-anchors after a large stream jump", () => {
    const rc = new RenderClock(0.05);
    rc.at(100.0, 1.0);
    expect(rc.at(100.016, 31.0)).toBeCloseTo(30.95);
  });

  it("resets cleanly", () => {
    const rc = new RenderClock(0.05);
    rc.at(100.0, 1.0);
    rc.reset();
    expect(rc.at(500.0, 2.0)).toBeCloseTo(1.95);
  });
});
