/**
 * Snapshot interpolation for smooth rendering.
 *
 * The server pushes snapshots at ~20 Hz while the canvas renders at
 * 60 Hz. Vehicle positions are interpolated linearly between the two
 * most recent snapshots on a slightly delayed render clock. A positional
 * jump larger than one vehicle length between consecutive snapshots
 * (vehicle respawn, scenario switch) must never be smeared across the
 * screen — such vehicles snap to their new position instead.
 */

import type { SnapshotFrame, VehicleDot } from "./protocol.js";

export interface RenderVehicle extends VehicleDot {
  /** true when this vehicle teleported and was snapped, not interpolated */
  snapped: boolean;
}

function lerpAngle(a: number, b: number, t: number): number {
  let d = b - a;
  while (d > Math.PI) d -= 2 * Math.PI;
  while (d < -Math.PI) d += 2 * Math.PI;
  return a + d * t;
}

export class SnapshotBuffer {
  private prev: SnapshotFrame | null = null;
  private next: SnapshotFrame | null = null;

  constructor(private readonly vehicleLength: number) {}

  get latest(): SnapshotFrame | null {
    return this.next;
  }

  push(snap: SnapshotFrame): void {
    // Out-of-order frames are impossible on a websocket (ordered
    // transport) but a reconnect could replay an older clock; ignore it.
    if (this.next !== null && snap.sim_clock <= this.next.sim_clock) return;
    this.prev = this.next;
    this.next = snap;
  }

  /**
   * Interpolated vehicle states at simulation time `clock`, clamped to
   * the span of the buffered pair. Vehicles present in only one frame
   * appear at that frame's position (no extrapolation from nothing).
   */
  sample(clock: number): RenderVehicle[] {
    if (this.next === null) return [];
    if (this.prev === null) {
      return this.next.vehicles.map((v) => ({ ...v, snapped: true }));
    }
    const a = this.prev;
    const b = this.next;
    const span = b.sim_clock - a.sim_clock;
    const t =
      span <= 0
        ? 1
        : Math.min(1, Math.max(0, (clock - a.sim_clock) / span));
    const before = new Map(a.vehicles.map((v) => [v.id, v]));
    return b.vehicles.map((v) => {
      const p = before.get(v.id);
      if (p === undefined) return { ...v, snapped: true };
      const jump = Math.hypot(v.x - p.x, v.y - p.y);
      if (jump > this.vehicleLength) {
        // Teleport (respawn / new scenario): never interpolate across it.
        return { ...v, snapped: true };
      }
      return {
        ...v,
        x: p.x + (v.x - p.x) * t,
        y: p.y + (v.y - p.y) * t,
        heading: lerpAngle(p.heading, v.heading, t),
        speed: p.speed + (v.speed - p.speed) * t,
        snapped: false,
      };
    });
  }

  /**
   * Largest frame-to-frame displacement a renderer sampling this buffer
   * can produce for `vehicle` between clocks `c0 < c1` — by construction
   * bounded by the real inter-snapshot movement, itself at most one
   * vehicle length for interpolated vehicles.
   */
  maxStep(c0: number, c1: number): number {
    const v0 = new Map(this.sample(c0).map((v) => [v.id, v]));
    let worst = 0;
    for (const v of this.sample(c1)) {
      const p = v0.get(v.id);
      if (p === undefined || v.snapped) continue;
      worst = Math.max(worst, Math.hypot(v.x - p.x, v.y - p.y));
    }
    return worst;
  }

  reset(): void {
    this.prev = null;
    this.next = null;
  }
}

/**
 * Maps wall-clock time to the delayed render clock. Rendering runs one
 * snapshot interval behind the freshest data so there is always a pair
 * to interpolate between; drift is re-anchored when the buffer runs dry
 * or jumps.
 */
export class RenderClock {
  private offset: number | null = null;

  constructor(private readonly delay: number) {}

  /** Render-time sim clock for wall time `wallSeconds`. */
  at(wallSeconds: number, latestSimClock: number): number {
    const target = latestSimClock - this.delay;
    if (this.offset === null) {
      this.offset = target - wallSeconds;
    }
    let clock = wallSeconds + this.offset;
    // Re-anchor if we drifted more than one delay from the stream.
    if (Math.abs(clock - target) > this.delay) {
      this.offset = target - wallSeconds;
      clock = target;
    }
    return clock;
  }

  reset(): void {
    this.offset = null;
  }
}
