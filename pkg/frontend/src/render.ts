/**
 * Top-down canvas renderer.
 *
 * Draws the roundabout (ring carriageway, four approach/exit leg pairs)
 * from the geometry in the config frame, then the interpolated vehicles:
 * grey for model-driven human vehicles, blue for autonomous ones, and a
 * highlighted ego. World frame: meters, origin at the ring center,
 * +x right, +y up; canvas y is flipped.
 */

import type { Geometry } from "./protocol.js";
import type { RenderVehicle } from "./interpolate.js";

const COLORS: Record<string, string> = {
  HV: "#9aa0a6",
  AV: "#4f8ef7",
  EGO: "#f7b500",
};

export class Renderer {
  private scale = 1;

  constructor(
    private readonly ctx: CanvasRenderingContext2D,
    private readonly geometry: Geometry,
  ) {
    this.fit();
  }

  private fit(): void {
    const { approach_length, ring_radius } = this.geometry;
    const extent = 2 * (ring_radius + approach_length + 10);
    const size = Math.min(this.ctx.canvas.width, this.ctx.canvas.height);
    this.scale = size / extent;
  }

  /** World meters -> canvas pixels. */
  toCanvas(x: number, y: number): [number, number] {
    const cx = this.ctx.canvas.width / 2;
    const cy = this.ctx.canvas.height / 2;
    return [cx + x * this.scale, cy - y * this.scale];
  }

  draw(vehicles: RenderVehicle[], hud: string): void {
    const ctx = this.ctx;
    ctx.fillStyle = "#202124";
    ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    this.drawRoads();
    for (const v of vehicles) this.drawVehicle(v);
    ctx.fillStyle = "#e8eaed";
    ctx.font = "14px system-ui, sans-serif";
    ctx.textAlign = "left";
    ctx.fillText(hud, 12, 22);
  }

  private drawRoads(): void {
    const ctx = this.ctx;
    const g = this.geometry;
    const roadWidth = 2 * g.lane_offset * this.scale + 8;
    ctx.strokeStyle = "#3c4043";
    ctx.lineCap = "round";

    // Four leg axes at 0/90/180/270 degrees; approaches and exits are
    // offset either side of the axis, so one wide stroke covers both.
    for (let i = 0; i < 4; i++) {
      const angle = (i * Math.PI) / 2;
      const inner = g.ring_radius;
      const outer = g.ring_radius + g.approach_length;
      ctx.lineWidth = roadWidth;
      ctx.beginPath();
      ctx.moveTo(...this.toCanvas(inner * Math.cos(angle), inner * Math.sin(angle)));
      ctx.lineTo(...this.toCanvas(outer * Math.cos(angle), outer * Math.sin(angle)));
      ctx.stroke();
    }

    // Ring carriageway.
    const [cx, cy] = this.toCanvas(0, 0);
    ctx.lineWidth = roadWidth;
    ctx.beginPath();
    ctx.arc(cx, cy, g.ring_radius * this.scale, 0, 2 * Math.PI);
    ctx.stroke();

    // Center island.
    ctx.fillStyle = "#2d4a33";
    ctx.beginPath();
    ctx.arc(cx, cy, Math.max(2, (g.ring_radius - g.lane_offset) * this.scale - 6), 0, 2 * Math.PI);
    ctx.fill();
  }

  private drawVehicle(v: RenderVehicle): void {
    const ctx = this.ctx;
    const g = this.geometry;
    const len = g.vehicle_length * this.scale;
    const wid = 0.45 * len;
    const [px, py] = this.toCanvas(v.x, v.y);
    ctx.save();
    ctx.translate(px, py);
    ctx.rotate(-v.heading); // canvas y is flipped
    ctx.fillStyle = COLORS[v.kind] ?? "#ffffff";
    ctx.fillRect(-len / 2, -wid / 2, len, wid);
    if (v.ego) {
      ctx.strokeStyle = "#ffffff";
      ctx.lineWidth = 2;
      ctx.strokeRect(-len / 2 - 2, -wid / 2 - 2, len + 4, wid + 4);
    }
    ctx.restore();
  }
}
