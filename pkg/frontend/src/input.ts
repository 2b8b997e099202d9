/**
 * Keyboard pedal model.
 *
 * Arrow-Up / W hold the throttle, Arrow-Down / S / Space hold the brake.
 * Pedals ramp toward the held target instead of stepping 0→1 so keyboard
 * driving is controllable; releasing a key ramps the pedal back out
 * faster than it ramps in (lifting off is quicker than flooring it).
 */

import { controlFrame, type ControlFrame } from "./protocol.js";

export const THROTTLE_KEYS = ["ArrowUp", "w", "W"];
export const BRAKE_KEYS = ["ArrowDown", "s", "S", " "];

const RAMP_IN_PER_S = 2.5; // 0 -> 1 in 0.4 s
const RAMP_OUT_PER_S = 5.0; // 1 -> 0 in 0.2 s

export class PedalState {
  throttle = 0;
  brake = 0;
  private throttleHeld = false;
  private brakeHeld = false;

  keyDown(key: string): boolean {
    if (THROTTLE_KEYS.includes(key)) {
      this.throttleHeld = true;
      return true;
    }
    if (BRAKE_KEYS.includes(key)) {
      this.brakeHeld = true;
      return true;
    }
    return false;
  }

  keyUp(key: string): boolean {
    if (THROTTLE_KEYS.includes(key)) {
      this.throttleHeld = false;
      return true;
    }
    if (BRAKE_KEYS.includes(key)) {
      this.brakeHeld = false;
      return true;
    }
    return false;
  }

  /** Advance the pedal ramps by `dt` seconds. */
  tick(dt: number): void {
    this.throttle = ramp(this.throttle, this.throttleHeld, dt);
    this.brake = ramp(this.brake, this.brakeHeld, dt);
  }

  /** Both keys released and both pedals fully out. */
  get idle(): boolean {
    return (
      !this.throttleHeld && !this.brakeHeld &&
      this.throttle === 0 && this.brake === 0
    );
  }

  frame(t: number): ControlFrame {
    return controlFrame(this.throttle, this.brake, t);
  }
}

function ramp(value: number, held: boolean, dt: number): number {
  if (held) return Math.min(1, value + RAMP_IN_PER_S * dt);
  return Math.max(0, value - RAMP_OUT_PER_S * dt);
}
