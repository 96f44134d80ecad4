// Input sampling: held keys fold into one action vector per sample tick;
// one-shot keys fire exactly once per physical press (key repeat ignored).

import {
  ControlBindings, OneShotTarget, actionDim, slotOf,
} from "./bindings.js";

export class InputSampler {
  private held = new Set<string>();
  private pendingShots: OneShotTarget[] = [];
  private axisByCode = new Map<string, { slot: number; scale: number }>();
  private shotByCode = new Map<string, OneShotTarget>();
  readonly dim: number;

  constructor(readonly bindings: ControlBindings) {
    this.dim = actionDim(bindings.jointsPerArm);
    for (const a of bindings.axes) {
      this.axisByCode.set(a.code, {
        slot: slotOf(a.target, bindings.jointsPerArm),
        scale: a.scale,
      });
    }
    for (const s of bindings.oneShots) this.shotByCode.set(s.code, s.target);
  }

  /** Returns true when the key is bound (callers preventDefault). */
  keyDown(code: string, repeat = false): boolean {
    if (this.axisByCode.has(code)) {
      this.held.add(code);
      return true;
    }
    const shot = this.shotByCode.get(code);
    if (shot !== undefined) {
      if (!repeat) this.pendingShots.push(shot);  // edge-triggered
      return true;
    }
    return false;
  }

  keyUp(code: string): boolean {
    return this.held.delete(code) || this.shotByCode.has(code);
  }

  releaseAll(): void {
    this.held.clear();
  }

  /** One action vector per sample; all-zero when nothing is held. */
  sampleAction(): number[] {
    const action = new Array<number>(this.dim).fill(0);
    for (const code of this.held) {
      const axis = this.axisByCode.get(code);
      if (axis) action[axis.slot] += axis.scale;
    }
    return action;
  }

  /** Drain one-shot events queued since the last sample. */
  takeOneShots(): OneShotTarget[] {
    const out = this.pendingShots;
    this.pendingShots = [];
    return out;
  }
}
