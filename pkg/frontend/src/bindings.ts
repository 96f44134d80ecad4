// Keyboard-to-control bindings: the software analog of the pedals and
// master arms. Held keys contribute a scaled delta to one action slot;
// mark/record keys are edge-triggered one-shots.

export type AxisTarget =
  | { kind: "base_v" }
  | { kind: "base_w" }
  | { kind: "joint"; arm: "left" | "right"; index: number }
  | { kind: "gripper"; arm: "left" | "right" };

export type OneShotTarget = "stage_mark" | "record_toggle";

export interface AxisBinding {
  code: string;        // KeyboardEvent.code
  target: AxisTarget;
  scale: number;       // contribution while held (finite, nonzero)
}

export interface OneShotBinding {
  code: string;
  target: OneShotTarget;
}

export interface ControlBindings {
  axes: AxisBinding[];
  oneShots: OneShotBinding[];
  jointsPerArm: number;
}

function targetKey(t: AxisTarget): string {
  switch (t.kind) {
    case "base_v": return "base_v";
    case "base_w": return "base_w";
    case "joint": return `joint_${t.arm}_${t.index}`;
    case "gripper": return `gripper_${t.arm}`;
  }
}

/** Action vector layout: [qL..., gripL, qR..., gripR, v, w]. */
export function slotOf(t: AxisTarget, jointsPerArm: number): number {
  const J = jointsPerArm;
  switch (t.kind) {
    case "joint":
      return (t.arm === "left" ? 0 : J + 1) + t.index;
    case "gripper":
      return t.arm === "left" ? J : 2 * J + 1;
    case "base_v":
      return 2 * J + 2;
    case "base_w":
      return 2 * J + 3;
  }
}

export function actionDim(jointsPerArm: number): number {
  return 2 * jointsPerArm + 2 + 2;
}

export function validateBindings(b: ControlBindings): void {
  const seenCodes = new Set<string>();
  const seenTargets = new Set<string>();
  for (const axis of b.axes) {
    if (!Number.isFinite(axis.scale) || axis.scale === 0) {
      throw new Error(`non-finite or zero scale on ${axis.code}`);
    }
    if (axis.target.kind === "joint" &&
        (axis.target.index < 0 || axis.target.index >= b.jointsPerArm)) {
      throw new Error(`joint index out of range on ${axis.code}`);
    }
    if (seenCodes.has(axis.code)) throw new Error(`key ${axis.code} bound twice`);
    seenCodes.add(axis.code);
    // two keys per axis target (+/-) are fine; the same (target, sign) twice is not
    const tk = `${targetKey(axis.target)}:${Math.sign(axis.scale)}`;
    if (seenTargets.has(tk)) throw new Error(`duplicate binding for ${tk}`);
    seenTargets.add(tk);
  }
  for (const shot of b.oneShots) {
    if (seenCodes.has(shot.code)) throw new Error(`key ${shot.code} bound twice`);
    seenCodes.add(shot.code);
  }
}

export function defaultBindings(jointsPerArm = 3): ControlBindings {
  const axes: AxisBinding[] = [
    { code: "KeyW", target: { kind: "base_v" }, scale: 0.15 },
    { code: "KeyS", target: { kind: "base_v" }, scale: -0.15 },
    { code: "KeyA", target: { kind: "base_w" }, scale: 2.0 },
    { code: "KeyD", target: { kind: "base_w" }, scale: -2.0 },
  ];
  const leftKeys: [string, string][] = [["KeyR", "KeyF"], ["KeyT", "KeyG"], ["KeyY", "KeyH"]];
  const rightKeys: [string, string][] = [["KeyU", "KeyJ"], ["KeyI", "KeyK"], ["KeyO", "KeyL"]];
  for (let j = 0; j < jointsPerArm; j++) {
    axes.push({ code: leftKeys[j][0], target: { kind: "joint", arm: "left", index: j }, scale: 0.15 });
    axes.push({ code: leftKeys[j][1], target: { kind: "joint", arm: "left", index: j }, scale: -0.15 });
    axes.push({ code: rightKeys[j][0], target: { kind: "joint", arm: "right", index: j }, scale: 0.15 });
    axes.push({ code: rightKeys[j][1], target: { kind: "joint", arm: "right", index: j }, scale: -0.15 });
  }
  axes.push({ code: "KeyZ", target: { kind: "gripper", arm: "left" }, scale: -0.25 });
  axes.push({ code: "KeyX", target: { kind: "gripper", arm: "left" }, scale: 0.25 });
  axes.push({ code: "KeyN", target: { kind: "gripper", arm: "right" }, scale: -0.25 });
  axes.push({ code: "KeyM", target: { kind: "gripper", arm: "right" }, scale: 0.25 });
  const bindings: ControlBindings = {
    axes,
    oneShots: [
      { code: "Space", target: "stage_mark" },
      { code: "Enter", target: "record_toggle" },
    ],
    jointsPerArm,
  };
  validateBindings(bindings);
  return bindings;
}
