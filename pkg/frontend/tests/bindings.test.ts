import { describe, expect, it } from "vitest";

import {
  actionDim, defaultBindings, slotOf, validateBindings,
} from "../src/bindings.js";

describe("action slot layout", () => {
  // [qL0 qL1 qL2, gripL, qR0 qR1 qR2, gripR, v, w] for J=3
  it("matches the gateway action vector", () => {
    expect(slotOf({ kind: "joint", arm: "left", index: 0 }, 3)).toBe(0);
    expect(slotOf({ kind: "gripper", arm: "left" }, 3)).toBe(3);
    expect(slotOf({ kind: "joint", arm: "right", index: 2 }, 3)).toBe(6);
    expect(slotOf({ kind: "gripper", arm: "right" }, 3)).toBe(7);
    expect(slotOf({ kind: "base_v" }, 3)).toBe(8);
    expect(slotOf({ kind: "base_w" }, 3)).toBe(9);
    expect(actionDim(3)).toBe(10);
  });
});

describe("binding validation", () => {
  it("default bindings are valid and cover both arms", () => {
    const b = defaultBindings();
    expect(() => validateBindings(b)).not.toThrow();
    const joints = b.axes.filter((a) => a.target.kind === "joint");
    expect(joints).toHaveLength(2 * 3 * 2); // 2 arms x 3 joints x 2 directions
  });

  it("rejects a key bound twice", () => {
    const b = defaultBindings();
    b.axes.push({ code: "KeyW", target: { kind: "base_w" }, scale: 1 });
    expect(() => validateBindings(b)).toThrow(/bound twice/);
  });

  it("rejects duplicate target+direction", () => {
    const b = defaultBindings();
    b.axes.push({ code: "KeyQ", target: { kind: "base_v" }, scale: 0.3 });
    expect(() => validateBindings(b)).toThrow(/duplicate binding/);
  });

  it("rejects non-finite scales", () => {
    const b = defaultBindings();
    b.axes[0].scale = Infinity;
    expect(() => validateBindings(b)).toThrow(/non-finite/);
  });
});
