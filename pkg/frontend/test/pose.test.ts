import { describe, expect, it } from "vitest";
import {
  applyDelta,
  IDENTITY_POSE,
  quatFromAxisAngle,
  quatMultiply,
  quatNormalize,
  rotationDelta,
  translationDelta,
  type Pose,
} from "../src/pose.js";

describe("quaternion math", () => {
  it("normalizes to unit length", () => {
    const q = quatNormalize([2, 0, 0, 0]);
    expect(q).toEqual([1, 0, 0, 0]);
    const r = quatNormalize([1, 1, 1, 1]);
    expect(Math.hypot(...r)).toBeCloseTo(1, 12);
  });

  it("rejects the zero quaternion", () => {
    expect(() => quatNormalize([0, 0, 0, 0])).toThrow();
  });

  it("axis-angle quaternions compose like rotations", () => {
    const a = quatFromAxisAngle([0, 0, 1], 90);
    const b = quatMultiply(a, a);
    const full = quatFromAxisAngle([0, 0, 1], 180);
    for (let i = 0; i < 4; i++) expect(b[i]).toBeCloseTo(full[i], 12);
  });
});

describe("pose edits", () => {
  it("translation of +10mm then -10mm returns the origin within 1e-9", () => {
    let p: Pose = { q: [...IDENTITY_POSE.q], t: [...IDENTITY_POSE.t] } as Pose;
    p = applyDelta(p, translationDelta([10, 0, 0]));
    p = applyDelta(p, translationDelta([-10, 0, 0]));
    for (let i = 0; i < 3; i++) expect(Math.abs(p.t[i])).toBeLessThan(1e-9);
  });

  it("rotation by +30 deg then -30 deg returns identity within 1e-9", () => {
    let p: Pose = { q: [...IDENTITY_POSE.q], t: [...IDENTITY_POSE.t] } as Pose;
    p = applyDelta(p, rotationDelta([1, 2, 3], 30));
    p = applyDelta(p, rotationDelta([1, 2, 3], -30));
    expect(Math.abs(p.q[0] - 1)).toBeLessThan(1e-9);
    for (let i = 1; i < 4; i++) expect(Math.abs(p.q[i])).toBeLessThan(1e-9);
  });

  it("stays unit-norm after thousands of mixed nudges", () => {
    let p: Pose = { q: [...IDENTITY_POSE.q], t: [...IDENTITY_POSE.t] } as Pose;
    for (let i = 0; i < 5000; i++) {
      p = applyDelta(p, rotationDelta([(i % 3) + 1, 1, 0.5], 7.3));
      p = applyDelta(p, translationDelta([0.1, -0.2, 0.05]));
    }
    expect(Math.abs(Math.hypot(...p.q) - 1)).toBeLessThan(1e-12);
  });
});
