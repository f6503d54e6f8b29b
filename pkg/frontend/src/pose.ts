/** Quaternion + pose math for probe steering. Quaternions are [w, x, y, z]. */

import type { Quat, Vec3 } from "./protocol.js";

export interface Pose {
  q: Quat;
  t: Vec3;
}

export const IDENTITY_POSE: Pose = { q: [1, 0, 0, 0], t: [0, 0, 0] };

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n === 0) throw new Error("cannot normalize zero quaternion");
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angleDeg: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0) throw new Error("zero rotation axis");
  const half = (angleDeg * Math.PI) / 360;
  const s = Math.sin(half) / n;
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

export interface PoseDelta {
  /** rotation applied on the left, world frame */
  dq?: Quat;
  /** translation added in world mm */
  dt?: Vec3;
}

/** Apply a nudge and renormalize so drift never accumulates. */
export function applyDelta(pose: Pose, delta: PoseDelta): Pose {
  const q = delta.dq ? quatNormalize(quatMultiply(delta.dq, pose.q)) : pose.q;
  const t: Vec3 = delta.dt
    ? [pose.t[0] + delta.dt[0], pose.t[1] + delta.dt[1], pose.t[2] + delta.dt[2]]
    : pose.t;
  return { q: [...q] as Quat, t };
}

export function rotationDelta(axis: Vec3, angleDeg: number): PoseDelta {
  return { dq: quatFromAxisAngle(axis, angleDeg) };
}

export function translationDelta(dt: Vec3): PoseDelta {
  return { dt };
}

export function poseEquals(a: Pose, b: Pose, tol = 0): boolean {
  for (let i = 0; i < 4; i++) if (Math.abs(a.q[i] - b.q[i]) > tol) return false;
  for (let i = 0; i < 3; i++) if (Math.abs(a.t[i] - b.t[i]) > tol) return false;
  return true;
}
