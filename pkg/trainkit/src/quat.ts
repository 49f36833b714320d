/**
 * Minimal scalar-first (w,x,y,z) quaternion math for the gyro de-bias loss:
 * Hamilton products, exp/log maps, and their Jacobians for backprop through
 * the integration chain. No normalization is applied - every factor in the
 * chain is an exponential, so products stay unit to machine precision and
 * the hand-written Jacobians remain exact.
 */

export type Quat = [number, number, number, number];
export type Vec3 = [number, number, number];

export function qmul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function qconj(q: Quat): Quat {
  return [q[0], -q[1], -q[2], -q[3]];
}

/** 4x4 matrix L with q (x) p = L(q) p, row-major. */
export function lmat(q: Quat): number[][] {
  const [w, x, y, z] = q;
  return [
    [w, -x, -y, -z],
    [x, w, -z, y],
    [y, z, w, -x],
    [z, -y, x, w],
  ];
}

/** 4x4 matrix R with q (x) p = R(p) q, row-major. */
export function rmat(p: Quat): number[][] {
  const [w, x, y, z] = p;
  return [
    [w, -x, -y, -z],
    [x, w, z, -y],
    [y, -z, w, x],
    [z, y, -x, w],
  ];
}

export function qexp(v: Vec3): Quat {
  const theta = Math.hypot(v[0], v[1], v[2]);
  const h = 0.5 * theta;
  if (theta < 1e-8) {
    const k = 0.5 - (theta * theta) / 48.0;
    return [1.0 - (h * h) / 2.0, v[0] * k, v[1] * k, v[2] * k];
  }
  const k = Math.sin(h) / theta;
  return [Math.cos(h), v[0] * k, v[1] * k, v[2] * k];
}

/** (4x3) Jacobian of qexp. */
export function qexpJac(v: Vec3): number[][] {
  const theta = Math.hypot(v[0], v[1], v[2]);
  const J = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  if (theta < 1e-8) {
    for (let i = 0; i < 3; i++) {
      J[0][i] = -0.25 * v[i];
      for (let j = 0; j < 3; j++) {
        J[i + 1][j] = (i === j ? 0.5 : 0.0) - (v[i] * v[j]) / 24.0;
      }
    }
    return J;
  }
  const h = 0.5 * theta;
  const k = Math.sin(h) / theta;
  const dk = (0.5 * theta * Math.cos(h) - Math.sin(h)) / (theta * theta);
  for (let i = 0; i < 3; i++) {
    J[0][i] = (-0.5 * Math.sin(h) * v[i]) / theta;
    for (let j = 0; j < 3; j++) {
      J[i + 1][j] = (i === j ? k : 0.0) + (dk * v[i] * v[j]) / theta;
    }
  }
  return J;
}

export function qlog(q: Quat): Vec3 {
  const w = q[0];
  const s = Math.hypot(q[1], q[2], q[3]);
  const theta = 2.0 * Math.atan2(s, w);
  if (s < 1e-8) {
    const k = w !== 0 ? 2.0 / w : 2.0;
    return [q[1] * k, q[2] * k, q[3] * k];
  }
  const k = theta / s;
  return [q[1] * k, q[2] * k, q[3] * k];
}

/** (3x4) Jacobian of qlog (scale-invariant atan2 extension). */
export function qlogJac(q: Quat): number[][] {
  const w = q[0];
  const vec = [q[1], q[2], q[3]];
  const s = Math.hypot(vec[0], vec[1], vec[2]);
  const n2 = w * w + s * s;
  const J = [
    [0, 0, 0, 0],
    [0, 0, 0, 0],
    [0, 0, 0, 0],
  ];
  if (s < 1e-8) {
    for (let i = 0; i < 3; i++) {
      J[i][0] = -2.0 * vec[i];
      J[i][i + 1] = 2.0 / w;
    }
    return J;
  }
  const theta = 2.0 * Math.atan2(s, w);
  const k = theta / s;
  const c = ((2.0 * w) / n2 - k) / (s * s);
  for (let i = 0; i < 3; i++) {
    J[i][0] = (-2.0 * vec[i]) / n2;
    for (let j = 0; j < 3; j++) {
      J[i][j + 1] = (i === j ? k : 0.0) + c * vec[i] * vec[j];
    }
  }
  return J;
}

/** Rotation matrix of a unit quaternion, row-major. */
export function qToMatrix(q: Quat): number[][] {
  const [w, x, y, z] = q;
  const xx = x * x, yy = y * y, zz = z * z;
  const wx = w * x, wy = w * y, wz = w * z;
  const xy = x * y, xz = x * z, yz = y * z;
  return [
    [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
    [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
    [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
  ];
}
