// Rendering math kept DOM-free so it is testable: depth colormap, mask
// tinting, image/world mapping, and the orbitable 3-D point projection.

import { Quat, Vec3, quatConjugate, quatRotate } from "./math.js";
import { Intrinsics, MaskRle, PoseJson, rleToBits } from "./protocol.js";

export const MASK_COLORS: [number, number, number][] = [
  [66, 135, 245], [245, 130, 48], [60, 180, 75], [230, 25, 75],
  [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60],
];

/** Grayscale depth image: nearer surfaces brighter, invalid pixels black. */
export function depthToRgba(depth: Float32Array, width: number, height: number): Uint8ClampedArray {
  if (depth.length !== width * height) {
    throw new Error("depth buffer does not match its dimensions");
  }
  let lo = Infinity;
  let hi = -Infinity;
  for (const d of depth) {
    if (d > 0) {
      lo = Math.min(lo, d);
      hi = Math.max(hi, d);
    }
  }
  const span = hi > lo ? hi - lo : 1;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < depth.length; i++) {
    const d = depth[i];
    const value = d > 0 ? 235 - Math.round(((d - lo) / span) * 180) : 0;
    out[i * 4] = value;
    out[i * 4 + 1] = value;
    out[i * 4 + 2] = value;
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Blend a mask color into an RGBA buffer in place; indices stay pixel-aligned. */
export function tintMask(rgba: Uint8ClampedArray, mask: MaskRle,
                         color: [number, number, number], alpha = 0.45): void {
  if (rgba.length !== mask.width * mask.height * 4) {
    throw new Error("overlay buffer does not match the mask dimensions");
  }
  const bits = rleToBits(mask);
  for (let i = 0; i < bits.length; i++) {
    if (bits[i]) {
      for (let c = 0; c < 3; c++) {
        rgba[i * 4 + c] = Math.round(rgba[i * 4 + c] * (1 - alpha) + color[c] * alpha);
      }
    }
  }
}

// --- camera mapping -----------------------------------------------------------

export function worldToPixel(p: Vec3, k: Intrinsics, cameraPose: PoseJson):
    [number, number] | null {
  const q = cameraPose.orientation as Quat;
  const t = cameraPose.position as Vec3;
  const rel: Vec3 = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
  const cam = quatRotate(quatConjugate(q), rel);
  if (cam[2] <= 1e-9) {
    return null;
  }
  return [k.cx + (cam[0] / cam[2]) * k.fx, k.cy + (cam[1] / cam[2]) * k.fy];
}

export function pixelToWorld(u: number, v: number, depth: number, k: Intrinsics,
                             cameraPose: PoseJson): Vec3 {
  const cam: Vec3 = [((u - k.cx) * depth) / k.fx, ((v - k.cy) * depth) / k.fy, depth];
  const q = cameraPose.orientation as Quat;
  const t = cameraPose.position as Vec3;
  const rotated = quatRotate(q, cam);
  return [rotated[0] + t[0], rotated[1] + t[1], rotated[2] + t[2]];
}

/** World point on the table plane (z = 0) under an image pixel. */
export function pixelToPlane(u: number, v: number, k: Intrinsics,
                             cameraPose: PoseJson): Vec3 | null {
  const q = cameraPose.orientation as Quat;
  const t = cameraPose.position as Vec3;
  const dir = quatRotate(q, [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1]);
  if (Math.abs(dir[2]) < 1e-12) {
    return null;
  }
  const s = -t[2] / dir[2];
  if (s <= 0) {
    return null;
  }
  return [t[0] + s * dir[0], t[1] + s * dir[1], 0];
}

// --- orbit view -----------------------------------------------------------------

export interface OrbitCamera {
  yaw: number;
  pitch: number;
  distance: number;
  center: Vec3;
}

/** Perspective-project world points for the optional 3-D view. Returns
 * screen-space [x, y, depth] per point; callers cull depth <= 0. */
export function orbitProject(points: Float32Array, cam: OrbitCamera,
                             viewWidth: number, viewHeight: number): Float32Array {
  const cy = Math.cos(cam.yaw);
  const sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch);
  const sp = Math.sin(cam.pitch);
  const f = 0.8 * Math.min(viewWidth, viewHeight);
  const out = new Float32Array(points.length);
  for (let i = 0; i < points.length; i += 3) {
    const x = points[i] - cam.center[0];
    const y = points[i + 1] - cam.center[1];
    const z = points[i + 2] - cam.center[2];
    const rx = cy * x + sy * y;
    const ry = -sy * cp * x + cy * cp * y + sp * z;
    const rz = sy * sp * x - cy * sp * y + cp * z;
    const depth = cam.distance - ry;
    out[i] = viewWidth / 2 + (rx / depth) * f;
    out[i + 1] = viewHeight / 2 - (rz / depth) * f;
    out[i + 2] = depth;
  }
  return out;
}
