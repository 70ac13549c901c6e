// Virtual gripper state and demonstration drag recording.

import { IDENTITY_QUAT, Quat, Vec3, dist3, quatFromYaw } from "./math.js";
import { PoseJson } from "./protocol.js";

export type FollowMode = "position-only" | "position-and-orientation";

export interface UiGripperState {
  position: Vec3;
  yaw: number;
  followMode: FollowMode;
  open: boolean;
}

export const MAX_DEMO_WAYPOINTS = 9;
export const MIN_DEMO_WAYPOINTS = 2;

export function initialGripper(): UiGripperState {
  return { position: [0, 0, 0.25], yaw: 0, followMode: "position-and-orientation", open: true };
}

export function gripperPose(g: UiGripperState): PoseJson {
  // In position-only mode the orientation stays fixed top-down.
  const q: Quat = g.followMode === "position-only" ? IDENTITY_QUAT : quatFromYaw(g.yaw);
  return { position: [...g.position], orientation: [...q] };
}

/**
 * Accumulates gripper poses while the operator drags (sampled at 10 Hz or
 * better by the caller) and decimates the path to at most nine waypoints at
 * uniform arc-length spacing, endpoints kept exactly.
 */
export class DragRecorder {
  private samples: PoseJson[] = [];

  add(pose: PoseJson): void {
    this.samples.push(pose);
  }

  get count(): number {
    return this.samples.length;
  }

  /** Waypoints for the demonstration, or null when the drag was too short. */
  finish(): PoseJson[] | null {
    const out = decimate(this.samples, MAX_DEMO_WAYPOINTS);
    this.samples = [];
    return out;
  }
}

export function decimate(samples: PoseJson[], limit: number): PoseJson[] | null {
  const path = dedupe(samples);
  if (path.length < MIN_DEMO_WAYPOINTS) {
    return null;
  }
  if (path.length <= limit) {
    return path;
  }
  const cumulative: number[] = [0];
  for (let i = 1; i < path.length; i++) {
    cumulative.push(cumulative[i - 1] + dist3(path[i - 1].position, path[i].position));
  }
  const total = cumulative[cumulative.length - 1];
  const indices = new Set<number>([0, path.length - 1]);
  for (let k = 1; k < limit - 1; k++) {
    const target = (total * k) / (limit - 1);
    let best = 1;
    for (let i = 1; i < path.length - 1; i++) {
      if (Math.abs(cumulative[i] - target) < Math.abs(cumulative[best] - target)) {
        best = i;
      }
    }
    indices.add(best);
  }
  return [...indices].sort((a, b) => a - b).map((i) => path[i]);
}

function dedupe(samples: PoseJson[]): PoseJson[] {
  const out: PoseJson[] = [];
  for (const s of samples) {
    const prev = out[out.length - 1];
    if (!prev || dist3(prev.position, s.position) > 1e-9) {
      out.push(s);
    }
  }
  return out;
}
