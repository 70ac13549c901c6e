// Client-side mirror of the server session state machine.
//
// The server handles one request at a time, so its transient detecting and
// executing states never see client traffic; the states a client can observe
// itself in are idle and demo-recording. Gating every outgoing message on
// this mirror is what keeps the UI from ever drawing a bad-state error.

import { DragRecorder, MIN_DEMO_WAYPOINTS, UiGripperState, gripperPose,
         initialGripper } from "./gripper.js";
import { Detection, Envelope } from "./protocol.js";

export type SessionState = "idle" | "demo-recording";

export const LEGAL_MESSAGES: Record<SessionState, ReadonlySet<string>> = {
  idle: new Set(["HELLO", "INITIALIZE", "SEARCH", "GET_FRAME", "DEMO_START",
                 "BACK", "MOVE", "SIMULATE_ALL", "EXECUTE"]),
  "demo-recording": new Set(["DEMO_WAYPOINT", "DEMO_END", "BACK", "GET_FRAME"]),
};

export interface LocalError {
  action: string;
  reason: string;
}

/**
 * Pure interaction core: panel clicks and drag events in, protocol envelopes
 * out. DOM and WebSocket stay in main.ts so this logic runs headless.
 */
export class UiController {
  state: SessionState = "idle";
  gripper: UiGripperState = initialGripper();
  detections: Detection[] = [];
  selectedObject: number | null = null;
  armedCategory: string | null = null;
  localErrors: LocalError[] = [];
  outbox: Envelope[] = [];
  private nextSeq = 1;
  private recorder: DragRecorder | null = null;
  private dragging = false;

  // -- send gate --------------------------------------------------------------

  private send(type: string, body: Record<string, unknown> = {}): Envelope | null {
    if (!LEGAL_MESSAGES[this.state].has(type)) {
      this.localErrors.push({ action: type, reason: `illegal in ${this.state}` });
      return null;
    }
    const msg = { type, seq: this.nextSeq++, body };
    this.outbox.push(msg);
    return msg;
  }

  takeOutbox(): Envelope[] {
    const out = this.outbox;
    this.outbox = [];
    return out;
  }

  // -- panel buttons ----------------------------------------------------------

  hello(): void {
    this.send("HELLO");
  }

  clickInitialize(): void {
    this.send("INITIALIZE");
  }

  clickSearch(): void {
    this.send("SEARCH");
  }

  clickGetFrame(): void {
    this.send("GET_FRAME");
  }

  clickExecute(): void {
    if (this.selectedObject === null) {
      this.localErrors.push({ action: "EXECUTE", reason: "no object selected" });
      return;
    }
    this.send("EXECUTE", { object: this.selectedObject });
  }

  clickBack(): void {
    // cancels the recorded virtual trajectory and any demo in progress
    if (this.send("BACK")) {
      this.state = "idle";
      this.armedCategory = null;
      this.recorder = null;
      this.dragging = false;
    }
  }

  clickMove(): void {
    this.send("MOVE", { pose: gripperPose(this.gripper) });
  }

  clickSimulateAll(): void {
    this.send("SIMULATE_ALL");
  }

  toggleFollowMode(): void {
    this.gripper.followMode = this.gripper.followMode === "position-only"
      ? "position-and-orientation" : "position-only";
  }

  toggleOpen(): void {
    this.gripper.open = !this.gripper.open;
  }

  armDemo(category: string): void {
    if (this.state !== "idle") {
      this.localErrors.push({ action: "DEMO_ARM", reason: "demo already recording" });
      return;
    }
    this.armedCategory = category.trim() || null;
    if (this.armedCategory === null) {
      this.localErrors.push({ action: "DEMO_ARM", reason: "category required" });
    }
  }

  // -- dragging ---------------------------------------------------------------

  dragStart(): void {
    this.dragging = true;
    if (this.armedCategory !== null && this.state === "idle") {
      this.recorder = new DragRecorder();
      this.recorder.add(gripperPose(this.gripper));
    }
  }

  dragTo(position: [number, number, number], yaw: number): void {
    if (!this.dragging) {
      return;
    }
    this.gripper.position = position;
    if (this.gripper.followMode === "position-and-orientation") {
      this.gripper.yaw = yaw;
    }
    this.recorder?.add(gripperPose(this.gripper));
  }

  dragEnd(): void {
    if (!this.dragging) {
      return;
    }
    this.dragging = false;
    if (!this.recorder || this.armedCategory === null) {
      return;
    }
    const waypoints = this.recorder.finish();
    this.recorder = null;
    const category = this.armedCategory;
    this.armedCategory = null;
    if (waypoints === null || waypoints.length < MIN_DEMO_WAYPOINTS) {
      this.localErrors.push({ action: "DEMO_END", reason: "drag too short, nothing sent" });
      return;
    }
    if (this.send("DEMO_START", { category }) === null) {
      return;
    }
    this.state = "demo-recording";
    for (const wp of waypoints.slice(0, -1)) {
      this.send("DEMO_WAYPOINT", { pose: wp, gripper_open: this.gripper.open });
    }
    this.send("DEMO_END", { grasp_pose: waypoints[waypoints.length - 1] });
    this.state = "idle";
  }

  // -- inbound ------------------------------------------------------------------

  applyReply(msg: Envelope): void {
    if (msg.type === "DETECTIONS") {
      this.detections = (msg.body as { objects: Detection[] }).objects;
      if (this.selectedObject === null && this.detections.length > 0) {
        this.selectedObject = this.detections[0].id;
      }
    }
  }

  selectObject(id: number): void {
    this.selectedObject = id;
  }
}
