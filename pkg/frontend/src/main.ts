// Browser entry point: WebSocket transport, canvas rendering, panel wiring.

import { UiGripperState } from "./gripper.js";
import { Vec3, quatRotate, Quat } from "./math.js";
import { Envelope, Intrinsics, MaskRle, PoseJson, b64ToFloat32,
         decodeEnvelope, encodeEnvelope } from "./protocol.js";
import { UiController } from "./state.js";
import { MASK_COLORS, OrbitCamera, depthToRgba, orbitProject, pixelToPlane,
         pixelToWorld, tintMask, worldToPixel } from "./view.js";

const controller = new UiController();

interface FramePayload {
  intrinsics: Intrinsics;
  camera_pose: PoseJson;
  depth_b64: string;
  masks: MaskRle[];
}

let frame: { k: Intrinsics; cameraPose: PoseJson; depth: Float32Array;
             masks: MaskRle[] } | null = null;
let baseImage: ImageData | null = null;
let tracePoints: Vec3[] = [];
let cloud: Float32Array | null = null;
const orbit: OrbitCamera = { yaw: 0.6, pitch: 0.9, distance: 0.9, center: [0, 0, 0.05] };

const sceneCanvas = document.getElementById("scene") as HTMLCanvasElement;
const orbitCanvas = document.getElementById("orbit") as HTMLCanvasElement;
const statusEl = document.getElementById("status") as HTMLElement;
const logEl = document.getElementById("log") as HTMLElement;
const detectionsEl = document.getElementById("detections") as HTMLElement;
const heightSlider = document.getElementById("height") as HTMLInputElement;

const ws = new WebSocket(`ws://${location.host}/session`);
ws.binaryType = "arraybuffer";

function flush(): void {
  for (const msg of controller.takeOutbox()) {
    ws.send(encodeEnvelope(msg.type, msg.seq, msg.body));
  }
  renderPanel();
}

ws.onopen = () => {
  status("connected");
  controller.hello();
  controller.clickGetFrame();
  flush();
};

ws.onclose = () => status("disconnected");
ws.onerror = () => status("socket error");

ws.onmessage = (event: MessageEvent) => {
  let msg: Envelope;
  try {
    msg = decodeEnvelope(event.data as ArrayBuffer);
  } catch (err) {
    log(`bad frame: ${err}`);
    return;
  }
  controller.applyReply(msg);
  switch (msg.type) {
    case "HELLO_ACK":
      status(`session open (protocol ${(msg.body as { version: string }).version})`);
      break;
    case "BUSY":
      status("server busy with another operator");
      break;
    case "READY":
      tracePoints = [];
      controller.clickGetFrame();
      flush();
      break;
    case "FRAME":
      onFrame(msg.body as unknown as FramePayload);
      break;
    case "DETECTIONS":
      renderDetections();
      break;
    case "TRACE": {
      const pose = (msg.body as { pose: PoseJson }).pose;
      tracePoints.push(pose.position);
      break;
    }
    case "TRACE_END":
      break;
    case "RESULT": {
      const body = msg.body as { outcome: string; object: number;
                                 attempt_rate: number; provenance: string };
      toast(`object ${body.object}: ${body.outcome} (${body.provenance}), ` +
            `attempt rate ${(100 * body.attempt_rate).toFixed(1)}%`);
      break;
    }
    case "DEMO_ACK": {
      const body = msg.body as { record: number | null; waypoints: number };
      if (body.record !== null) {
        toast(`demonstration #${body.record} stored (${body.waypoints} waypoints)`);
        controller.clickSearch();
        flush();
      }
      break;
    }
    case "ERROR": {
      const body = msg.body as { code: string; message: string };
      log(`server error [${body.code}]: ${body.message}`);
      break;
    }
    case "CLEARED":
      tracePoints = [];
      toast("trajectory and pending demo cleared");
      break;
  }
  drawScene();
  drawOrbit();
};

function onFrame(payload: FramePayload): void {
  const k = payload.intrinsics;
  frame = {
    k,
    cameraPose: payload.camera_pose,
    depth: b64ToFloat32(payload.depth_b64),
    masks: payload.masks,
  };
  sceneCanvas.width = k.width;
  sceneCanvas.height = k.height;
  const rgba = depthToRgba(frame.depth, k.width, k.height);
  frame.masks.forEach((mask, i) => tintMask(rgba, mask, MASK_COLORS[i % MASK_COLORS.length]));
  baseImage = new ImageData(k.width, k.height);
  baseImage.data.set(rgba);
  cloud = sampleCloud(frame.depth, k, payload.camera_pose);
}

function sampleCloud(depth: Float32Array, k: Intrinsics, cameraPose: PoseJson): Float32Array {
  const step = 6;
  const pts: number[] = [];
  for (let v = 0; v < k.height; v += step) {
    for (let u = 0; u < k.width; u += step) {
      const d = depth[v * k.width + u];
      if (d > 0) {
        pts.push(...pixelToWorld(u, v, d, k, cameraPose));
      }
    }
  }
  return new Float32Array(pts);
}

// --- 2-D scene canvas -------------------------------------------------------

function drawScene(): void {
  if (!frame || !baseImage) {
    return;
  }
  const ctx = sceneCanvas.getContext("2d")!;
  ctx.putImageData(baseImage, 0, 0);

  ctx.strokeStyle = "rgba(255, 235, 59, 0.9)";
  ctx.lineWidth = 2;
  ctx.beginPath();
  tracePoints.forEach((p, i) => {
    const px = worldToPixel(p, frame!.k, frame!.cameraPose);
    if (px) {
      if (i === 0) {
        ctx.moveTo(px[0], px[1]);
      } else {
        ctx.lineTo(px[0], px[1]);
      }
    }
  });
  ctx.stroke();

  for (const det of controller.detections) {
    const [u0, v0, u1, v1] = det.bbox;
    ctx.strokeStyle = det.id === controller.selectedObject ? "#ffeb3b" : "#eeeeee";
    ctx.lineWidth = det.id === controller.selectedObject ? 2 : 1;
    ctx.strokeRect(u0, v0, u1 - u0, v1 - v0);
    const sim = det.similarity === null ? "-" : det.similarity.toFixed(2);
    ctx.fillStyle = "#ffffff";
    ctx.font = "12px sans-serif";
    ctx.fillText(`#${det.id} ${det.category ?? "?"} i=${sim} ${det.provenance ?? "none"}`,
                 u0 + 2, Math.max(10, v0 - 4));
  }

  drawGripper(ctx, controller.gripper);
}

function drawGripper(ctx: CanvasRenderingContext2D, g: UiGripperState): void {
  if (!frame) {
    return;
  }
  const center = worldToPixel(g.position, frame.k, frame.cameraPose);
  if (!center) {
    return;
  }
  const jawDir = quatRotate(gripQuat(g), [1, 0, 0]);
  const tip: Vec3 = [g.position[0] + 0.045 * jawDir[0],
                     g.position[1] + 0.045 * jawDir[1], g.position[2]];
  const tipPx = worldToPixel(tip, frame.k, frame.cameraPose);
  ctx.strokeStyle = g.open ? "#4caf50" : "#f44336";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(center[0], center[1], 10, 0, 2 * Math.PI);
  ctx.stroke();
  if (tipPx) {
    ctx.beginPath();
    ctx.moveTo(2 * center[0] - tipPx[0], 2 * center[1] - tipPx[1]);
    ctx.lineTo(tipPx[0], tipPx[1]);
    ctx.stroke();
    ctx.fillStyle = "#ffeb3b";
    ctx.beginPath();
    ctx.arc(tipPx[0], tipPx[1], 4, 0, 2 * Math.PI);  // rotation handle
    ctx.fill();
  }
}

function gripQuat(g: UiGripperState): Quat {
  return g.followMode === "position-only" ? [0, 0, 0, 1]
    : [0, 0, Math.sin(g.yaw / 2), Math.cos(g.yaw / 2)];
}

// --- drag handling ------------------------------------------------------------

let rotating = false;

sceneCanvas.addEventListener("mousedown", (e) => {
  if (!frame) {
    return;
  }
  const [u, v] = canvasPixel(e);
  rotating = e.shiftKey;
  if (!rotating) {
    const hit = controller.detections.find((d) => {
      const [u0, v0, u1, v1] = d.bbox;
      return u >= u0 && u <= u1 && v >= v0 && v <= v1;
    });
    if (hit) {
      controller.selectObject(hit.id);
    }
  }
  controller.dragStart();
  drawScene();
});

sceneCanvas.addEventListener("mousemove", (e) => {
  if (!frame || e.buttons === 0) {
    return;
  }
  const [u, v] = canvasPixel(e);
  if (rotating) {
    const center = worldToPixel(controller.gripper.position, frame.k, frame.cameraPose);
    if (center) {
      controller.dragTo(controller.gripper.position,
                        Math.atan2(-(v - center[1]), u - center[0]));
    }
  } else {
    const world = pixelToPlane(u, v, frame.k, frame.cameraPose);
    if (world) {
      controller.dragTo([world[0], world[1], Number(heightSlider.value)],
                        controller.gripper.yaw);
    }
  }
  drawScene();
});

window.addEventListener("mouseup", () => {
  controller.dragEnd();
  flush();
  drawScene();
});

function canvasPixel(e: MouseEvent): [number, number] {
  const rect = sceneCanvas.getBoundingClientRect();
  return [((e.clientX - rect.left) / rect.width) * sceneCanvas.width,
          ((e.clientY - rect.top) / rect.height) * sceneCanvas.height];
}

// --- orbit canvas ---------------------------------------------------------------

function drawOrbit(): void {
  const ctx = orbitCanvas.getContext("2d")!;
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, orbitCanvas.width, orbitCanvas.height);
  if (!cloud) {
    return;
  }
  const projected = orbitProject(cloud, orbit, orbitCanvas.width, orbitCanvas.height);
  ctx.fillStyle = "#8ec9ff";
  for (let i = 0; i < projected.length; i += 3) {
    if (projected[i + 2] > 0.05) {
      ctx.fillRect(projected[i], projected[i + 1], 2, 2);
    }
  }
}

orbitCanvas.addEventListener("mousemove", (e) => {
  if (e.buttons === 0) {
    return;
  }
  orbit.yaw += e.movementX * 0.01;
  orbit.pitch = Math.min(1.5, Math.max(0.1, orbit.pitch + e.movementY * 0.01));
  drawOrbit();
});

// --- panel ----------------------------------------------------------------------

function bind(id: string, handler: () => void): void {
  document.getElementById(id)!.addEventListener("click", () => {
    handler();
    flush();
    drawScene();
  });
}

bind("initialize", () => controller.clickInitialize());
bind("search", () => controller.clickSearch());
bind("execute", () => controller.clickExecute());
bind("back", () => controller.clickBack());
bind("move", () => controller.clickMove());
bind("simulate-all", () => controller.clickSimulateAll());
bind("follow-mode", () => controller.toggleFollowMode());
bind("grip-toggle", () => controller.toggleOpen());
bind("arm-demo", () => {
  const category = (document.getElementById("category") as HTMLInputElement).value;
  controller.armDemo(category);
});

function renderPanel(): void {
  const mode = document.getElementById("mode-label");
  if (mode) {
    mode.textContent = `${controller.gripper.followMode}` +
      `${controller.armedCategory ? ` | demo armed: ${controller.armedCategory}` : ""}` +
      ` | gripper ${controller.gripper.open ? "open" : "closed"}`;
  }
  for (const err of controller.localErrors.splice(0)) {
    log(`local: ${err.action}: ${err.reason}`);
  }
}

function renderDetections(): void {
  detectionsEl.innerHTML = "";
  for (const det of controller.detections) {
    const row = document.createElement("div");
    row.className = "detection" + (det.id === controller.selectedObject ? " selected" : "");
    const sim = det.similarity === null ? "-" : det.similarity.toFixed(3);
    row.textContent = `#${det.id} ${det.category ?? "?"}  i_s=${sim}  ${det.provenance ?? "no plan"}`;
    row.addEventListener("click", () => {
      controller.selectObject(det.id);
      renderDetections();
      drawScene();
    });
    detectionsEl.appendChild(row);
  }
}

function status(text: string): void {
  statusEl.textContent = text;
}

function toast(text: string): void {
  log(text);
  status(text);
}

function log(text: string): void {
  const line = document.createElement("div");
  line.textContent = text;
  logEl.prepend(line);
  while (logEl.childElementCount > 40) {
    logEl.removeChild(logEl.lastChild!);
  }
}

setInterval(renderPanel, 500);
