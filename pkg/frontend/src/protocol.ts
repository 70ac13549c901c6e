// Wire protocol shared with the server: every message is a 4-byte big-endian
// payload length followed by UTF-8 JSON {body, seq, type}. WebSocket binary
// messages carry exactly these bytes, so one codec serves both transports.

export type PoseJson = {
  position: [number, number, number];
  orientation: [number, number, number, number];
};

export interface Envelope {
  type: string;
  seq: number;
  body: Record<string, unknown>;
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface MaskRle {
  id: number;
  width: number;
  height: number;
  runs: number[];
}

export interface Detection {
  id: number;
  category: string | null;
  bbox: [number, number, number, number];
  initial: PoseJson | null;
  similarity: number | null;
  provenance: string | null;
  plan: { waypoints: PoseJson[]; grasp: PoseJson } | null;
}

export const CLIENT_TYPES = [
  "HELLO", "INITIALIZE", "SEARCH", "GET_FRAME", "DEMO_START", "DEMO_WAYPOINT",
  "DEMO_END", "BACK", "MOVE", "SIMULATE_ALL", "EXECUTE",
] as const;

function canonical(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonical).join(",") + "]";
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => JSON.stringify(k) + ":" + canonical(v));
  return "{" + entries.join(",") + "}";
}

export function encodeEnvelope(type: string, seq: number, body: unknown): Uint8Array {
  const payload = new TextEncoder().encode(canonical({ body, seq, type }));
  const frame = new Uint8Array(4 + payload.length);
  new DataView(frame.buffer).setUint32(0, payload.length, false);
  frame.set(payload, 4);
  return frame;
}

export function decodeEnvelope(data: ArrayBuffer | Uint8Array): Envelope {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (bytes.length < 4) {
    throw new Error("frame shorter than its header");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const length = view.getUint32(0, false);
  if (length !== bytes.length - 4) {
    throw new Error(`length prefix ${length} != payload size ${bytes.length - 4}`);
  }
  const msg = JSON.parse(new TextDecoder().decode(bytes.subarray(4)));
  if (typeof msg.type !== "string" || typeof msg.seq !== "number" ||
      typeof msg.body !== "object" || msg.body === null) {
    throw new Error("payload missing type/seq/body");
  }
  return msg as Envelope;
}

// --- binary payload fields --------------------------------------------------

export function b64ToFloat32(b64: string): Float32Array {
  const raw = Uint8Array.from(atob(b64), (c) => c.charCodeAt(0));
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  const out = new Float32Array(raw.byteLength / 4);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(i * 4, true); // little-endian on the wire
  }
  return out;
}

export function rleToBits(mask: MaskRle): Uint8Array {
  const total = mask.width * mask.height;
  const bits = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of mask.runs) {
    if (run < 0 || pos + run > total) {
      throw new Error("RLE runs exceed mask size");
    }
    if (value) {
      bits.fill(1, pos, pos + run);
    }
    pos += run;
    value ^= 1;
  }
  if (pos !== total) {
    throw new Error("RLE runs do not cover the mask");
  }
  return bits;
}
