"""Framed wire protocol shared by the TCP and WebSocket transports.

Every message is one envelope: a 4-byte big-endian payload length followed by
a canonical UTF-8 JSON document {"body": ..., "seq": ..., "type": ...}. The
same bytes travel over the raw stream and inside WebSocket binary messages,
so both transports share one codec and one golden-file corpus.
"""

from __future__ import annotations

import base64
import json
import struct

import numpy as np

from .geometry import Mask

PROTOCOL_VERSION = "1"
HEADER = struct.Struct(">I")
MAX_PAYLOAD_BYTES = 64 * 1024 * 1024

CLIENT_TYPES = (
    "HELLO", "INITIALIZE", "SEARCH", "GET_FRAME", "DEMO_START", "DEMO_WAYPOINT",
    "DEMO_END", "BACK", "MOVE", "SIMULATE_ALL", "EXECUTE",
)
SERVER_TYPES = (
    "HELLO_ACK", "READY", "DETECTIONS", "FRAME", "DEMO_ACK", "CLEARED",
    "TRACE", "TRACE_END", "RESULT", "ERROR", "BUSY",
)
ALL_TYPES = CLIENT_TYPES + SERVER_TYPES

ERROR_CODES = (
    "bad-frame", "bad-payload", "bad-state", "stale", "unknown-type",
    "unknown-object", "no-grasp-available", "busy",
)


class ProtocolError(ValueError):
    """Frame or payload violates the wire format."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def encode_message(msg_type: str, seq: int, body: dict) -> bytes:
    """Serialize one envelope; JSON keys are sorted so encoding is canonical."""
    if msg_type not in ALL_TYPES:
        raise ProtocolError("unknown-type", f"unknown message type {msg_type!r}")
    payload = json.dumps({"body": body, "seq": int(seq), "type": msg_type},
                         separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise ProtocolError("bad-frame", "payload too large")
    return HEADER.pack(len(payload)) + payload


def decode_frame(frame: bytes) -> dict:
    """Parse one complete envelope blob, validating the length prefix."""
    if len(frame) < HEADER.size:
        raise ProtocolError("bad-frame", "frame shorter than its header")
    (length,) = HEADER.unpack(frame[:HEADER.size])
    if length != len(frame) - HEADER.size:
        raise ProtocolError(
            "bad-frame", f"length prefix {length} != payload size {len(frame) - HEADER.size}")
    return decode_payload(frame[HEADER.size:])


def decode_payload(payload: bytes) -> dict:
    try:
        msg = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("bad-frame", f"payload is not valid JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("bad-payload", "payload must be a JSON object")
    for key in ("type", "seq", "body"):
        if key not in msg:
            raise ProtocolError("bad-payload", f"missing field {key!r}")
    if not isinstance(msg["type"], str):
        raise ProtocolError("bad-payload", "type must be a string")
    if not isinstance(msg["seq"], int) or msg["seq"] < 0:
        raise ProtocolError("bad-payload", "seq must be a non-negative integer")
    if not isinstance(msg["body"], dict):
        raise ProtocolError("bad-payload", "body must be an object")
    return msg


def reencode(msg: dict) -> bytes:
    """Canonical bytes for a decoded envelope; decode -> reencode round-trips."""
    return encode_message(msg["type"], msg["seq"], msg["body"])


# ---------------------------------------------------------------------------
# binary field helpers
# ---------------------------------------------------------------------------

def depth_to_b64(data: np.ndarray) -> str:
    """Depth raster as base64 of little-endian 32-bit floats, row-major."""
    return base64.b64encode(np.asarray(data, dtype="<f4").tobytes()).decode("ascii")


def b64_to_depth(text: str, width: int, height: int) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    if len(raw) != width * height * 4:
        raise ProtocolError("bad-payload", "depth byte count does not match size")
    return np.frombuffer(raw, dtype="<f4").reshape(height, width)


def mask_to_rle(mask: Mask) -> dict:
    """Run-length encode the mask, alternating clear/set runs starting clear."""
    flat = mask.bits.reshape(-1)
    changes = np.flatnonzero(np.diff(flat)) + 1
    boundaries = np.concatenate([[0], changes, [len(flat)]])
    runs = [int(n) for n in np.diff(boundaries)]
    if flat[0]:
        runs.insert(0, 0)
    return {"width": mask.width, "height": mask.height, "runs": runs}


def rle_to_mask(d: dict) -> Mask:
    width, height = int(d["width"]), int(d["height"])
    total = width * height
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in d["runs"]:
        run = int(run)
        if run < 0 or pos + run > total:
            raise ProtocolError("bad-payload", "RLE runs exceed mask size")
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != total:
        raise ProtocolError("bad-payload", "RLE runs do not cover the mask")
    return Mask(width, height, flat.reshape(height, width))


# ---------------------------------------------------------------------------
# stream framing
# ---------------------------------------------------------------------------

def read_exact(sock, n: int) -> bytes | None:
    """Read exactly n bytes from a socket, or None on clean EOF."""
    chunks = []
    got = 0
    while got < n:
        part = sock.recv(n - got)
        if not part:
            return None
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


def read_frame(sock) -> bytes | None:
    """Read one full envelope (header included) from a stream socket."""
    header = read_exact(sock, HEADER.size)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_PAYLOAD_BYTES:
        raise ProtocolError("bad-frame", f"declared payload {length} exceeds limit")
    payload = read_exact(sock, length)
    if payload is None:
        return None
    return header + payload
