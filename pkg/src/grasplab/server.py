"""Teleoperation server: one operator session over a framed socket protocol.

The transport accepts either the raw length-prefixed stream or a browser
WebSocket upgrade on the same port (sniffed from the first bytes); both carry
identical envelope bytes. A second simultaneous connection is answered with
BUSY and closed. All scene state, the demonstration store, and the outcome
log live on the server and survive reconnects; protocol sequence numbers and
the session state machine reset per connection.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import math
import os
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .demo import (DemonstrationStore, GraspPlan, NoGraspAvailableError, Thresholds,
                   WaypointCountError, final_grasp, plan_from_initial, record_demo,
                   similarity_index)
from .geometry import HandEyeCalibration, Mask, Pose
from .grasp import initial_grasp
from .learner import (EncoderParams, TooFewPointsError, cloud_from_depth_mask,
                      init_params)
from .scene import (DETECTION_HEIGHT_M, DEFAULT_INTRINSICS, Gripper, Scene,
                    SceneFrame, WorkspaceViolationError, default_camera_pose,
                    evaluate_grasp, execute, generate_scene, render, success_rates)

LOG = logging.getLogger("grasplab.server")

STATES = ("idle", "detecting", "demo-recording", "executing")

LEGAL_MESSAGES = {
    "idle": {"HELLO", "INITIALIZE", "SEARCH", "GET_FRAME", "DEMO_START", "BACK",
             "MOVE", "SIMULATE_ALL", "EXECUTE"},
    "detecting": set(),
    "demo-recording": {"DEMO_WAYPOINT", "DEMO_END", "BACK", "GET_FRAME"},
    "executing": set(),
}

EXECUTE_SPEED_M_S = 0.1
WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def configure_logging() -> None:
    level = os.environ.get("GRASPLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


@dataclass
class ServerState:
    """Shared, connection-independent state."""

    scene: Scene
    params: EncoderParams
    thresholds: Thresholds = field(default_factory=Thresholds)
    m_points: int = 10
    seed: int = 0
    gripper: Gripper = field(default_factory=Gripper)
    calibration: HandEyeCalibration = field(default_factory=HandEyeCalibration.identity)
    store: DemonstrationStore = field(default_factory=DemonstrationStore)
    outcome_log: list = field(default_factory=list)
    frame_cache: SceneFrame | None = None

    def frame(self) -> SceneFrame:
        if self.frame_cache is None:
            self.frame_cache = render(self.scene)
        return self.frame_cache


def build_server_state(scene: Scene | None = None, params: EncoderParams | None = None,
                       thresholds: Thresholds | None = None, m_points: int = 10,
                       seed: int = 0) -> ServerState:
    if scene is None:
        scene = generate_scene(seed, 5)
    if params is None:
        params = init_params(seed=seed)
    return ServerState(scene=scene, params=params,
                       thresholds=thresholds or Thresholds(),
                       m_points=m_points, seed=seed)


class SessionCore:
    """Transport-independent protocol handler for one connection.

    ``handle_frame`` consumes raw envelope bytes and returns the outbound
    envelope bytes in order; ``handle`` works on decoded payload dicts.
    Outbound sequence numbers are assigned here, so replies are totally
    ordered per session.
    """

    def __init__(self, shared: ServerState):
        self.shared = shared
        self.state = "idle"
        self.last_client_seq = -1
        self.next_server_seq = 0
        self.pending_category: str | None = None
        self.pending_waypoints: list[Pose] = []
        self.recorded_trajectory: list[Pose] = []
        self.virtual_pose = self.detection_pose()

    def detection_pose(self) -> Pose:
        return default_camera_pose(self.shared.scene.workspace, DETECTION_HEIGHT_M)

    # -- outbound helpers ---------------------------------------------------

    def _out(self, msg_type: str, body: dict) -> dict:
        seq = self.next_server_seq
        self.next_server_seq += 1
        return {"type": msg_type, "seq": seq, "body": body}

    def _error(self, req_seq, code: str, message: str) -> dict:
        return self._out("ERROR", {"req": req_seq, "code": code, "message": message})

    # -- entry points ---------------------------------------------------------

    def handle_frame(self, frame: bytes) -> list[bytes]:
        try:
            msg = protocol.decode_frame(frame)
        except protocol.ProtocolError as exc:
            reply = self._error(None, exc.code, str(exc))
            return [protocol.encode_message(reply["type"], reply["seq"], reply["body"])]
        return [protocol.encode_message(m["type"], m["seq"], m["body"])
                for m in self.handle(msg)]

    def handle(self, msg: dict) -> list[dict]:
        msg_type = msg.get("type")
        seq = msg.get("seq")
        body = msg.get("body") or {}

        if not isinstance(seq, int) or seq <= self.last_client_seq:
            return [self._error(seq, "stale",
                                f"seq {seq!r} not above {self.last_client_seq}")]
        self.last_client_seq = seq

        if msg_type not in protocol.CLIENT_TYPES:
            return [self._error(seq, "unknown-type", f"unknown type {msg_type!r}")]
        if msg_type not in LEGAL_MESSAGES[self.state]:
            return [self._error(seq, "bad-state",
                                f"{msg_type} not allowed in state {self.state!r}")]
        try:
            return getattr(self, "_on_" + msg_type.lower())(seq, body)
        except protocol.ProtocolError as exc:
            return [self._error(seq, exc.code, str(exc))]

    # -- message handlers -----------------------------------------------------

    def _on_hello(self, seq, body) -> list[dict]:
        return [self._out("HELLO_ACK", {"req": seq, "version": protocol.PROTOCOL_VERSION})]

    def _on_initialize(self, seq, body) -> list[dict]:
        self.virtual_pose = self.detection_pose()
        self.recorded_trajectory.clear()
        return [self._out("READY", {"req": seq, "pose": self.virtual_pose.as_dict()})]

    def _on_get_frame(self, seq, body) -> list[dict]:
        frame = self.shared.frame()
        masks = [{"id": oid, **protocol.mask_to_rle(mask)} for oid, mask in frame.masks]
        return [self._out("FRAME", {
            "req": seq,
            "intrinsics": frame.intrinsics.as_dict(),
            "camera_pose": frame.camera_pose.as_dict(),
            "depth_b64": protocol.depth_to_b64(frame.depth.data),
            "masks": masks,
        })]

    def _on_search(self, seq, body) -> list[dict]:
        self.state = "detecting"
        try:
            detections = [self._detect_object(oid, mask)
                          for oid, mask in self.shared.frame().masks]
        finally:
            self.state = "idle"
        return [self._out("DETECTIONS", {"req": seq, "objects": detections})]

    def _detect_object(self, oid: int, mask: Mask) -> dict:
        frame = self.shared.frame()
        shared = self.shared
        obj = shared.scene.object_by_id(oid)
        entry: dict = {
            "id": oid,
            "category": obj.category if obj else None,
            "bbox": list(mask.bbox),
            "initial": None,
            "similarity": None,
            "provenance": None,
            "plan": None,
        }
        init = initial_grasp(frame, mask, shared.calibration, frame.camera_pose,
                             shared.gripper)
        if init is not None:
            entry["initial"] = init.pose().as_dict()
        cloud = None
        try:
            cloud = cloud_from_depth_mask(frame.depth, mask, frame.intrinsics,
                                          frame.camera_pose, seed=shared.seed)
        except TooFewPointsError:
            pass
        sim = None
        if cloud is not None and len(shared.store):
            sim = similarity_index(cloud, shared.store, shared.params)
        if sim is not None:
            entry["similarity"] = float(sim[0])
        try:
            if cloud is not None:
                plan = final_grasp(cloud, init, shared.store, shared.params,
                                   shared.thresholds, shared.m_points, precomputed=sim)
            elif init is not None:
                plan = plan_from_initial(init, shared.m_points)
            else:
                raise NoGraspAvailableError("no depth and no demonstrations")
        except NoGraspAvailableError:
            return entry
        entry["provenance"] = plan.provenance
        entry["plan"] = plan.as_dict()
        return entry

    def _on_demo_start(self, seq, body) -> list[dict]:
        category = body.get("category")
        if not isinstance(category, str) or not category:
            raise protocol.ProtocolError("bad-payload", "DEMO_START needs a category")
        self.state = "demo-recording"
        self.pending_category = category
        self.pending_waypoints = []
        return [self._out("DEMO_ACK", {"req": seq, "record": None, "waypoints": 0})]

    def _on_demo_waypoint(self, seq, body) -> list[dict]:
        pose = _pose_from_body(body, "pose")
        self.pending_waypoints.append(pose)
        return [self._out("DEMO_ACK", {"req": seq, "record": None,
                                       "waypoints": len(self.pending_waypoints)})]

    def _on_demo_end(self, seq, body) -> list[dict]:
        grasp = _pose_from_body(body, "grasp_pose")
        waypoints = self.pending_waypoints + [grasp]
        frame = self.shared.frame()
        cloud = self._cloud_nearest(grasp)
        if cloud is None:
            self.state = "idle"
            return [self._error(seq, "unknown-object",
                                "no detected object near the demonstrated grasp")]
        try:
            record_demo(self.shared.store, self.pending_category, cloud, waypoints,
                        frame_ref=self.shared.scene.seed)
        except WaypointCountError as exc:
            self.state = "idle"
            return [self._error(seq, "bad-payload", str(exc))]
        self.state = "idle"
        self.pending_category = None
        self.pending_waypoints = []
        return [self._out("DEMO_ACK", {"req": seq,
                                       "record": len(self.shared.store) - 1,
                                       "waypoints": len(waypoints)})]

    def _cloud_nearest(self, grasp: Pose):
        frame = self.shared.frame()
        best, best_d = None, math.inf
        for oid, mask in frame.masks:
            obj = self.shared.scene.object_by_id(oid)
            if obj is None:
                continue
            d = float(np.linalg.norm(grasp.position[:2] - obj.pose.position[:2]))
            if d < best_d:
                try:
                    cloud = cloud_from_depth_mask(frame.depth, mask, frame.intrinsics,
                                                  frame.camera_pose, seed=self.shared.seed,
                                                  category_hint=obj.category)
                except TooFewPointsError:
                    continue
                best, best_d = cloud, d
        return best

    def _on_back(self, seq, body) -> list[dict]:
        self.pending_category = None
        self.pending_waypoints = []
        self.recorded_trajectory.clear()
        self.state = "idle"
        return [self._out("CLEARED", {"req": seq})]

    def _on_move(self, seq, body) -> list[dict]:
        pose = _pose_from_body(body, "pose")
        self.recorded_trajectory.append(pose)
        out = self._trace_events(seq, [self.virtual_pose, pose])
        self.virtual_pose = pose
        return out

    def _on_simulate_all(self, seq, body) -> list[dict]:
        path = [self.detection_pose()] + self.recorded_trajectory
        if len(path) < 2:
            return [self._out("TRACE_END", {"req": seq, "count": 0})]
        return self._trace_events(seq, path)

    def _trace_events(self, seq, path: list[Pose]) -> list[dict]:
        try:
            trace = execute(path, EXECUTE_SPEED_M_S, self.shared.scene.workspace)
        except WorkspaceViolationError as exc:
            return [self._error(seq, "bad-payload", str(exc))]
        out = [self._out("TRACE", {"req": seq, "t": float(t), "pose": p.as_dict()})
               for t, p in trace]
        out.append(self._out("TRACE_END", {"req": seq, "count": len(trace)}))
        return out

    def _on_execute(self, seq, body) -> list[dict]:
        oid = body.get("object")
        obj = self.shared.scene.object_by_id(oid) if isinstance(oid, int) else None
        if obj is None:
            return [self._error(seq, "unknown-object", f"no object with id {oid!r}")]
        frame = self.shared.frame()
        mask = frame.mask_for(oid)
        if mask is None:
            return [self._error(seq, "unknown-object", f"object {oid} not visible")]

        self.state = "executing"
        try:
            plan = self._plan_for(oid, mask)
        except NoGraspAvailableError as exc:
            self.state = "idle"
            return [self._error(seq, "no-grasp-available", str(exc))]
        try:
            trace = execute(plan, EXECUTE_SPEED_M_S, self.shared.scene.workspace)
            outcome = evaluate_grasp(self.shared.scene, plan, self.shared.gripper,
                                     target_id=oid)
        except WorkspaceViolationError:
            trace, outcome = [], "workspace-violation"
        finally:
            self.state = "idle"

        self.shared.outcome_log.append((oid, outcome))
        attempt_rate, object_rate = success_rates(self.shared.outcome_log)
        out = [self._out("TRACE", {"req": seq, "t": float(t), "pose": p.as_dict()})
               for t, p in trace]
        out.append(self._out("RESULT", {
            "req": seq, "object": oid, "outcome": outcome,
            "provenance": plan.provenance,
            "attempt_rate": attempt_rate, "object_rate": object_rate,
        }))
        return out

    def _plan_for(self, oid: int, mask: Mask) -> GraspPlan:
        shared = self.shared
        frame = shared.frame()
        init = initial_grasp(frame, mask, shared.calibration, frame.camera_pose,
                             shared.gripper)
        try:
            cloud = cloud_from_depth_mask(frame.depth, mask, frame.intrinsics,
                                          frame.camera_pose, seed=shared.seed)
        except TooFewPointsError:
            cloud = None
        if cloud is None:
            if init is None:
                raise NoGraspAvailableError("no valid depth for the object")
            return plan_from_initial(init, shared.m_points)
        return final_grasp(cloud, init, shared.store, shared.params,
                           shared.thresholds, shared.m_points)


def _pose_from_body(body: dict, key: str) -> Pose:
    raw = body.get(key)
    if not isinstance(raw, dict):
        raise protocol.ProtocolError("bad-payload", f"missing pose field {key!r}")
    try:
        return Pose.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise protocol.ProtocolError("bad-payload", f"bad pose in {key!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

class TeleopServer:
    """Socket server multiplexing raw-stream and WebSocket clients on one port."""

    def __init__(self, state: ServerState, host: str = "127.0.0.1", port: int = 0,
                 ui_dir: str | None = None):
        self.state = state
        self.ui_dir = ui_dir
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self.address = self._sock.getsockname()
        self._active_lock = threading.Lock()
        self._active = False
        self._shutdown = threading.Event()
        self._accept_thread: threading.Thread | None = None

    def start(self) -> None:
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def serve_forever(self) -> None:
        self.start()
        try:
            self._shutdown.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.close()

    def close(self) -> None:
        self._shutdown.set()
        try:
            self._sock.close()
        except OSError:
            pass

    # -- accept/session plumbing ---------------------------------------------

    def _accept_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(conn, addr),
                             daemon=True).start()

    def _serve_connection(self, conn: socket.socket, addr) -> None:
        try:
            with self._active_lock:
                busy = self._active
            if busy:
                # answer immediately so a silent client is not left hanging
                conn.sendall(protocol.encode_message("BUSY", 0,
                                                     {"reason": "session-active"}))
                return
            first = conn.recv(4, socket.MSG_PEEK)
            if not first:
                return
            if first.startswith(b"GET "):
                self._serve_http(conn)
            else:
                self._serve_stream(conn)
        except (OSError, protocol.ProtocolError) as exc:
            LOG.debug("connection %s dropped: %s", addr, exc)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _claim_session(self) -> bool:
        with self._active_lock:
            if self._active:
                return False
            self._active = True
            return True

    def _release_session(self) -> None:
        with self._active_lock:
            self._active = False

    # -- raw stream transport --------------------------------------------------

    def _serve_stream(self, conn: socket.socket) -> None:
        if not self._claim_session():
            conn.sendall(protocol.encode_message("BUSY", 0, {"reason": "session-active"}))
            return
        session = SessionCore(self.state)
        try:
            while not self._shutdown.is_set():
                try:
                    frame = protocol.read_frame(conn)
                except protocol.ProtocolError as exc:
                    err = session._error(None, exc.code, str(exc))
                    conn.sendall(protocol.encode_message(err["type"], err["seq"], err["body"]))
                    continue
                if frame is None:
                    return
                for out in session.handle_frame(frame):
                    conn.sendall(out)
        finally:
            self._release_session()

    # -- http / websocket transport ---------------------------------------------

    def _serve_http(self, conn: socket.socket) -> None:
        request = _read_http_request(conn)
        if request is None:
            return
        method, path, headers = request
        if headers.get("upgrade", "").lower() == "websocket" and path == "/session":
            self._serve_websocket(conn, headers)
        elif method == "GET":
            _serve_static(conn, self.ui_dir, path)

    def _serve_websocket(self, conn: socket.socket, headers: dict) -> None:
        key = headers.get("sec-websocket-key", "")
        accept = base64.b64encode(
            hashlib.sha1((key + WS_GUID).encode("ascii")).digest()).decode("ascii")
        conn.sendall((
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
        ).encode("ascii"))

        if not self._claim_session():
            _ws_send(conn, protocol.encode_message("BUSY", 0, {"reason": "session-active"}))
            _ws_send_close(conn)
            return
        session = SessionCore(self.state)
        try:
            while not self._shutdown.is_set():
                msg = _ws_recv(conn)
                if msg is None:
                    return
                opcode, payload = msg
                if opcode == 8:
                    _ws_send_close(conn)
                    return
                if opcode == 9:
                    _ws_send(conn, payload, opcode=10)
                    continue
                if opcode in (1, 2):
                    for out in session.handle_frame(payload):
                        _ws_send(conn, out)
        finally:
            self._release_session()


def _read_http_request(conn: socket.socket):
    data = b""
    while b"\r\n\r\n" not in data:
        part = conn.recv(4096)
        if not part:
            return None
        data += part
        if len(data) > 64 * 1024:
            return None
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    try:
        method, path, _ = lines[0].split(" ", 2)
    except ValueError:
        return None
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    return method, path, headers


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


def _serve_static(conn: socket.socket, ui_dir: str | None, path: str) -> None:
    if ui_dir is None:
        _http_simple(conn, 404, "no UI directory configured")
        return
    rel = path.split("?", 1)[0].lstrip("/") or "index.html"
    full = os.path.realpath(os.path.join(ui_dir, rel))
    root = os.path.realpath(ui_dir)
    if not full.startswith(root + os.sep) and full != root:
        _http_simple(conn, 403, "forbidden")
        return
    if os.path.isdir(full):
        full = os.path.join(full, "index.html")
    if not os.path.isfile(full):
        _http_simple(conn, 404, "not found")
        return
    with open(full, "rb") as fh:
        body = fh.read()
    ctype = _CONTENT_TYPES.get(os.path.splitext(full)[1], "application/octet-stream")
    head = (f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n")
    conn.sendall(head.encode("ascii") + body)


def _http_simple(conn: socket.socket, code: int, text: str) -> None:
    body = text.encode("utf-8")
    reason = {403: "Forbidden", 404: "Not Found"}.get(code, "OK")
    head = (f"HTTP/1.1 {code} {reason}\r\nContent-Type: text/plain\r\n"
            f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n")
    conn.sendall(head.encode("ascii") + body)


# -- minimal RFC 6455 framing -------------------------------------------------

def _ws_recv(conn: socket.socket):
    """One complete (possibly fragmented) message as (opcode, payload)."""
    message = b""
    opcode = None
    while True:
        head = protocol.read_exact(conn, 2)
        if head is None:
            return None
        fin = bool(head[0] & 0x80)
        op = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        length = head[1] & 0x7F
        if length == 126:
            ext = protocol.read_exact(conn, 2)
            if ext is None:
                return None
            (length,) = struct.unpack(">H", ext)
        elif length == 127:
            ext = protocol.read_exact(conn, 8)
            if ext is None:
                return None
            (length,) = struct.unpack(">Q", ext)
        mask = b"\x00" * 4
        if masked:
            mask = protocol.read_exact(conn, 4)
            if mask is None:
                return None
        payload = protocol.read_exact(conn, length) if length else b""
        if payload is None:
            return None
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        if op in (8, 9, 10):
            return op, payload
        if op != 0:
            opcode = op
        message += payload
        if fin:
            return opcode, message


def _ws_send(conn: socket.socket, payload: bytes, opcode: int = 2) -> None:
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 1 << 16:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    conn.sendall(header + payload)


def _ws_send_close(conn: socket.socket) -> None:
    try:
        conn.sendall(bytes([0x88, 0x00]))
    except OSError:
        pass
