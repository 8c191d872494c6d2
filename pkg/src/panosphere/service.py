"""Interactive render service.

One WebSocket session per viewer.  Each incoming pose message lands in a
depth-1 slot, so a burst of steering inputs collapses to the newest one
and the renderer never falls behind; every rendered frame echoes the seq
of the pose it came from.  Sessions share the read-only model and a small
render pool.  Malformed messages get an error reply and the connection
stays open.

Message schema, JSON text frames:
  pose  {type, yaw, pitch, roll, tx, ty, tz, fov_scale, width, height, seq}
  frame {type, seq, width, height, encoding, payload}   payload is base64
  error {type, seq, reason}
"""

import asyncio
import base64
import collections
import json
import math
from concurrent.futures import ThreadPoolExecutor

import cv2
import numpy as np
from websockets.asyncio.server import serve as ws_serve
from websockets.exceptions import ConnectionClosed

from . import geometry
from .renderer import VirtualCamera, camera_rays, render_view

MAX_DIM = 2048
_POSE_ANGLES = ("yaw", "pitch", "roll")
_POSE_OFFSET = ("tx", "ty", "tz")


class ProtocolError(ValueError):
    def __init__(self, reason, seq=None):
        super().__init__(reason)
        self.seq = seq


def _number(msg, key):
    v = msg.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(f"field {key} must be a number", msg.get("seq"))
    if not math.isfinite(v):
        raise ProtocolError(f"field {key} must be finite", msg.get("seq"))
    return float(v)


def parse_pose(text):
    """Validated pose dict from one wire message."""
    try:
        msg = json.loads(text)
    except (ValueError, UnicodeDecodeError):
        raise ProtocolError("message is not valid JSON")
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    seq = msg.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool):
        raise ProtocolError("field seq must be an integer", None)
    if msg.get("type") != "pose":
        raise ProtocolError(f"unknown message type {msg.get('type')!r}", seq)
    out = {"seq": seq}
    for key in _POSE_ANGLES + _POSE_OFFSET + ("fov_scale",):
        out[key] = _number(msg, key)
    for key in ("width", "height"):
        v = msg.get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ProtocolError(f"field {key} must be an integer", seq)
        if not 1 <= v <= MAX_DIM:
            raise ProtocolError(f"field {key} out of range 1..{MAX_DIM}", seq)
        out[key] = v
    # mirror the client-side clamps instead of rejecting
    out["fov_scale"] = max(1.0, out["fov_scale"])
    t = np.array([out["tx"], out["ty"], out["tz"]])
    norm = np.linalg.norm(t)
    if norm > geometry.ORIGIN_NORM_MAX:
        t *= geometry.ORIGIN_NORM_MAX / norm
        out["tx"], out["ty"], out["tz"] = t.tolist()
    return out


def camera_for_pose(model, pose):
    """Virtual camera for a pose message, focal length carried over from
    the capture so fov_scale 1 matches the recorded field of view."""
    fx, fy, cx, cy = model.intrinsics[0]
    w, h = pose["width"], pose["height"]
    intr = [fx * w / (2 * cx), fy * h / (2 * cy), w / 2.0, h / 2.0]
    R = geometry.ypr_matrix(pose["yaw"], pose["pitch"], pose["roll"])
    return VirtualCamera(intrinsics=intr, rotation=R,
                         translation=[pose["tx"], pose["ty"], pose["tz"]],
                         width=w, height=h, fov_scale=pose["fov_scale"])


def encode_frame(image, seq, encoding="png"):
    """FrameMessage dict for one rendered image."""
    arr = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    ext = {"png": ".png", "jpeg": ".jpg"}[encoding]
    ok, buf = cv2.imencode(ext, cv2.cvtColor(arr, cv2.COLOR_RGB2BGR))
    if not ok:
        raise RuntimeError(f"{encoding} encoding failed")
    return {"type": "frame", "seq": seq,
            "width": image.shape[1], "height": image.shape[0],
            "encoding": encoding,
            "payload": base64.b64encode(buf.tobytes()).decode("ascii")}


def decode_frame(msg):
    """Image in [0,1] from a FrameMessage, for tests and local clients."""
    raw = np.frombuffer(base64.b64decode(msg["payload"]), dtype=np.uint8)
    bgr = cv2.imdecode(raw, cv2.IMREAD_COLOR)
    if bgr is None:
        raise ValueError("payload does not decode")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0


class RenderService:
    def __init__(self, model, flags=None, pipeline=None, encoding="png",
                 workers=2):
        self.model = model
        self.flags = flags
        self.pipeline = pipeline
        self.encoding = encoding
        self.pool = ThreadPoolExecutor(max_workers=workers)
        # image-plane features per (width, height); pose changes reuse them
        self._xy_feats = {}

    def _image_feats(self, cam):
        key = (cam.width, cam.height)
        feats = self._xy_feats.get(key)
        if feats is None:
            _, _, X = camera_rays(cam)
            feats = self.model.encode_image_xy(X)
            while len(self._xy_feats) >= 4:
                self._xy_feats.pop(next(iter(self._xy_feats)))
            self._xy_feats[key] = feats
        return feats

    def render_pose(self, pose):
        cam = camera_for_pose(self.model, pose)
        img = render_view(self.model, cam, flags=self.flags,
                          pipeline=self.pipeline,
                          image_feats=self._image_feats(cam))
        return encode_frame(img, pose["seq"], self.encoding)

    async def handle(self, ws):
        """One session: reader keeps only the newest pose, this loop is
        the sole sender so frames and errors never interleave mid-write."""
        slot = collections.deque(maxlen=1)
        errors = collections.deque(maxlen=32)
        wake = asyncio.Event()
        done = False

        async def reader():
            nonlocal done
            try:
                async for text in ws:
                    try:
                        slot.append(parse_pose(text))
                    except ProtocolError as e:
                        errors.append({"type": "error", "seq": e.seq,
                                       "reason": str(e)})
                    wake.set()
            finally:
                done = True
                wake.set()

        reader_task = asyncio.create_task(reader())
        loop = asyncio.get_running_loop()
        try:
            while True:
                await wake.wait()
                wake.clear()
                while errors:
                    await ws.send(json.dumps(errors.popleft()))
                if slot:
                    pose = slot.popleft()
                    try:
                        out = await loop.run_in_executor(
                            self.pool, self.render_pose, pose)
                    except Exception as e:
                        out = {"type": "error", "seq": pose["seq"],
                               "reason": f"render failed: {e}"}
                    await ws.send(json.dumps(out))
                    wake.set()  # recheck: newer poses may have landed
                elif done:
                    return
        except ConnectionClosed:
            return
        finally:
            reader_task.cancel()

    async def serve(self, host="127.0.0.1", port=8765, ready=None):
        """Run until cancelled.  ready, if given, receives the bound port
        once the socket is listening (port 0 picks a free one)."""
        async with ws_serve(self.handle, host, port) as server:
            if ready is not None:
                ready.set_result(server.sockets[0].getsockname()[1])
            await asyncio.get_running_loop().create_future()


def run_service(model, host="127.0.0.1", port=8765, on_ready=None, **kw):
    """Blocking entry point used by the command line.  on_ready, if given,
    gets the bound port once listening; with port 0 that is the only way
    to learn the address."""
    svc = RenderService(model, **kw)

    async def main():
        fut = asyncio.get_running_loop().create_future()
        task = asyncio.ensure_future(svc.serve(host, port, ready=fut))
        done, _ = await asyncio.wait({fut, task},
                                     return_when=asyncio.FIRST_COMPLETED)
        if task in done:
            return task.result()    # bind failures surface here
        if on_ready is not None:
            on_ready(fut.result())
        await task

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
