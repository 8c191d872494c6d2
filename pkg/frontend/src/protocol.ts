// Wire schema shared with the render service, verbatim.

export interface PoseMessage {
  type: "pose";
  yaw: number;
  pitch: number;
  roll: number;
  tx: number;
  ty: number;
  tz: number;
  fov_scale: number;
  width: number;
  height: number;
  seq: number;
}

export interface FrameMessage {
  type: "frame";
  seq: number;
  width: number;
  height: number;
  encoding: "png" | "jpeg";
  payload: string;
}

export interface ErrorMessage {
  type: "error";
  seq: number | null;
  reason: string;
}

export type ServerMessage = FrameMessage | ErrorMessage;

export const MAX_TRANSLATION = 0.99;
export const PITCH_LIMIT = Math.PI / 2 - 1e-6;

export interface Camera {
  yaw: number;
  pitch: number;
  roll: number;
  t: [number, number, number];
  fovScale: number;
}

// Same clamps the server applies, so normal steering never gets rejected.
export function clampCamera(cam: Camera): Camera {
  const fovScale = Math.max(1, cam.fovScale);
  const pitch = Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, cam.pitch));
  let t = cam.t;
  const n = Math.hypot(t[0], t[1], t[2]);
  if (n > MAX_TRANSLATION) {
    const s = MAX_TRANSLATION / n;
    t = [t[0] * s, t[1] * s, t[2] * s];
  }
  return { ...cam, pitch, fovScale, t };
}

export function poseMessage(
  cam: Camera, width: number, height: number, seq: number,
): PoseMessage {
  const c = clampCamera(cam);
  return {
    type: "pose",
    yaw: c.yaw, pitch: c.pitch, roll: c.roll,
    tx: c.t[0], ty: c.t[1], tz: c.t[2],
    fov_scale: c.fovScale,
    width, height, seq,
  };
}

export function parseServerMessage(data: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const m = msg as Record<string, unknown>;
  if (m.type === "frame" && typeof m.seq === "number"
      && typeof m.payload === "string") {
    return m as unknown as FrameMessage;
  }
  if (m.type === "error" && typeof m.reason === "string") {
    return m as unknown as ErrorMessage;
  }
  return null;
}
