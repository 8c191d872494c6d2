import { Camera } from "./protocol.js";

export type Status = "connecting" | "connected" | "closed";

export interface ViewerState {
  camera: Camera;
  status: Status;
  lastSeq: number;
  banner: string | null;
}

export function initialState(): ViewerState {
  return {
    camera: { yaw: 0, pitch: 0, roll: 0, t: [0, 0, 0], fovScale: 1.5 },
    status: "connecting",
    lastSeq: -1,
    banner: null,
  };
}

// Sliding-window frame-rate estimate for the HUD.
export function fpsEstimator(windowMs = 2000) {
  const times: number[] = [];
  return {
    tick(nowMs: number) {
      times.push(nowMs);
      while (times.length && times[0] < nowMs - windowMs) times.shift();
    },
    fps(): number {
      if (times.length < 2) return 0;
      const span = times[times.length - 1] - times[0];
      return span > 0 ? ((times.length - 1) * 1000) / span : 0;
    },
  };
}
