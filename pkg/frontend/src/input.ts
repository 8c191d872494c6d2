import { Camera, clampCamera } from "./protocol.js";

export interface InputTuning {
  yawPerPixel: number;
  pitchPerPixel: number;
  wheelRate: number;
  stepT: number;
}

export const DEFAULT_TUNING: InputTuning = {
  yawPerPixel: 0.004,
  pitchPerPixel: 0.004,
  wheelRate: 0.0012,
  stepT: 0.05,
};

// Drag right looks right: positive dx increases yaw.  Drag up looks up.
export function drag(
  cam: Camera, dx: number, dy: number, tuning = DEFAULT_TUNING,
): Camera {
  return clampCamera({
    ...cam,
    yaw: cam.yaw + dx * tuning.yawPerPixel,
    pitch: cam.pitch + dy * tuning.pitchPerPixel,
  });
}

// Wheel up (negative deltaY) narrows toward the fov_scale floor of 1.
export function wheel(
  cam: Camera, deltaY: number, tuning = DEFAULT_TUNING,
): Camera {
  return clampCamera({
    ...cam,
    fovScale: cam.fovScale * Math.exp(deltaY * tuning.wheelRate),
  });
}

const KEY_AXES: Record<string, [number, number, number]> = {
  w: [0, 0, 1], s: [0, 0, -1],
  a: [-1, 0, 0], d: [1, 0, 0],
  q: [0, 1, 0], e: [0, -1, 0],
};

export function key(
  cam: Camera, k: string, tuning = DEFAULT_TUNING,
): Camera {
  const axis = KEY_AXES[k.toLowerCase()];
  if (!axis) return cam;
  const t: [number, number, number] = [
    cam.t[0] + axis[0] * tuning.stepT,
    cam.t[1] + axis[1] * tuning.stepT,
    cam.t[2] + axis[2] * tuning.stepT,
  ];
  return clampCamera({ ...cam, t });
}
