// Browser wiring: canvas, pointer, wheel, keys, HUD.  All logic lives in
// the modules this file glues together; nothing here is load-bearing for
// the tests.

import { openSession } from "./connection.js";
import { makeDisplay } from "./display.js";
import { DEFAULT_TUNING, drag, key, wheel } from "./input.js";
import { FrameMessage } from "./protocol.js";

export function mountViewer(root: HTMLElement, url: string) {
  const canvas = document.createElement("canvas");
  canvas.width = 512;
  canvas.height = 512;
  canvas.style.touchAction = "none";
  const hud = document.createElement("div");
  hud.className = "hud";
  const banner = document.createElement("div");
  banner.className = "banner";
  banner.style.display = "none";
  root.append(canvas, hud, banner);
  const ctx = canvas.getContext("2d")!;

  const display = makeDisplay({
    paint(bytes, frame) {
      const blob = new Blob([bytes.slice().buffer],
                            { type: `image/${frame.encoding}` });
      const bmpUrl = URL.createObjectURL(blob);
      const img = new Image();
      img.onload = () => {
        canvas.width = frame.width;
        canvas.height = frame.height;
        ctx.drawImage(img, 0, 0);
        URL.revokeObjectURL(bmpUrl);
      };
      img.src = bmpUrl;
    },
  }, {
    onBanner(reason) {
      banner.textContent = reason;
      banner.style.display = "block";
    },
  });

  const session = openSession(url, {
    renderSize: () => ({ width: canvas.width, height: canvas.height }),
    onFrame(frame: FrameMessage) {
      display.handleFrame(frame);
      refreshHud();
    },
    onStatus: refreshHud,
    onError(err) {
      banner.textContent = err.reason;
      banner.style.display = "block";
    },
  });

  function refreshHud() {
    const c = session.state.camera;
    const deg = (r: number) => ((r * 180) / Math.PI).toFixed(1);
    hud.textContent =
      `${session.state.status} | ${display.fps().toFixed(1)} fps | `
      + `yaw ${deg(c.yaw)} pitch ${deg(c.pitch)} `
      + `fov x${c.fovScale.toFixed(2)} t [${c.t.map(
          (v) => v.toFixed(2)).join(", ")}]`;
  }

  let dragging = false;
  let last = { x: 0, y: 0 };
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    last = { x: e.clientX, y: e.clientY };
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - last.x;
    const dy = e.clientY - last.y;
    last = { x: e.clientX, y: e.clientY };
    session.update(drag(session.state.camera, dx, dy, DEFAULT_TUNING));
    refreshHud();
  });
  canvas.addEventListener("pointerup", () => { dragging = false; });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    session.update(wheel(session.state.camera, e.deltaY, DEFAULT_TUNING));
    refreshHud();
  }, { passive: false });
  window.addEventListener("keydown", (e) => {
    const next = key(session.state.camera, e.key, DEFAULT_TUNING);
    if (next !== session.state.camera) {
      session.update(next);
      refreshHud();
    }
  });

  refreshHud();
  return session;
}
