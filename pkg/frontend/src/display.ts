import { FrameMessage } from "./protocol.js";

export function b64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

const PNG_MAGIC = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

// Header-level decode: enough to validate a frame without a DOM.
export function decodeDims(
  bytes: Uint8Array, encoding: "png" | "jpeg",
): { width: number; height: number } | null {
  if (encoding === "png") {
    if (bytes.length < 24) return null;
    for (let i = 0; i < 8; i++) if (bytes[i] !== PNG_MAGIC[i]) return null;
    const be = (o: number) =>
      (bytes[o] << 24 | bytes[o + 1] << 16 | bytes[o + 2] << 8
       | bytes[o + 3]) >>> 0;
    return { width: be(16), height: be(20) };
  }
  if (bytes.length < 4 || bytes[0] !== 0xff || bytes[1] !== 0xd8) return null;
  let i = 2;
  while (i + 9 < bytes.length) {
    if (bytes[i] !== 0xff) return null;
    const marker = bytes[i + 1];
    const len = (bytes[i + 2] << 8) | bytes[i + 3];
    if (marker >= 0xc0 && marker <= 0xcf && marker !== 0xc4
        && marker !== 0xc8 && marker !== 0xcc) {
      return {
        height: (bytes[i + 5] << 8) | bytes[i + 6],
        width: (bytes[i + 7] << 8) | bytes[i + 8],
      };
    }
    i += 2 + len;
  }
  return null;
}

export interface Painter {
  paint(bytes: Uint8Array, frame: FrameMessage): void;
}

export interface DisplayEvents {
  onBanner?: (reason: string) => void;
  onPainted?: (frame: FrameMessage) => void;
  now?: () => number;
}

// Stale frames (seq at or below the newest painted) are dropped so the
// screen always shows the highest seq received.
export function makeDisplay(painter: Painter, events: DisplayEvents = {}) {
  let maxSeq = -1;
  let painted = 0;
  const times: number[] = [];
  const now = events.now ?? Date.now;
  return {
    handleFrame(frame: FrameMessage): "painted" | "stale" | "failed" {
      if (frame.seq <= maxSeq) return "stale";
      let bytes: Uint8Array;
      try {
        bytes = b64ToBytes(frame.payload);
      } catch {
        events.onBanner?.("frame payload is not valid base64");
        return "failed";
      }
      const dims = decodeDims(bytes, frame.encoding);
      if (!dims || dims.width !== frame.width
          || dims.height !== frame.height) {
        events.onBanner?.("frame payload failed to decode");
        return "failed";
      }
      maxSeq = frame.seq;
      painted++;
      const t = now();
      times.push(t);
      while (times.length && times[0] < t - 2000) times.shift();
      painter.paint(bytes, frame);
      events.onPainted?.(frame);
      return "painted";
    },
    fps(): number {
      if (times.length < 2) return 0;
      const span = times[times.length - 1] - times[0];
      return span > 0 ? ((times.length - 1) * 1000) / span : 0;
    },
    stats() {
      return { painted, maxSeq };
    },
  };
}
