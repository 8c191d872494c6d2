import {
  Camera, ErrorMessage, FrameMessage, parseServerMessage, poseMessage,
} from "./protocol.js";
import { Status, ViewerState, initialState } from "./state.js";

// The subset of WebSocket both browsers and the ws package provide.
export interface WebSocketLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  addEventListener(type: string, cb: (ev: any) => void): void;
}

export interface SessionOpts {
  wsFactory?: (url: string) => WebSocketLike;
  backoffMs?: number[];
  onFrame?: (frame: FrameMessage) => void;
  onError?: (err: ErrorMessage) => void;
  onStatus?: (status: Status) => void;
  setTimer?: (cb: () => void, ms: number) => unknown;
  renderSize?: () => { width: number; height: number };
}

const OPEN = 1;
const DEFAULT_BACKOFF = [250, 500, 1000, 2000, 4000];

// One live request at a time, latest camera wins.  A pose update while a
// render is in flight only marks the session dirty; the next request goes
// out when the current one resolves.  Seq never repeats, reconnects
// included, so stale responses are always recognizable.
export function openSession(url: string, opts: SessionOpts = {}) {
  const wsFactory = opts.wsFactory
    ?? ((u: string) => new WebSocket(u) as unknown as WebSocketLike);
  const backoff = opts.backoffMs ?? DEFAULT_BACKOFF;
  const setTimer = opts.setTimer
    ?? ((cb: () => void, ms: number) => setTimeout(cb, ms));
  const renderSize = opts.renderSize ?? (() => ({ width: 256, height: 256 }));

  const state: ViewerState = initialState();
  let ws: WebSocketLike | null = null;
  let nextSeq = 0;
  let inflight: number | null = null;
  let dirty = false;
  let attempts = 0;
  let closed = false;
  let sent = 0;

  function setStatus(s: Status) {
    state.status = s;
    opts.onStatus?.(s);
  }

  function sendPose() {
    if (!ws || ws.readyState !== OPEN || closed) return;
    const { width, height } = renderSize();
    const seq = nextSeq++;
    ws.send(JSON.stringify(poseMessage(state.camera, width, height, seq)));
    inflight = seq;
    dirty = false;
    sent++;
  }

  function settle(seq: number | null) {
    if (inflight === null) return;
    if (seq === null || seq >= inflight) {
      inflight = null;
      if (dirty) sendPose();
    }
  }

  function connect() {
    if (closed) return;
    setStatus("connecting");
    ws = wsFactory(url);
    ws.addEventListener("open", () => {
      attempts = 0;
      inflight = null;
      setStatus("connected");
      sendPose();   // camera state survives the reconnect
    });
    ws.addEventListener("message", (ev: any) => {
      const msg = parseServerMessage(String(ev.data));
      if (!msg) return;
      if (msg.type === "frame") {
        if (msg.seq > state.lastSeq) state.lastSeq = msg.seq;
        opts.onFrame?.(msg);
      } else {
        state.banner = msg.reason;
        opts.onError?.(msg);
      }
      settle(msg.seq);
    });
    ws.addEventListener("close", () => {
      if (closed) return;
      inflight = null;
      setStatus("connecting");
      const wait = backoff[Math.min(attempts, backoff.length - 1)];
      attempts++;
      setTimer(connect, wait);
    });
    ws.addEventListener("error", () => { /* close always follows */ });
  }

  connect();

  return {
    state,
    update(cam: Camera) {
      state.camera = cam;
      if (inflight === null) sendPose();
      else dirty = true;
    },
    requestRender() {
      if (inflight === null) sendPose();
      else dirty = true;
    },
    inflightCount: () => (inflight === null ? 0 : 1),
    sentCount: () => sent,
    close() {
      closed = true;
      setStatus("closed");
      ws?.close();
    },
  };
}

export type Session = ReturnType<typeof openSession>;
