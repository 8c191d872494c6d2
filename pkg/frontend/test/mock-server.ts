// Protocol-faithful stand-in for the render service: depth-1 latest-wins
// coalescing, seq echo, PNG payloads with a real header.  Also exposes a
// raw-send hook so tests can inject stale or malformed traffic.

import { AddressInfo, WebSocketServer, WebSocket } from "ws";
import { PoseMessage } from "../src/protocol.js";

// 1x1 white PNG
const PNG_1X1 = "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAIAAACQd1PeAAAADElE"
  + "QVQIHWP4//8/AAX+Av6fyi0TAAAAAElFTkSuQmCC";

export interface MockServerOpts {
  renderMs?: number;
  reply?: (pose: PoseMessage) => Record<string, unknown>;
}

export async function startMockServer(opts: MockServerOpts = {}) {
  const renderMs = opts.renderMs ?? 5;
  const wss = new WebSocketServer({ host: "127.0.0.1", port: 0 });
  await new Promise<void>((resolve) => wss.once("listening", resolve));
  const received: PoseMessage[] = [];
  const sockets = new Set<WebSocket>();

  wss.on("connection", (socket) => {
    sockets.add(socket);
    let slot: PoseMessage | null = null;
    let busy = false;

    const pump = () => {
      if (busy || !slot) return;
      const pose = slot;
      slot = null;
      busy = true;
      setTimeout(() => {
        busy = false;
        if (socket.readyState === WebSocket.OPEN) {
          // the canned payload is a real 1x1 PNG, so report its true dims
          // rather than echoing the requested size
          const body = opts.reply?.(pose) ?? {
            type: "frame", seq: pose.seq, width: 1, height: 1,
            encoding: "png", payload: PNG_1X1,
          };
          socket.send(JSON.stringify(body));
        }
        pump();
      }, renderMs);
    };

    socket.on("message", (data) => {
      let msg: unknown;
      try {
        msg = JSON.parse(String(data));
      } catch {
        socket.send(JSON.stringify(
          { type: "error", seq: null, reason: "not json" }));
        return;
      }
      const pose = msg as PoseMessage;
      if (pose.type !== "pose" || typeof pose.seq !== "number") {
        socket.send(JSON.stringify(
          { type: "error", seq: null, reason: "not a pose" }));
        return;
      }
      received.push(pose);
      slot = pose;   // depth-1 queue, newest wins
      pump();
    });
    socket.on("close", () => sockets.delete(socket));
  });

  const port = (wss.address() as AddressInfo).port;
  return {
    url: `ws://127.0.0.1:${port}`,
    port,
    received,
    sendRaw(obj: unknown) {
      for (const s of sockets) {
        s.send(typeof obj === "string" ? obj : JSON.stringify(obj));
      }
    },
    clientCount: () => sockets.size,
    kick() {
      for (const s of sockets) s.terminate();
    },
    async close() {
      for (const s of sockets) s.terminate();
      await new Promise<void>((resolve) => wss.close(() => resolve()));
    },
  };
}

export { PNG_1X1 };
