// Criterion: steering latency against the real render service.  A small
// checkpoint is built on the fly, served over localhost, and a scripted
// drag measures input-to-painted-frame time at 256x256.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { WebSocket as NodeWebSocket } from "ws";
import { openSession } from "../src/connection.js";
import { makeDisplay } from "../src/display.js";
import { drag } from "../src/input.js";
import { FrameMessage } from "../src/protocol.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const REPO = resolve(HERE, "..", "..");
const PYENV = { ...process.env, PYTHONPATH: join(REPO, "src") };

const BUILD_CKPT = `
import sys
import numpy as np
from panosphere import geometry as geo
from panosphere.checkpoint import save_checkpoint
from panosphere.encoding import HashGridConfig
from panosphere.model import LightSphereModel, ModelConfig

cfg = ModelConfig(
    n_frames=4, offset_variant="rotation",
    gamma2=HashGridConfig(dims=3, levels=3, base_res=4, growth=2.0,
                          table_size_log2=12),
    gamma1_point=HashGridConfig(dims=3, levels=3, base_res=4, growth=3.0,
                                table_size_log2=10),
    gamma1_image=HashGridConfig(dims=2, levels=3, base_res=4, growth=3.0,
                                table_size_log2=8),
    hidden_dim=8, num_layers=2, feature_dim=4)
gyro = np.stack([geo.rot_y(a) for a in np.linspace(-0.5, 0.5, 4)])
model = LightSphereModel(cfg, gyro=gyro,
                         intrinsics=np.array([140.0, 140.0, 64.0, 64.0]),
                         rng=np.random.default_rng(3))
save_checkpoint(sys.argv[1], model)
`;

let workdir: string;
let server: ChildProcess;
let url: string;

function sleep(ms: number) {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function until(cond: () => boolean, ms = 5000) {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > ms) throw new Error("condition never held");
    await sleep(5);
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "viewer-e2e-"));
  const ckpt = join(workdir, "tiny.nlsp");
  execFileSync("python3", ["-c", BUILD_CKPT, ckpt], { env: PYENV });

  server = spawn("python3", ["-m", "panosphere", "serve", ckpt,
                             "--port", "0"],
                 { env: PYENV, stdio: ["ignore", "pipe", "pipe"] });
  let stdout = "";
  server.stdout!.on("data", (d) => { stdout += String(d); });
  let stderr = "";
  server.stderr!.on("data", (d) => { stderr += String(d); });
  try {
    await until(() => /listening on (ws:\/\/[\d.]+:\d+)/.test(stdout),
                20000);
  } catch (err) {
    throw new Error(`service never came up: ${stderr}\n${stdout}`);
  }
  url = stdout.match(/listening on (ws:\/\/[\d.]+:\d+)/)![1];
}, 30000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("real service on localhost", () => {
  it("paints a dragged 256x256 view in under 200 ms", async () => {
    const now = () => performance.now();
    const paintedAt: number[] = [];
    const frames: FrameMessage[] = [];
    const display = makeDisplay({ paint() {} },
                                { onPainted: () => paintedAt.push(now()) });
    const session = openSession(url, {
      wsFactory: (u) => new NodeWebSocket(u) as any,
      renderSize: () => ({ width: 256, height: 256 }),
      onFrame: (f) => {
        frames.push(f);
        display.handleFrame(f);
      },
    });
    try {
      // warm the pipeline: first render pays numpy and codec setup
      await until(() => display.stats().painted >= 1, 10000);

      const latencies: number[] = [];
      for (let i = 0; i < 5; i++) {
        const before = display.stats().painted;
        const t0 = now();
        session.update(drag(session.state.camera, 25, 5));
        await until(() => display.stats().painted > before, 5000);
        latencies.push(paintedAt[paintedAt.length - 1] - t0);
      }
      latencies.sort((a, b) => a - b);
      const median = latencies[Math.floor(latencies.length / 2)];
      console.log(`input->painted latencies ms: ${latencies.map(
        (v) => v.toFixed(1)).join(", ")} (median ${median.toFixed(1)})`);
      expect(median).toBeLessThan(200);

      const top = frames[frames.length - 1];
      expect(top.width).toBe(256);
      expect(top.height).toBe(256);
    } finally {
      session.close();
    }
  }, 30000);
});
