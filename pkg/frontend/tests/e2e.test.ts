// Scripted end-to-end session against a real gateway process: connect,
// drive for 100 ticks, record one episode with two stage marks, then let
// the datastore verify the file and count segments.

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { SessionClient, SocketLike } from "../src/client.js";
import { StatePayload, StopRecordPayload } from "../src/protocol.js";

const PORT = 8471;
const HOST = "127.0.0.1";
let server: ChildProcess;
let recordDir: string;

async function waitForHealth(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`http://${HOST}:${PORT}/health`);
      if (res.ok) return;
    } catch { /* not up yet */ }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("gateway never became healthy");
}

beforeAll(async () => {
  recordDir = mkdtempSync(join(tmpdir(), "cockpit-e2e-"));
  server = spawn("python3", [
    "-m", "deskbot.cli", "serve-teleop", "--task", "push-block",
    "--seed", "3", "--host", HOST, "--port", String(PORT),
    "--record-dir", recordDir,
  ], { stdio: "ignore" });
  await waitForHealth();
}, 40000);

afterAll(() => {
  server?.kill();
});

function makeClient(states: StatePayload[], stops: StopRecordPayload[]) {
  const url = `ws://${HOST}:${PORT}/session?task=push-block&seed=3&tick_hz=50`;
  return new SessionClient(
    () => new WebSocket(url) as unknown as SocketLike,
    {
      onState: (p) => states.push(p),
      onStopRecord: (p) => stops.push(p),
    });
}

function waitFor(cond: () => boolean, ms = 20000): Promise<void> {
  const deadline = Date.now() + ms;
  return new Promise((resolve, reject) => {
    const poll = () => {
      if (cond()) return resolve();
      if (Date.now() > deadline) return reject(new Error("condition timed out"));
      setTimeout(poll, 20);
    };
    poll();
  });
}

describe("cockpit end-to-end", () => {
  it("drives 100 ticks, records an episode with 2 marks -> 3 segments",
     async () => {
    const states: StatePayload[] = [];
    const stops: StopRecordPayload[] = [];
    const client = makeClient(states, stops);

    const hello = await client.connect(15000);
    expect(hello.task).toBe("push-block");
    expect(hello.action_dim).toBe(10);

    // start recording, then drive while the sim ticks
    client.toggleRecord();
    await waitFor(() => client.recording);

    const forward = new Array(10).fill(0);
    forward[8] = 0.15;   // base v
    forward[9] = 0.4;    // slight turn
    const driver = setInterval(() => client.sendInput(forward), 33);

    await waitFor(() => (client.lastState?.steps_recorded ?? 0) >= 30);
    client.mark();
    await waitFor(() => (client.lastState?.steps_recorded ?? 0) >= 60);
    client.mark();
    await waitFor(() => (client.lastState?.steps_recorded ?? 0) >= 100);
    clearInterval(driver);
    expect(client.marks).toHaveLength(2);

    client.stopRecord();
    await waitFor(() => stops.length > 0);
    const stop = stops[0];
    expect(stop.discarded).toBe(false);
    expect(stop.steps).toBeGreaterThanOrEqual(100);
    expect(stop.path).toBeTruthy();

    // the sim moved under our inputs
    const last = client.lastState!;
    expect(Math.abs(last.base[0] - 0.5) + Math.abs(last.base[1] - 0.25))
      .toBeGreaterThan(0.01);

    client.close();

    // datastore integrity + segmentation, via the package CLI
    const inspect = spawnSync("python3", [
      "-m", "deskbot.cli", "inspect-episode", "--file", stop.path as string,
    ], { encoding: "utf-8" });
    expect(inspect.status).toBe(0);
    expect(inspect.stdout).toContain("integrity: ok");
    expect(inspect.stdout).toContain("segments: 3");
  }, 60000);
});
