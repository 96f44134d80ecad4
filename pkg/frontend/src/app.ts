// Browser wiring: canvas view, telemetry panel, keyboard capture, and the
// 30 Hz input loop. All simulation state originates from gateway messages;
// this page is a pure input/display peer.

import { defaultBindings } from "./bindings.js";
import { SessionClient, SocketLike } from "./client.js";
import { InputSampler } from "./input.js";
import { FramePayload, StatePayload } from "./protocol.js";

const INPUT_HZ = 30;
const STALE_FRAME_MS = 500;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function fmt(x: number): string {
  return x.toFixed(3);
}

export function startCockpit(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const banner = el<HTMLDivElement>("banner");
  const telemetry = el<HTMLPreElement>("telemetry");
  const markList = el<HTMLUListElement>("marks");
  const noticeBox = el<HTMLDivElement>("notice");
  const retryBtn = el<HTMLButtonElement>("retry");
  const urlInput = el<HTMLInputElement>("server-url");

  const sampler = new InputSampler(defaultBindings());
  let lastFrameAt = 0;

  const showBanner = (text: string, show: boolean) => {
    banner.textContent = text;
    banner.style.display = show ? "block" : "none";
  };
  const notice = (text: string) => {
    noticeBox.textContent = text;
    setTimeout(() => { if (noticeBox.textContent === text) noticeBox.textContent = ""; }, 2500);
  };

  const client = new SessionClient(
    () => new WebSocket(urlInput.value) as unknown as SocketLike,
    {
      onState: (p: StatePayload) => renderTelemetry(p),
      onFrame: (p: FramePayload) => {
        lastFrameAt = performance.now();
        const img = new Image();
        img.onload = () => ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
        img.src = `data:image/png;base64,${p.png_b64}`;
      },
      onStopRecord: (p) => notice(
        p.discarded ? "recording discarded (no steps)"
                    : `saved ${p.steps} steps -> ${p.path}`),
      onServerError: (code, message) => showBanner(`error [${code}]: ${message}`, true),
      onDisconnect: () => showBanner("disconnected - check the gateway", true),
      onNotice: notice,
    });

  function renderTelemetry(p: StatePayload): void {
    const stage = `${p.stage_idx}/${p.stages_total}`;
    const rec = p.recording ? `RECORDING (${p.steps_recorded} steps)` : "idle";
    telemetry.textContent = [
      `t      ${p.t}`,
      `base   x=${fmt(p.base[0])} y=${fmt(p.base[1])} th=${fmt(p.base[2])}`,
      `arm L  ${p.qpos[0].map(fmt).join(" ")}  grip ${fmt(p.grip[0])}`,
      `arm R  ${p.qpos[1].map(fmt).join(" ")}  grip ${fmt(p.grip[1])}`,
      `stage  ${stage}`,
      `record ${rec}`,
    ].join("\n");
    markList.innerHTML = "";
    for (const m of client.marks) {
      const li = document.createElement("li");
      li.textContent = `step ${m.step}: ${m.label}`;
      markList.appendChild(li);
    }
  }

  document.addEventListener("keydown", (e) => {
    if (sampler.keyDown(e.code, e.repeat)) e.preventDefault();
  });
  document.addEventListener("keyup", (e) => {
    if (sampler.keyUp(e.code)) e.preventDefault();
  });
  window.addEventListener("blur", () => sampler.releaseAll());

  setInterval(() => {
    if (!client.connected) return;
    for (const shot of sampler.takeOneShots()) {
      if (shot === "stage_mark") {
        if (client.recording) client.mark();
        else notice("not recording; mark ignored");
      } else {
        client.toggleRecord();
      }
    }
    client.sendInput(sampler.sampleAction());
  }, 1000 / INPUT_HZ);

  setInterval(() => {
    const stale = performance.now() - lastFrameAt > STALE_FRAME_MS;
    if (client.connected && stale && lastFrameAt > 0) {
      showBanner("stale frame - no updates from gateway", true);
    } else if (client.connected && !stale) {
      showBanner("", false);
    }
  }, 250);

  const connect = () => {
    showBanner("connecting...", true);
    client.connect().then(
      (hello) => {
        showBanner("", false);
        notice(`connected: ${hello.task} (seed ${hello.seed})`);
      },
      (err) => showBanner(`connection failed: ${err.message}`, true));
  };
  retryBtn.addEventListener("click", connect);
  connect();
}

startCockpit();
