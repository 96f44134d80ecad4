// Transport-agnostic session client: handshake, sequenced sends, message
// dispatch, and the recording state machine. The browser app hands it the
// DOM WebSocket; tests hand it the `ws` package's socket, which exposes
// the same onopen/onmessage/onclose surface.

import {
  FramePayload, HelloPayload, PROTOCOL_VERSION, SeqCounter, SessionMsg,
  StatePayload, StopRecordPayload, decodeMsg, encodeMsg,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ClientEvents {
  onHello?(p: HelloPayload): void;
  onState?(p: StatePayload): void;
  onFrame?(p: FramePayload): void;
  onStopRecord?(p: StopRecordPayload): void;
  onServerError?(code: string, message: string): void;
  onDisconnect?(): void;
  onNotice?(text: string): void;
}

export class SessionClient {
  private seq = new SeqCounter();
  private socket: SocketLike | null = null;
  private helloResolve: ((p: HelloPayload) => void) | null = null;
  private helloReject: ((e: Error) => void) | null = null;
  hello: HelloPayload | null = null;
  lastState: StatePayload | null = null;
  recording = false;
  marks: { step: number; label: string }[] = [];
  connected = false;

  constructor(private makeSocket: () => SocketLike,
              private events: ClientEvents = {}) {}

  connect(timeoutMs = 5000): Promise<HelloPayload> {
    const socket = this.makeSocket();
    this.socket = socket;
    return new Promise<HelloPayload>((resolve, reject) => {
      const timer = setTimeout(
        () => { this.helloReject = null; reject(new Error("handshake timeout")); },
        timeoutMs);
      this.helloResolve = (p) => { clearTimeout(timer); resolve(p); };
      this.helloReject = (e) => { clearTimeout(timer); reject(e); };
      socket.onopen = () => {
        socket.send(encodeMsg("hello", this.seq.take(),
                              { protocol: PROTOCOL_VERSION, role: "client" }));
      };
      socket.onmessage = (ev) => this.handleMessage(String(ev.data));
      socket.onclose = () => {
        this.connected = false;
        if (this.helloReject) this.helloReject(new Error("closed during handshake"));
        this.helloReject = null;
        this.events.onDisconnect?.();
      };
      socket.onerror = () => { /* onclose follows */ };
    });
  }

  private handleMessage(text: string): void {
    let msg: SessionMsg;
    try {
      msg = decodeMsg(text);
    } catch (e) {
      this.events.onNotice?.(`bad message from server: ${e}`);
      return;
    }
    switch (msg.kind) {
      case "hello": {
        this.hello = msg.payload as unknown as HelloPayload;
        this.connected = true;
        this.helloResolve?.(this.hello);
        this.helloResolve = null;
        this.helloReject = null;
        this.events.onHello?.(this.hello);
        break;
      }
      case "state": {
        const p = msg.payload as unknown as StatePayload;
        this.lastState = p;
        this.recording = p.recording;
        this.events.onState?.(p);
        break;
      }
      case "frame":
        this.events.onFrame?.(msg.payload as unknown as FramePayload);
        break;
      case "stop_record": {
        const p = msg.payload as unknown as StopRecordPayload;
        this.recording = false;
        this.events.onStopRecord?.(p);
        break;
      }
      case "error": {
        const code = String(msg.payload.code ?? "unknown");
        const message = String(msg.payload.message ?? "");
        const err = new Error(`server error: ${message}`);
        if (this.helloReject) { this.helloReject(err); this.helloReject = null; }
        this.events.onServerError?.(code, message);
        break;
      }
    }
  }

  private sendMsg(kind: Parameters<typeof encodeMsg>[0],
                  payload: Record<string, unknown> = {}): void {
    if (!this.socket) throw new Error("not connected");
    this.socket.send(encodeMsg(kind, this.seq.take(), payload));
  }

  sendInput(action: number[]): void {
    this.sendMsg("input", { action });
  }

  /** Start/stop toggle; stop without an active recording is a local no-op. */
  toggleRecord(): void {
    if (this.recording) {
      this.sendMsg("stop_record");
    } else {
      this.marks = [];
      this.sendMsg("start_record");
    }
  }

  stopRecord(): void {
    if (!this.recording) {
      this.events.onNotice?.("not recording; stop ignored");
      return;
    }
    this.sendMsg("stop_record");
  }

  mark(label?: string): void {
    const step = this.lastState?.steps_recorded ?? 0;
    const name = label ?? `mark${this.marks.length + 1}`;
    this.marks.push({ step, label: name });
    this.sendMsg("stage_mark", { label: name });
  }

  close(): void {
    this.socket?.close();
  }
}
