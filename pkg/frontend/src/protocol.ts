// Wire protocol mirror of the gateway session: JSON text messages with a
// per-direction strictly increasing sequence number.

export const PROTOCOL_VERSION = 1;

export type MsgKind =
  | "hello"
  | "state"
  | "frame"
  | "input"
  | "stage_mark"
  | "start_record"
  | "stop_record"
  | "error";

export interface SessionMsg {
  kind: MsgKind;
  seq: number;
  payload: Record<string, unknown>;
}

export interface HelloPayload {
  protocol: number;
  role: string;
  task: string;
  seed: number;
  dt: number;
  action_dim: number;
  cameras: string[];
  stage_names: string[];
}

export interface StatePayload {
  t: number;
  base: [number, number, number];
  qpos: number[][];
  grip: number[];
  stage_idx: number;
  stages_total: number;
  recording: boolean;
  steps_recorded: number;
  events: string[];
}

export interface FramePayload {
  camera: string;
  t: number;
  png_b64: string;
}

export interface StopRecordPayload {
  discarded: boolean;
  steps: number;
  path?: string;
}

const KINDS: ReadonlySet<string> = new Set([
  "hello", "state", "frame", "input", "stage_mark",
  "start_record", "stop_record", "error",
]);

export function encodeMsg(kind: MsgKind, seq: number,
                          payload: Record<string, unknown> = {}): string {
  return JSON.stringify({ kind, seq, payload });
}

export function decodeMsg(text: string): SessionMsg {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new Error(`not JSON: ${text.slice(0, 80)}`);
  }
  const msg = raw as SessionMsg;
  if (typeof msg !== "object" || msg === null) throw new Error("not an object");
  if (!KINDS.has(msg.kind)) throw new Error(`unknown message kind: ${msg.kind}`);
  if (!Number.isInteger(msg.seq) || msg.seq < 0) {
    throw new Error(`bad sequence number: ${msg.seq}`);
  }
  if (typeof msg.payload !== "object" || msg.payload === null) {
    throw new Error("missing payload");
  }
  return msg;
}

/** Outbound sequence numbering: strictly increasing, starting at 0. */
export class SeqCounter {
  private next = 0;

  take(): number {
    return this.next++;
  }

  get current(): number {
    return this.next - 1;
  }
}
