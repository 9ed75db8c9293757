/**
 * Wire protocol for the livejam streaming service.
 *
 * Control plane: UTF-8 text frames holding one JSON object with a "type"
 * field. Data plane: binary frames with an 8-byte little-endian header
 * (4-byte magic + 4-byte uint32) followed by interleaved s16le stereo PCM.
 * "MRTA" frames carry server audio keyed by chunk index; "MRTI" frames carry
 * injected client audio keyed by a sample timestamp on the output timeline.
 */

export const SAMPLE_RATE = 48000;
export const CHANNELS = 2;
export const CHUNK_SECONDS = 2.0;
export const CHUNK_SAMPLES = SAMPLE_RATE * CHUNK_SECONDS;

export const AUDIO_MAGIC = "MRTA";
export const INJECT_MAGIC = "MRTI";
const HEADER_BYTES = 8;

export interface PromptRow {
  text?: string;
  live?: boolean;
  weight: number;
}

export type ClientMessage =
  | { type: "set_prompts"; prompts: PromptRow[] }
  | { type: "set_sampler"; temperature?: number; top_k?: number; cfg_weight?: number }
  | {
      type: "set_controls";
      bpm?: number;
      brightness?: number;
      density?: number;
      key?: number;
      strength?: number;
    }
  | {
      type: "set_injection";
      mode: "free" | "looper";
      gain: number;
      bpm?: number;
      loop_beats?: number;
    }
  | { type: "start" }
  | { type: "stop" }
  | { type: "ping" };

export interface AckMessage {
  type: "ack";
  message: string;
  active_chunk: number;
  sampler?: Record<string, number>;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  reason: string;
}

export interface MetricsMessage {
  type: "metrics";
  chunk_index: number;
  rtf_chunk: number;
  rtf_cum: number;
  descriptors?: Record<string, number | null>;
}

export type ServerMessage =
  | AckMessage
  | ErrorMessage
  | MetricsMessage
  | { type: "pong" };

export interface AudioFrame {
  chunkIndex: number;
  /** Interleaved stereo samples in [-1, 1). */
  samples: Float32Array;
}

function magicOf(data: Uint8Array): string {
  return String.fromCharCode(data[0], data[1], data[2], data[3]);
}

export function s16leToFloat32(bytes: Uint8Array): Float32Array {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const out = new Float32Array(bytes.byteLength / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getInt16(i * 2, true) / 32768;
  }
  return out;
}

export function float32ToS16le(samples: Float32Array): Uint8Array {
  const out = new Uint8Array(samples.length * 2);
  const view = new DataView(out.buffer);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1 - 1 / 32768, samples[i]));
    view.setInt16(i * 2, Math.round(clamped * 32768), true);
  }
  return out;
}

export function decodeAudioFrame(data: Uint8Array): AudioFrame {
  if (data.byteLength < HEADER_BYTES || magicOf(data) !== AUDIO_MAGIC) {
    throw new Error("not an audio frame");
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  return {
    chunkIndex: view.getUint32(4, true),
    samples: s16leToFloat32(data.subarray(HEADER_BYTES)),
  };
}

export function encodeInjectFrame(
  timestampSamples: number,
  samples: Float32Array,
): Uint8Array {
  const payload = float32ToS16le(samples);
  const out = new Uint8Array(HEADER_BYTES + payload.length);
  out[0] = 77; // M
  out[1] = 82; // R
  out[2] = 84; // T
  out[3] = 73; // I
  new DataView(out.buffer).setUint32(4, timestampSamples >>> 0, true);
  out.set(payload, HEADER_BYTES);
  return out;
}

export function decodeInjectFrame(data: Uint8Array): {
  timestampSamples: number;
  samples: Float32Array;
} {
  if (data.byteLength < HEADER_BYTES || magicOf(data) !== INJECT_MAGIC) {
    throw new Error("not an inject frame");
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  return {
    timestampSamples: view.getUint32(4, true),
    samples: s16leToFloat32(data.subarray(HEADER_BYTES)),
  };
}

export function parseServerMessage(text: string): ServerMessage {
  const obj = JSON.parse(text);
  if (typeof obj !== "object" || obj === null || typeof obj.type !== "string") {
    throw new Error("malformed server message");
  }
  return obj as ServerMessage;
}

export function encodeClientMessage(message: ClientMessage): string {
  return JSON.stringify(message);
}

export function clampWeight(w: number): number {
  if (!Number.isFinite(w)) return 0;
  return Math.max(0, Math.min(1, w));
}
