/**
 * Browser-side session controller: a pure client of the wire protocol.
 *
 * Owns the control plane (debounced steering messages, ack bookkeeping for
 * activation-delay display), the data plane (jitter-buffered playback,
 * mic injection timestamped against the playback clock), and the metrics
 * readout. It never synthesizes audio locally; every displayed number comes
 * from server messages.
 */
import { AudioSink, JitterBuffer } from "./jitter.js";
import {
  AckMessage,
  ClientMessage,
  ErrorMessage,
  MetricsMessage,
  PromptRow,
  clampWeight,
  decodeAudioFrame,
  encodeClientMessage,
  encodeInjectFrame,
  parseServerMessage,
} from "./protocol.js";
import { Clock, TransitionRunner, systemClock } from "./transition.js";

export interface Transport {
  send(data: string | Uint8Array): void;
  close(): void;
}

export const STEER_DEBOUNCE_MS = 100;

export interface SessionViewState {
  connected: boolean;
  running: boolean;
  prompts: PromptRow[];
  sampler: Record<string, number>;
  metrics: MetricsMessage | null;
  /** Seconds between sending a mutation and its activation chunk's start. */
  lastActivationDelay: number | null;
  underruns: number;
  errors: ErrorMessage[];
  micGain: number;
  injectionMode: "free" | "looper";
}

export class SessionController {
  readonly view: SessionViewState = {
    connected: false,
    running: false,
    prompts: [],
    sampler: {},
    metrics: null,
    lastActivationDelay: null,
    underruns: 0,
    errors: [],
    micGain: 0,
    injectionMode: "free",
  };

  /** Raw audio payload bytes in arrival order; the bit-identity witness. */
  readonly receivedAudio: Uint8Array[] = [];

  private jitter: JitterBuffer | null = null;
  private pendingSends: { message: string; sentAtMs: number }[] = [];
  private debounce: Map<string, number> = new Map();
  private transition: TransitionRunner | null = null;

  constructor(
    private readonly transport: Transport,
    private readonly clock: Clock = systemClock,
    sink?: AudioSink,
  ) {
    if (sink) this.jitter = new JitterBuffer(sink);
    this.view.connected = true;
  }

  // -- control plane -------------------------------------------------------

  start(): void {
    this.sendNow({ type: "start" });
    this.view.running = true;
  }

  stop(): void {
    this.sendNow({ type: "stop" });
    this.view.running = false;
  }

  setPrompts(prompts: PromptRow[]): void {
    const clamped = prompts.map((p) => ({ ...p, weight: clampWeight(p.weight) }));
    this.view.prompts = clamped;
    this.steer({ type: "set_prompts", prompts: clamped });
  }

  setSampler(update: { temperature?: number; top_k?: number; cfg_weight?: number }): void {
    this.steer({ type: "set_sampler", ...update });
  }

  setControls(update: {
    bpm?: number;
    brightness?: number;
    density?: number;
    key?: number;
    strength?: number;
  }): void {
    this.steer({ type: "set_controls", ...update });
  }

  setInjection(mode: "free" | "looper", gain: number, bpm?: number, loopBeats?: number): void {
    this.view.injectionMode = mode;
    this.view.micGain = gain;
    const message: ClientMessage =
      mode === "looper"
        ? { type: "set_injection", mode, gain, bpm, loop_beats: loopBeats }
        : { type: "set_injection", mode, gain };
    this.sendNow(message);
  }

  /** Runs the 6-step stepwise interpolation between two prompt rows. */
  startTransition(promptA: string, promptB: string, onDone?: () => void): TransitionRunner {
    this.transition?.cancel();
    this.transition = new TransitionRunner(
      promptA,
      promptB,
      (message) => this.sendNow(message),
      this.clock,
      onDone,
    );
    this.transition.start();
    return this.transition;
  }

  /** Debounced steering: coalesces rapid slider moves per message type. */
  private steer(message: ClientMessage): void {
    const prior = this.debounce.get(message.type);
    if (prior !== undefined) this.clock.clearTimeout(prior);
    this.debounce.set(
      message.type,
      this.clock.setTimeout(() => {
        this.debounce.delete(message.type);
        this.sendNow(message);
      }, STEER_DEBOUNCE_MS),
    );
  }

  private sendNow(message: ClientMessage): void {
    this.pendingSends.push({
      message: message.type,
      sentAtMs: this.clock.now(),
    });
    this.transport.send(encodeClientMessage(message));
  }

  // -- data plane -----------------------------------------------------------

  /**
   * Send a block of mic audio. Timestamps come from the playback clock so
   * free-mode alignment is meaningful end to end. With the mic muted
   * (gain 0) nothing is sent: the server's gain-0 short circuit then makes
   * the session bit-identical to one with no injection at all.
   */
  injectMic(samples: Float32Array): void {
    if (this.view.micGain === 0) return;
    const scaled = new Float32Array(samples.length);
    for (let i = 0; i < samples.length; i++) scaled[i] = samples[i] * this.view.micGain;
    const timestamp = this.jitter ? this.jitter.playbackPositionSamples : 0;
    this.transport.send(encodeInjectFrame(timestamp, scaled));
  }

  // -- inbound --------------------------------------------------------------

  handleBinary(data: Uint8Array): void {
    const frame = decodeAudioFrame(data);
    this.receivedAudio.push(data.slice(8));
    this.jitter?.push(frame);
    if (this.jitter) this.view.underruns = this.jitter.underruns;
  }

  handleText(text: string): void {
    const message = parseServerMessage(text);
    switch (message.type) {
      case "ack":
        this.handleAck(message);
        break;
      case "error":
        this.view.errors.push(message);
        break;
      case "metrics":
        this.view.metrics = message;
        break;
      case "pong":
        break;
    }
  }

  private handleAck(ack: AckMessage): void {
    if (ack.sampler) this.view.sampler = { ...this.view.sampler, ...ack.sampler };
    const idx = this.pendingSends.findIndex((p) => p.message === ack.message);
    if (idx < 0) return;
    const { sentAtMs } = this.pendingSends.splice(idx, 1)[0];
    const metrics = this.view.metrics;
    const playedChunks = metrics ? metrics.chunk_index + 1 : 0;
    // delay = time until the activation chunk starts on the session timeline
    const chunksAway = Math.max(0, ack.active_chunk - playedChunks);
    const elapsed = (this.clock.now() - sentAtMs) / 1000;
    this.view.lastActivationDelay = elapsed + chunksAway * 2.0;
  }

  close(): void {
    this.transition?.cancel();
    for (const handle of this.debounce.values()) this.clock.clearTimeout(handle);
    this.debounce.clear();
    this.transport.close();
    this.view.connected = false;
  }
}
