/**
 * Automated prompt transitions: stepwise linear interpolation between two
 * prompt rows over 6 windows of 10 seconds each.
 */
import { ClientMessage, clampWeight } from "./protocol.js";

/** Per window: [weight of incoming prompt B, weight of outgoing prompt A]. */
export const TRANSITION_SCHEDULE: ReadonlyArray<readonly [number, number]> = [
  [0.0, 1.0],
  [0.2, 0.8],
  [0.4, 0.6],
  [0.6, 0.4],
  [0.8, 0.2],
  [1.0, 0.0],
];

export const TRANSITION_WINDOW_SECONDS = 10;

export interface Clock {
  /** Monotonic time in milliseconds. */
  now(): number;
  setTimeout(fn: () => void, ms: number): number;
  clearTimeout(handle: number): void;
}

export const systemClock: Clock = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms) as unknown as number,
  clearTimeout: (handle) => clearTimeout(handle),
};

export interface TransitionEmission {
  window: number;
  atMs: number;
  message: ClientMessage;
}

/**
 * Emits the 6 scheduled set_prompts messages at 10 second intervals.
 * Timing comes from the injected clock so tests can run it virtually.
 */
export class TransitionRunner {
  private handle: number | null = null;
  private window = 0;
  readonly emissions: TransitionEmission[] = [];

  constructor(
    private readonly promptA: string,
    private readonly promptB: string,
    private readonly send: (message: ClientMessage) => void,
    private readonly clock: Clock = systemClock,
    private readonly onDone?: () => void,
  ) {}

  get running(): boolean {
    return this.handle !== null || (this.window > 0 && this.window < TRANSITION_SCHEDULE.length);
  }

  start(): void {
    if (this.window !== 0 || this.handle !== null) {
      throw new Error("transition already started");
    }
    this.emit();
  }

  cancel(): void {
    if (this.handle !== null) {
      this.clock.clearTimeout(this.handle);
      this.handle = null;
    }
  }

  private emit(): void {
    const [weightB, weightA] = TRANSITION_SCHEDULE[this.window];
    const message: ClientMessage = {
      type: "set_prompts",
      prompts: [
        { text: this.promptA, weight: clampWeight(weightA) },
        { text: this.promptB, weight: clampWeight(weightB) },
      ],
    };
    this.emissions.push({ window: this.window, atMs: this.clock.now(), message });
    this.send(message);
    this.window += 1;
    if (this.window < TRANSITION_SCHEDULE.length) {
      this.handle = this.clock.setTimeout(() => {
        this.handle = null;
        this.emit();
      }, TRANSITION_WINDOW_SECONDS * 1000);
    } else {
      this.handle = null;
      this.onDone?.();
    }
  }
}
