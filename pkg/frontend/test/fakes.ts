import { AudioSink } from "../src/jitter.js";
import { Clock } from "../src/transition.js";

interface Scheduled {
  fireAt: number;
  fn: () => void;
  handle: number;
}

/** Deterministic virtual clock; advance() fires due timeouts in order. */
export class FakeClock implements Clock {
  private t = 0;
  private nextHandle = 1;
  private scheduled: Scheduled[] = [];

  now(): number {
    return this.t;
  }

  setTimeout(fn: () => void, ms: number): number {
    const handle = this.nextHandle++;
    this.scheduled.push({ fireAt: this.t + ms, fn, handle });
    return handle;
  }

  clearTimeout(handle: number): void {
    this.scheduled = this.scheduled.filter((s) => s.handle !== handle);
  }

  advance(ms: number): void {
    const target = this.t + ms;
    for (;;) {
      const due = this.scheduled
        .filter((s) => s.fireAt <= target)
        .sort((a, b) => a.fireAt - b.fireAt)[0];
      if (!due) break;
      this.scheduled = this.scheduled.filter((s) => s.handle !== due.handle);
      this.t = due.fireAt;
      due.fn();
    }
    this.t = target;
  }
}

export class FakeSink implements AudioSink {
  readonly schedules: { atTime: number; frames: number }[] = [];

  constructor(private readonly clock: FakeClock) {}

  currentTime(): number {
    return this.clock.now() / 1000;
  }

  schedule(samples: Float32Array, atTime: number): void {
    this.schedules.push({ atTime, frames: samples.length / 2 });
  }
}
