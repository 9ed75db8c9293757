/**
 * One-chunk jitter buffer in front of an audio sink.
 *
 * Playback starts once one full chunk is queued; afterwards each chunk is
 * scheduled back to back so the output is gapless. If the buffer runs dry at
 * a scheduling deadline, the gap is counted as an underrun and playback
 * resumes from the next arrival.
 */
import { AudioFrame, CHUNK_SECONDS } from "./protocol.js";

export interface AudioSink {
  /** Current playback clock position in seconds. */
  currentTime(): number;
  /** Schedule interleaved stereo samples to start at the given clock time. */
  schedule(samples: Float32Array, atTime: number): void;
}

export const TARGET_BUFFER_CHUNKS = 1;

export class JitterBuffer {
  private queue: AudioFrame[] = [];
  private nextPlayTime: number | null = null;
  private playedSamples = 0;
  underruns = 0;

  constructor(private readonly sink: AudioSink) {}

  get buffered(): number {
    return this.queue.length;
  }

  /** Samples handed to the sink so far; drives injection timestamps. */
  get playbackPositionSamples(): number {
    return this.playedSamples;
  }

  push(frame: AudioFrame): void {
    this.queue.push(frame);
    this.drain();
  }

  private drain(): void {
    if (this.nextPlayTime === null) {
      // one chunk of added delay buys one chunk of dropout resistance
      this.nextPlayTime =
        this.sink.currentTime() + TARGET_BUFFER_CHUNKS * CHUNK_SECONDS;
    }
    while (this.queue.length > 0) {
      const now = this.sink.currentTime();
      if (this.nextPlayTime < now) {
        // the scheduled timeline fell behind: a dropout happened
        this.underruns += 1;
        this.nextPlayTime = now;
      }
      const frame = this.queue.shift()!;
      this.sink.schedule(frame.samples, this.nextPlayTime);
      this.playedSamples += frame.samples.length / 2;
      this.nextPlayTime += CHUNK_SECONDS;
    }
  }
}
