"""The live loop: chunk-based autoregression, pacing, metrics, transitions.

One stream has one logical owner. The engine itself is stateless between
steps: everything a step needs lives in the StreamState it is handed, so a
recorded (history, style, seed) trace replays token-exactly on a fresh engine.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import codec, inject, sampling, style
from .controls import ControlPrior
from .model import (
    Backend,
    HISTORY_CHUNKS,
    assemble_encoder_sequence,
    generate_chunk,
)
from .tokens import Chunk, FRAMES_PER_CHUNK, coarse_view

CHUNK_SECONDS = 2.0
CHUNK_SAMPLES = codec.SAMPLES_PER_CHUNK  # 96000

# Output loudness normalization: the codec's exact-inverse synthesis is very
# quiet under quantization error, so the stream applies a slewed makeup gain.
TARGET_RMS = 0.08
MAX_OUTPUT_GAIN = 1e5

# Stepwise linear interpolation schedule, as (weight_b, weight_a)
TRANSITION_SCHEDULE = (
    (0.0, 1.0),
    (0.2, 0.8),
    (0.4, 0.6),
    (0.6, 0.4),
    (0.8, 0.2),
    (1.0, 0.0),
)
TRANSITION_WINDOW_SECONDS = 10
TRANSITION_CHUNKS_PER_WINDOW = 5


class StreamError(RuntimeError):
    def __init__(self, chunk_index: int, message: str):
        super().__init__(f"chunk {chunk_index}: {message}")
        self.chunk_index = chunk_index


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class FakeClock:
    """Deterministic clock for timing tests; sleep just advances time."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self._now += seconds

    def advance(self, seconds: float) -> None:
        self._now += seconds


@dataclass(frozen=True)
class EngineConfig:
    sampler: sampling.SamplerConfig = field(default_factory=sampling.SamplerConfig)
    seed: int = 0
    style_depth: int = style.DEFAULT_ACTIVE_DEPTH
    self_conditioning: bool = False


@dataclass(frozen=True)
class StreamState:
    history: tuple[Chunk, ...]
    chunk_index: int
    base_seed: int
    synth_phase: np.ndarray
    recent_audio: np.ndarray  # up to 10 s of decoded output, most recent last
    output_gain: float = 1.0

    def __post_init__(self):
        if len(self.history) > HISTORY_CHUNKS:
            raise ValueError(f"history longer than {HISTORY_CHUNKS}")


def initial_state(seed: int) -> StreamState:
    return StreamState(
        history=(),
        chunk_index=0,
        base_seed=seed,
        synth_phase=codec.initial_phase(),
        recent_audio=np.zeros((0, 2)),
    )


@dataclass(frozen=True)
class MetricsSample:
    chunk_index: int
    latency: float
    rtf_chunk: float
    rtf_cumulative: float
    delay_events: int = 0


class StreamMetrics:
    """Per-chunk latency/RTF aggregation plus underrun and delay accounting."""

    def __init__(self):
        self.samples: list[MetricsSample] = []
        self.underruns = 0
        self.delays: list[float] = []
        self._total_latency = 0.0

    @property
    def total_seconds(self) -> float:
        return CHUNK_SECONDS * len(self.samples)

    @property
    def cumulative_rtf(self) -> float:
        if self._total_latency == 0:
            return float("inf")
        return self.total_seconds / self._total_latency

    def record(self, chunk_index: int, latency: float, delay_events: int = 0) -> MetricsSample:
        self._total_latency += latency
        sample = MetricsSample(
            chunk_index=chunk_index,
            latency=latency,
            rtf_chunk=CHUNK_SECONDS / latency if latency > 0 else float("inf"),
            rtf_cumulative=(CHUNK_SECONDS * (len(self.samples) + 1)) / self._total_latency
            if self._total_latency > 0
            else float("inf"),
            delay_events=delay_events,
        )
        self.samples.append(sample)
        return sample

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["chunk_index", "L_chunk", "rtf_chunk", "rtf_cum", "delay_events"])
        for s in self.samples:
            w.writerow([s.chunk_index, f"{s.latency:.6f}", f"{s.rtf_chunk:.4f}",
                        f"{s.rtf_cumulative:.4f}", s.delay_events])
        return out.getvalue()


@dataclass(frozen=True)
class InjectionInput:
    """Per-step injection data assembled by the session layer."""

    config: inject.InjectionConfig
    user_audio: np.ndarray | None = None  # free mode: window-aligned snapshot
    loop_buffer: np.ndarray | None = None  # looper mode: previous loop
    loop_phase: int = 0


@dataclass(frozen=True)
class StepResult:
    audio: np.ndarray
    state: StreamState
    sample: MetricsSample
    control_tokens: tuple[int, ...] | None = None


class StreamEngine:
    """Generates 2 s chunks from (history, prompts, seed); owns no stream state."""

    def __init__(self, backend: Backend, embedder: style.Embedder,
                 config: EngineConfig | None = None, clock=None):
        self.backend = backend
        self.embedder = embedder
        self.config = config or EngineConfig()
        self.clock = clock or SystemClock()

    def initial_state(self) -> StreamState:
        return initial_state(self.config.seed)

    def _context_audio(self, state: StreamState) -> np.ndarray:
        audio = state.recent_audio
        if audio.shape[0] < inject.CONTEXT_SAMPLES:
            audio = np.vstack([np.zeros((inject.CONTEXT_SAMPLES - audio.shape[0], 2)), audio])
        return audio[-inject.CONTEXT_SAMPLES:]

    def step(
        self,
        state: StreamState,
        prompt_mix: style.PromptMix,
        control_prior: ControlPrior | None = None,
        injection: InjectionInput | None = None,
        metrics: StreamMetrics | None = None,
        delay_events: int = 0,
    ) -> StepResult:
        t0 = self.clock.now()
        cfg = self.config
        try:
            embedding = style.mix(prompt_mix, self.embedder)
            tokens = style.quantize_style(embedding, cfg.style_depth)
            base_seq = assemble_encoder_sequence(state.history, tokens)

            seq = base_seq
            negative_seq = None
            sampler = cfg.sampler
            if injection is not None and self._injection_active(injection):
                mixed = self._mixed_context(state, injection)
                pos_history = codec.encode_audio(mixed, depth=4)
                seq = assemble_encoder_sequence(pos_history[-HISTORY_CHUNKS:], tokens)
                negative_seq = base_seq
                sampler = replace(sampler, cfg_weight=injection.config.guidance_weight)

            result = generate_chunk(
                self.backend,
                seq,
                sampler,
                (state.base_seed, state.chunk_index),
                negative_seq=negative_seq,
                control_prior=control_prior.offsets if control_prior is not None else None,
                self_conditioning=cfg.self_conditioning,
            )
            audio, phase = codec.decode_chunks([result.chunk], state.synth_phase)
            audio, gain = self._normalize(audio, state)
        except Exception as exc:
            raise StreamError(state.chunk_index, str(exc)) from exc

        history = (state.history + (coarse_view(result.chunk),))[-HISTORY_CHUNKS:]
        recent = np.vstack([state.recent_audio, audio])[-inject.CONTEXT_SAMPLES:]
        new_state = StreamState(
            history=history,
            chunk_index=state.chunk_index + 1,
            base_seed=state.base_seed,
            synth_phase=phase,
            recent_audio=recent,
            output_gain=gain,
        )
        latency = self.clock.now() - t0
        if metrics is None:
            metrics = StreamMetrics()
        sample = metrics.record(state.chunk_index, latency, delay_events)
        return StepResult(audio, new_state, sample, result.control_tokens)

    @staticmethod
    def _normalize(audio: np.ndarray, state: StreamState) -> tuple[np.ndarray, float]:
        """Slewed makeup gain toward TARGET_RMS; exact silence stays silent."""
        rms = float(np.sqrt(np.mean(audio**2)))
        if rms > 0:
            gain = min(MAX_OUTPUT_GAIN, TARGET_RMS / rms)
        else:
            gain = state.output_gain
        start = gain if state.chunk_index == 0 else state.output_gain
        ramp = np.linspace(start, gain, audio.shape[0], endpoint=False)
        return audio * ramp[:, None], gain

    @staticmethod
    def _injection_active(injection: InjectionInput) -> bool:
        cfg = injection.config
        if cfg.gain == 0:
            return False
        buf = injection.user_audio if cfg.mode == "free" else injection.loop_buffer
        return buf is not None and buf.size > 0 and bool(np.any(buf))

    def _mixed_context(self, state: StreamState, injection: InjectionInput) -> np.ndarray:
        model_audio = self._context_audio(state)
        cfg = injection.config
        if cfg.mode == "free":
            return inject.build_context_free(model_audio, injection.user_audio, cfg.gain, cfg.fade)
        return inject.build_context_looper(
            model_audio, injection.loop_buffer, cfg.gain, cfg.bpm, cfg.loop_beats,
            phase=injection.loop_phase,
        )


def generate_stream(
    engine: StreamEngine,
    mix_for_chunk: Callable[[int], style.PromptMix],
    n_chunks: int,
    state: StreamState | None = None,
    control_prior: ControlPrior | None = None,
) -> tuple[np.ndarray, StreamMetrics, StreamState]:
    """Offline mode: run as fast as possible, no pacing."""
    if state is None:
        state = engine.initial_state()
    metrics = StreamMetrics()
    pieces = []
    for i in range(n_chunks):
        result = engine.step(state, mix_for_chunk(state.chunk_index),
                             control_prior=control_prior, metrics=metrics)
        state = result.state
        pieces.append(result.audio)
    audio = np.vstack(pieces) if pieces else np.zeros((0, 2))
    return audio, metrics, state


# ---------------------------------------------------------------------------
# Prompt transitions


@dataclass(frozen=True)
class TransitionWindow:
    index: int
    weight_a: float
    weight_b: float
    cond_cos_a: float
    cond_cos_b: float
    audio_cos_a: float
    audio_cos_b: float
    audio_cos_target: float


@dataclass(frozen=True)
class TransitionTrace:
    prompt_a: str
    prompt_b: str
    windows: tuple[TransitionWindow, ...]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["window", "weight_a", "weight_b", "cond_cos_a", "cond_cos_b",
                    "audio_cos_a", "audio_cos_b", "audio_cos_target"])
        for win in self.windows:
            w.writerow([win.index, win.weight_a, win.weight_b,
                        f"{win.cond_cos_a:.6f}", f"{win.cond_cos_b:.6f}",
                        f"{win.audio_cos_a:.6f}", f"{win.audio_cos_b:.6f}",
                        f"{win.audio_cos_target:.6f}"])
        return out.getvalue()


def transition_mix(prompt_a: str, prompt_b: str, window: int) -> style.PromptMix:
    weight_b, weight_a = TRANSITION_SCHEDULE[window]
    return style.PromptMix.of((prompt_a, weight_a), (prompt_b, weight_b))


def run_transition(
    prompt_a: str,
    prompt_b: str,
    embedder: style.Embedder,
    engine: StreamEngine,
    state: StreamState | None = None,
) -> TransitionTrace:
    """60 s stepwise-interpolated transition: 6 windows of 10 s each.

    Records, per window, cosine similarity of the window's audio embedding
    against embedding A, embedding B, and the interpolated conditioning, plus
    the conditioning's own cosines to the two endpoints.
    """
    emb_a = embedder.embed_text(prompt_a)
    emb_b = embedder.embed_text(prompt_b)
    if state is None:
        state = engine.initial_state()
    windows = []
    for k in range(len(TRANSITION_SCHEDULE)):
        mix = transition_mix(prompt_a, prompt_b, k)
        target = style.mix(mix, embedder)
        pieces = []
        for _ in range(TRANSITION_CHUNKS_PER_WINDOW):
            result = engine.step(state, mix)
            state = result.state
            pieces.append(result.audio)
        audio_emb = embedder.embed_audio(np.vstack(pieces))
        weight_b, weight_a = TRANSITION_SCHEDULE[k]
        windows.append(TransitionWindow(
            index=k,
            weight_a=weight_a,
            weight_b=weight_b,
            cond_cos_a=style.cosine(target, emb_a),
            cond_cos_b=style.cosine(target, emb_b),
            audio_cos_a=style.cosine(audio_emb, emb_a),
            audio_cos_b=style.cosine(audio_emb, emb_b),
            audio_cos_target=style.cosine(audio_emb, target),
        ))
    return TransitionTrace(prompt_a, prompt_b, tuple(windows))


# ---------------------------------------------------------------------------
# Realtime pacing


@dataclass(frozen=True)
class ControlEvent:
    time: float
    prompt_mix: style.PromptMix


@dataclass
class RealtimeReport:
    audio: np.ndarray
    metrics: StreamMetrics
    delays: list[tuple[float, int, float]]  # (event time, activation chunk, delay s)


class RealtimeRunner:
    """Producer/player pacing with a chunk queue of depth one.

    Generation of chunk i+1 starts when chunk i starts playing. If it has not
    finished by the time chunk i ends, an underrun is counted and silence is
    emitted until the chunk is ready; the stream stays sample-continuous.
    """

    def __init__(self, engine, prompt_mix: style.PromptMix, clock=None):
        self.engine = engine
        self.prompt_mix = prompt_mix
        self.clock = clock if clock is not None else getattr(engine, "clock", SystemClock())

    def run(self, seconds: float, events: Sequence[ControlEvent] = ()) -> RealtimeReport:
        n_chunks = int(np.ceil(seconds / CHUNK_SECONDS))
        pending_events = sorted(events, key=lambda e: e.time)
        waiting_activation: list[tuple[float, int]] = []
        metrics = StreamMetrics()
        state = self.engine.initial_state()
        mix = self.prompt_mix
        pieces: list[np.ndarray] = []
        delays: list[tuple[float, int, float]] = []
        deadline: float | None = None

        for i in range(n_chunks):
            now = self.clock.now()
            activations = 0
            while pending_events and pending_events[0].time <= now:
                ev = pending_events.pop(0)
                mix = ev.prompt_mix
                waiting_activation.append((ev.time, i))
                activations += 1
            result = self.engine.step(state, mix, metrics=metrics, delay_events=activations)
            state = result.state
            done = self.clock.now()
            if deadline is None:
                deadline = done  # chunk 0 playback begins as soon as it is ready
            if done > deadline:
                gap = done - deadline
                silence = np.zeros((int(round(gap * codec.SAMPLE_RATE)), 2))
                if silence.shape[0] > 0:
                    pieces.append(silence)
                    metrics.underruns += 1
                deadline = done
            play_start = deadline
            for ev_time, chunk in list(waiting_activation):
                if chunk == i:
                    d = play_start - ev_time
                    delays.append((ev_time, i, d))
                    metrics.delays.append(d)
                    waiting_activation.remove((ev_time, chunk))
            pieces.append(result.audio)
            deadline = play_start + CHUNK_SECONDS
            # queue depth 1: next generation starts once this chunk is playing
            self.clock.sleep(play_start - self.clock.now())

        audio = np.vstack(pieces) if pieces else np.zeros((0, 2))
        return RealtimeReport(audio, metrics, delays)
