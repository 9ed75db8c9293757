"""Audio injection: mixing live user audio into the model's context.

User audio is never routed to the output; it only shapes the context the
model continues from. Free mode mixes input at its original timeline
alignment, looper mode tiles the previous loop across the whole window.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import codec, sampling, style
from .model import Backend, EncoderSequence

CONTEXT_SECONDS = 10
CONTEXT_SAMPLES = CONTEXT_SECONDS * codec.SAMPLE_RATE  # 480000
FADE_SECONDS = 0.25
FADE_SAMPLES = int(FADE_SECONDS * codec.SAMPLE_RATE)  # 12000


class InjectionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionConfig:
    mode: str = "free"  # "free" | "looper"
    gain: float = 1.0
    fade: bool = True
    guidance_weight: float = sampling.DEFAULT_CFG_WEIGHT
    bpm: float | None = None
    loop_beats: int | None = None
    live_prompt_weight: float = 0.0

    def __post_init__(self):
        if self.mode not in ("free", "looper"):
            raise InjectionConfigError(f"mode must be 'free' or 'looper', got {self.mode!r}")
        if self.gain < 0 or self.guidance_weight < 0 or self.live_prompt_weight < 0:
            raise InjectionConfigError("gains and weights must be non-negative")
        if self.mode == "looper":
            if self.bpm is None or self.loop_beats is None:
                raise InjectionConfigError("looper mode requires bpm and loop_beats")
            if self.bpm <= 0 or self.loop_beats < 1:
                raise InjectionConfigError("bpm must be positive, loop_beats >= 1")
            if self.loop_seconds > CONTEXT_SECONDS:
                raise InjectionConfigError(
                    f"loop of {self.loop_seconds:.2f}s exceeds the {CONTEXT_SECONDS}s context"
                )
        elif self.bpm is not None or self.loop_beats is not None:
            raise InjectionConfigError("bpm/loop_beats are looper-mode fields")

    @property
    def loop_seconds(self) -> float:
        return self.loop_beats * 60.0 / self.bpm

    @property
    def loop_samples(self) -> int:
        return int(round(self.loop_seconds * codec.SAMPLE_RATE))


def _context_shaped(model_audio: np.ndarray) -> np.ndarray:
    model_audio = np.asarray(model_audio, dtype=np.float64)
    if model_audio.shape != (CONTEXT_SAMPLES, 2):
        raise ValueError(f"model context must be 10 s stereo, got {model_audio.shape}")
    return model_audio


def build_context_free(
    model_audio: np.ndarray,
    user_audio: np.ndarray | None,
    gain: float,
    fade: bool = True,
) -> np.ndarray:
    """Free mode: user audio added at its original alignment from the window start.

    user_audio covers samples [0, len) of the window; the trailing span not
    yet received stays model-only. With fade on, a 250 ms linear ramp precedes
    the cut to silence.
    """
    mixed = _context_shaped(model_audio).copy()
    if user_audio is None or gain == 0:
        return mixed
    user = np.asarray(user_audio, dtype=np.float64)
    if user.ndim != 2 or user.shape[1] != 2:
        raise ValueError("user audio must be stereo")
    n = min(user.shape[0], CONTEXT_SAMPLES)
    if n == 0:
        return mixed
    contribution = gain * user[:n].copy()
    if fade and n < CONTEXT_SAMPLES:
        ramp_len = min(FADE_SAMPLES, n)
        ramp = np.linspace(1.0, 0.0, ramp_len, endpoint=False)
        contribution[n - ramp_len :] *= ramp[:, None]
    mixed[:n] += contribution
    return mixed


def build_context_looper(
    model_audio: np.ndarray,
    user_loop_buffer: np.ndarray | None,
    gain: float,
    bpm: float,
    loop_beats: int,
    phase: int = 0,
) -> np.ndarray:
    """Looper mode: tile the previous loop across the whole 10 s window.

    Window sample n receives loop sample (n + phase) mod loop length, so a
    known loop phase lines up with the model's output grid to +/- 1 sample.
    """
    mixed = _context_shaped(model_audio).copy()
    if user_loop_buffer is None or gain == 0:
        return mixed
    loop = np.asarray(user_loop_buffer, dtype=np.float64)
    if loop.ndim != 2 or loop.shape[1] != 2:
        raise ValueError("loop buffer must be stereo")
    cfg = InjectionConfig(mode="looper", gain=gain, bpm=bpm, loop_beats=loop_beats)
    loop_len = cfg.loop_samples
    if loop.shape[0] < loop_len:
        loop = np.vstack([loop, np.zeros((loop_len - loop.shape[0], 2))])
    loop = loop[:loop_len]
    idx = (np.arange(CONTEXT_SAMPLES) + phase) % loop_len
    mixed += gain * loop[idx]
    return mixed


def injection_logits(
    backend: Backend,
    seq_with_mix: EncoderSequence,
    seq_model_only: EncoderSequence,
    partial_target,
    w: float,
) -> np.ndarray:
    """CFG between the mixed-context branch (positive) and model-only branch."""
    pos = backend.next_logits(seq_with_mix, partial_target)
    neg = backend.next_logits(seq_model_only, partial_target)
    return sampling.cfg_combine(pos, neg, w)


def live_audio_prompt(
    user_audio: np.ndarray | None,
    weight: float,
    embedder: style.Embedder,
) -> style.PromptEntry | None:
    """PromptMix entry for the most recent (up to 10 s of) user input audio."""
    if user_audio is None:
        return None
    user = np.asarray(user_audio, dtype=np.float64)
    if user.size == 0:
        return None
    if user.shape[0] > CONTEXT_SAMPLES:
        user = user[-CONTEXT_SAMPLES:]
    return style.PromptEntry(embedder.embed_audio(user), weight)


class InputRingBuffer:
    """Timestamped capture buffer for live user audio.

    Writers append (timestamp, samples) pairs from the capture thread;
    the stream worker takes aligned snapshots at chunk boundaries. Snapshot
    reads copy under a short lock so capture is never blocked for long.
    """

    def __init__(self, capacity_samples: int = 2 * CONTEXT_SAMPLES):
        self._capacity = capacity_samples
        self._buf = np.zeros((capacity_samples, 2))
        self._written = np.zeros(capacity_samples, dtype=bool)
        self._lock = threading.Lock()
        self._latest_end = 0

    def write(self, timestamp: int, samples: np.ndarray) -> None:
        """Store samples covering output-timeline positions [timestamp, timestamp+n)."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise ValueError("samples must be stereo")
        with self._lock:
            for i in range(samples.shape[0]):
                slot = (timestamp + i) % self._capacity
                self._buf[slot] = samples[i]
                self._written[slot] = True
            self._latest_end = max(self._latest_end, timestamp + samples.shape[0])

    def snapshot(self, window_start: int, window_len: int) -> tuple[np.ndarray, int]:
        """Audio aligned to [window_start, window_start+window_len) plus coverage end.

        Returns (audio, covered) where samples at offsets >= covered carry no
        user input yet.
        """
        with self._lock:
            out = np.zeros((window_len, 2))
            covered = max(0, min(self._latest_end - window_start, window_len))
            for i in range(covered):
                slot = (window_start + i) % self._capacity
                if self._written[slot]:
                    out[i] = self._buf[slot]
            return out, covered

    @property
    def latest_end(self) -> int:
        with self._lock:
            return self._latest_end
