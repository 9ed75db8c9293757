"""Deterministic session core shared by the WebSocket server and offline renderer.

All control mutations queue and take effect at the next chunk boundary; every
mutation is acknowledged with the chunk index at which it becomes active, so
clients can observe the control delay directly. A session's message log plus
its seed replays to a byte-identical audio stream.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import codec, controls, inject, sampling, stream, style
from .model import make_backend

AUDIO_MAGIC = b"MRTA"
INJECT_MAGIC = b"MRTI"

DEFAULT_PROMPT = "warm analog synth pads"


@dataclass(frozen=True)
class SessionConfig:
    backend: str = "pattern"
    seed: int = 0
    sampler: sampling.SamplerConfig = field(default_factory=sampling.SamplerConfig)
    injection: inject.InjectionConfig | None = None
    prompts: tuple[tuple[str, float], ...] = ((DEFAULT_PROMPT, 1.0),)
    control_targets: dict[str, float] = field(default_factory=dict)
    control_strength: float = 0.0
    style_depth: int = style.DEFAULT_ACTIVE_DEPTH
    self_conditioning: bool = False
    # read-only echoes of the engine constants
    chunk_seconds: float = stream.CHUNK_SECONDS
    history_chunks: int = 5


@dataclass(frozen=True)
class _LivePrompt:
    weight: float


@dataclass
class SessionChunk:
    chunk_index: int
    audio: np.ndarray
    metrics: stream.MetricsSample
    control_tokens: tuple[int, ...] | None
    descriptors: dict[str, Any]

    def audio_frame(self) -> bytes:
        import struct

        return AUDIO_MAGIC + struct.pack("<I", self.chunk_index) + codec.audio_to_s16le(self.audio)

    def metrics_message(self) -> dict[str, Any]:
        return {
            "type": "metrics",
            "chunk_index": self.chunk_index,
            "latency": self.metrics.latency,
            "rtf_chunk": self.metrics.rtf_chunk,
            "rtf_cum": self.metrics.rtf_cumulative,
            "delay_events": self.metrics.delay_events,
            "control_tokens": list(self.control_tokens) if self.control_tokens else None,
            "descriptors": self.descriptors,
        }


def _error(code: str, reason: str) -> dict[str, Any]:
    return {"type": "error", "code": code, "reason": reason}


class SessionCore:
    """One live stream: prompt/control state, pending mutations, generation."""

    def __init__(self, config: SessionConfig, clock=None, embedder: style.Embedder | None = None,
                 extract_descriptors: bool = True):
        self.config = config
        self.embedder = embedder or style.HashEmbedder()
        control_bins = controls.CONTROL_BIN_COUNTS if config.self_conditioning else None
        backend = make_backend(config.backend, seed=None, control_bins=control_bins)
        engine_cfg = stream.EngineConfig(
            sampler=config.sampler,
            seed=config.seed,
            style_depth=config.style_depth,
            self_conditioning=config.self_conditioning,
        )
        self.engine = stream.StreamEngine(backend, self.embedder, engine_cfg, clock=clock)
        self.state = self.engine.initial_state()
        self.metrics = stream.StreamMetrics()
        self.running = False
        self.extract_descriptors = extract_descriptors

        self._lock = threading.Lock()
        self._prompt_entries: list[tuple[Any, float]] = list(config.prompts)
        self._sampler = config.sampler
        self._prior = (
            controls.prior_from_targets(config.control_targets, config.control_strength)
            if config.control_targets
            else None
        )
        self._injection_cfg = config.injection
        self._pending: list[tuple[str, Any]] = []
        self._pending_events = 0
        self.input_buffer = inject.InputRingBuffer()

    # -- message plane -------------------------------------------------------

    def handle_message(self, message: dict[str, Any]) -> list[dict[str, Any]]:
        if not isinstance(message, dict) or "type" not in message:
            return [_error("malformed", "message must be an object with a 'type' field")]
        mtype = message["type"]
        try:
            if mtype == "set_prompts":
                entries = self._parse_prompts(message.get("prompts"))
                return [self._queue("prompts", entries, mtype)]
            if mtype == "set_sampler":
                new = replace(
                    self._sampler,
                    temperature=float(message.get("temperature", self._sampler.temperature)),
                    top_k=int(message.get("top_k", self._sampler.top_k)),
                    cfg_weight=float(message.get("cfg_weight", self._sampler.cfg_weight)),
                )
                ack = self._queue("sampler", new, mtype)
                ack["sampler"] = {
                    "temperature": new.temperature,
                    "top_k": new.top_k,
                    "cfg_weight": new.cfg_weight,
                }
                return [ack]
            if mtype == "set_controls":
                strength = float(message.get("strength", 0.0))
                targets = {
                    k: float(message[k])
                    for k in ("bpm", "brightness", "density", "key")
                    if k in message
                }
                prior = controls.prior_from_targets(targets, strength) if targets else None
                return [self._queue("prior", prior, mtype)]
            if mtype == "set_injection":
                cfg = None
                if message.get("mode"):
                    cfg = inject.InjectionConfig(
                        mode=message["mode"],
                        gain=float(message.get("gain", 1.0)),
                        fade=bool(message.get("fade", True)),
                        guidance_weight=float(
                            message.get("guidance_weight", sampling.DEFAULT_CFG_WEIGHT)
                        ),
                        bpm=message.get("bpm"),
                        loop_beats=message.get("loop_beats"),
                        live_prompt_weight=float(message.get("live_prompt_weight", 0.0)),
                    )
                return [self._queue("injection", cfg, mtype)]
            if mtype == "start":
                self.running = True
                return [{"type": "ack", "message": "start", "active_chunk": self._next_chunk()}]
            if mtype == "stop":
                self.running = False
                return [{"type": "ack", "message": "stop", "active_chunk": self._next_chunk()}]
            if mtype == "ping":
                return [{"type": "pong"}]
        except (KeyError, TypeError, ValueError, inject.InjectionConfigError) as exc:
            return [_error("bad_request", str(exc))]
        return [_error("unknown_type", f"unknown message type {mtype!r}")]

    def _parse_prompts(self, raw) -> list[tuple[Any, float]]:
        if not isinstance(raw, list) or not raw:
            raise ValueError("prompts must be a non-empty list")
        entries: list[tuple[Any, float]] = []
        for item in raw:
            weight = float(item["weight"])
            if weight < 0 or not math.isfinite(weight):
                raise ValueError("prompt weight must be finite and non-negative")
            if item.get("live"):
                entries.append((_LivePrompt(weight), weight))
            elif "text" in item:
                entries.append((str(item["text"]), weight))
            elif "embedding_ref" in item:
                entries.append((str(item["embedding_ref"]), weight))
            else:
                raise ValueError("prompt entry needs 'text', 'embedding_ref', or 'live'")
        if not any(w > 0 for _, w in entries):
            raise ValueError("at least one prompt weight must be positive")
        return entries

    def _queue(self, key: str, value, mtype: str) -> dict[str, Any]:
        with self._lock:
            self._pending.append((key, value))
            self._pending_events += 1
            return {"type": "ack", "message": mtype, "active_chunk": self._next_chunk()}

    def _next_chunk(self) -> int:
        return self.state.chunk_index

    def handle_inject_frame(self, data: bytes) -> list[dict[str, Any]]:
        import struct

        if len(data) < 8 or data[:4] != INJECT_MAGIC:
            return [_error("bad_frame", "binary frames must start with the MRTI header")]
        (timestamp,) = struct.unpack_from("<I", data, 4)
        payload = data[8:]
        if len(payload) % 4:
            return [_error("bad_frame", "payload must be whole s16le stereo frames")]
        self.input_buffer.write(int(timestamp), codec.s16le_to_audio(payload))
        return []

    # -- audio plane ----------------------------------------------------------

    def _apply_pending(self) -> int:
        with self._lock:
            for key, value in self._pending:
                if key == "prompts":
                    self._prompt_entries = value
                elif key == "sampler":
                    self._sampler = value
                    self.engine.config = replace(self.engine.config, sampler=value)
                elif key == "prior":
                    self._prior = value
                elif key == "injection":
                    self._injection_cfg = value
            self._pending.clear()
            events = self._pending_events
            self._pending_events = 0
            return events

    def _current_mix(self, live_audio: np.ndarray | None) -> style.PromptMix:
        entries = []
        for prompt, weight in self._prompt_entries:
            if isinstance(prompt, _LivePrompt):
                entry = inject.live_audio_prompt(live_audio, prompt.weight, self.embedder)
                if entry is not None:
                    entries.append(entry)
            else:
                entries.append(style.PromptEntry(prompt, weight))
        cfg = self._injection_cfg
        if cfg is not None and cfg.live_prompt_weight > 0:
            entry = inject.live_audio_prompt(live_audio, cfg.live_prompt_weight, self.embedder)
            if entry is not None:
                entries.append(entry)
        return style.PromptMix(tuple(entries))

    def _injection_input(self) -> tuple[stream.InjectionInput | None, np.ndarray | None]:
        cfg = self._injection_cfg
        window_end = self.state.chunk_index * stream.CHUNK_SAMPLES
        window_start = window_end - inject.CONTEXT_SAMPLES
        live_audio: np.ndarray | None = None
        if self.input_buffer.latest_end > 0:
            lo = max(0, window_start)
            snap, covered = self.input_buffer.snapshot(lo, window_end - lo)
            if covered > 0:
                live_audio = snap[:covered]
        if cfg is None:
            return None, live_audio
        if cfg.mode == "free":
            user = None
            if live_audio is not None:
                pad = max(0, -window_start)
                user = np.vstack([np.zeros((pad, 2)), live_audio]) if pad else live_audio
            return stream.InjectionInput(config=cfg, user_audio=user), live_audio
        loop_len = cfg.loop_samples
        loop_start = max(0, window_start - loop_len)
        loop_snap, loop_covered = self.input_buffer.snapshot(loop_start, loop_len)
        loop_buf = loop_snap if loop_covered > 0 else None
        phase = loop_start % loop_len if loop_buf is not None else 0
        return stream.InjectionInput(config=cfg, loop_buffer=loop_buf, loop_phase=phase), live_audio

    def generate_next(self) -> SessionChunk:
        events = self._apply_pending()
        injection, live_audio = self._injection_input()
        mix = self._current_mix(live_audio)
        result = self.engine.step(
            self.state, mix,
            control_prior=self._prior,
            injection=injection,
            metrics=self.metrics,
            delay_events=events,
        )
        self.state = result.state
        descriptors: dict[str, Any] = {}
        if self.extract_descriptors:
            ds = controls.extract_descriptors(result.audio)
            descriptors = {
                "bpm": ds.bpm,
                "brightness_centroid": ds.brightness_centroid,
                "density": ds.density,
                "key_class": ds.key_class,
            }
        return SessionChunk(
            chunk_index=result.sample.chunk_index,
            audio=result.audio,
            metrics=result.sample,
            control_tokens=result.control_tokens,
            descriptors=descriptors,
        )


# ---------------------------------------------------------------------------
# Offline rendering


def load_prompt_schedule(path) -> list[tuple[float, list[tuple[str, float]]]]:
    """JSON: {"prompts": [...]} for a static mix, or {"schedule": [{"time", "prompts"}]}."""
    data = json.loads(Path(path).read_text())
    if "schedule" in data:
        out = []
        for item in data["schedule"]:
            out.append((float(item["time"]),
                        [(p["text"], float(p["weight"])) for p in item["prompts"]]))
        return sorted(out, key=lambda x: x[0])
    return [(0.0, [(p["text"], float(p["weight"])) for p in data["prompts"]])]


def load_prompt_pairs(path) -> list[tuple[str, str]]:
    """One 'A -> B' pair per line."""
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a, _, b = line.partition("->")
        pairs.append((a.strip(), b.strip()))
    return pairs


def bundled_prompt_pairs() -> list[tuple[str, str]]:
    return load_prompt_pairs(Path(__file__).parent / "data" / "prompt_pairs.txt")


def render_offline(
    config: SessionConfig,
    schedule: list[tuple[float, list[tuple[str, float]]]],
    duration: float,
    out_wav,
    metrics_csv=None,
    transition_pairs: list[tuple[str, str]] | None = None,
    trace_csv=None,
) -> stream.StreamMetrics:
    """Unpaced render of `duration` seconds, trimmed exactly, plus metrics CSV."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    session = SessionCore(config, extract_descriptors=False)
    n_chunks = math.ceil(duration / stream.CHUNK_SECONDS)

    def mix_for(chunk_index: int) -> style.PromptMix:
        t = chunk_index * stream.CHUNK_SECONDS
        active = schedule[0][1]
        for start, prompts in schedule:
            if start <= t:
                active = prompts
        return style.PromptMix.of(*active)

    audio, metrics, _ = stream.generate_stream(session.engine, mix_for, n_chunks)
    n_samples = int(round(duration * codec.SAMPLE_RATE))
    try:
        codec.write_wav(out_wav, audio[:n_samples])
        if metrics_csv is not None:
            Path(metrics_csv).write_text(metrics.to_csv())
        if transition_pairs and trace_csv is not None:
            blocks = []
            for a, b in transition_pairs:
                trace = stream.run_transition(a, b, session.embedder, session.engine)
                blocks.append(f"# {a} -> {b}\n" + trace.to_csv())
            Path(trace_csv).write_text("\n".join(blocks))
    except OSError as exc:
        raise OSError(f"writing render outputs: {exc}") from exc
    return metrics
