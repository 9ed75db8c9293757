"""Musical descriptor extraction, control-token binning, and user-target priors.

The tempo estimate is an onset-autocorrelation stub behind the same interface
a learned beat model would use. Stems on/off is rejected: it would need a
source-separation model.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import codec
from .tokens import VOCAB_SIZE

CONTROL_ORDER = ("bpm", "brightness", "density", "key")
CONTROL_BIN_COUNTS = (64, 32, 32, 12)
CONTROL_OFFSET = VOCAB_SIZE  # reserved block appended after the style range

BPM_RANGE = (40.0, 240.0)
BRIGHTNESS_RANGE = (100.0, 12000.0)
DENSITY_RANGE = (0.0, 16.0)

_ENVELOPE_RATE = 100  # Hz; finer than the 25 Hz codec frames for tempo lags
_ENVELOPE_HOP = codec.SAMPLE_RATE // _ENVELOPE_RATE  # 480
_ENVELOPE_WIN = 2 * _ENVELOPE_HOP
_MIN_ONSET_GAP = 5  # envelope frames (50 ms)

_BPM_EDGES = np.geomspace(*BPM_RANGE, CONTROL_BIN_COUNTS[0] + 1)
_BRIGHTNESS_EDGES = np.geomspace(*BRIGHTNESS_RANGE, CONTROL_BIN_COUNTS[1] + 1)
_DENSITY_EDGES = np.linspace(*DENSITY_RANGE, CONTROL_BIN_COUNTS[2] + 1)


@dataclass(frozen=True)
class ControlState:
    """Extracted descriptors for a span of audio. bpm is None when unknown."""

    bpm: float | None
    brightness_centroid: float
    brightness_bandwidth: float
    density: float
    key_class: int
    chroma: np.ndarray

    def __post_init__(self):
        chroma = np.asarray(self.chroma, dtype=np.float64)
        if chroma.shape != (12,):
            raise ValueError("chroma must have 12 entries")
        if chroma.min() < 0 or abs(chroma.sum() - 1.0) > 1e-9:
            raise ValueError("chroma must be non-negative and sum to 1")
        if self.bpm is not None and not BPM_RANGE[0] <= self.bpm <= BPM_RANGE[1]:
            raise ValueError(f"bpm {self.bpm} outside {BPM_RANGE}")
        if not 0 <= self.key_class < 12:
            raise ValueError("key class must be in [0, 12)")
        chroma.setflags(write=False)
        object.__setattr__(self, "chroma", chroma)


@dataclass(frozen=True)
class ControlTokens:
    """One categorical id per control, in (bpm, brightness, density, key) order."""

    ids: tuple[int, int, int, int]

    def __post_init__(self):
        ids = tuple(int(v) for v in self.ids)
        object.__setattr__(self, "ids", ids)
        for v, n in zip(ids, CONTROL_BIN_COUNTS):
            if not 0 <= v < n:
                raise ValueError(f"control id {v} outside [0, {n})")

    def to_unified(self) -> tuple[int, ...]:
        """Ids within the reserved control vocabulary block (2050+)."""
        out = []
        base = CONTROL_OFFSET
        for v, n in zip(self.ids, CONTROL_BIN_COUNTS):
            out.append(base + v)
            base += n
        return tuple(out)


@dataclass(frozen=True)
class ControlPrior:
    """Per-control logit offsets over that control's bins."""

    offsets: tuple[np.ndarray, ...]

    def __post_init__(self):
        offsets = tuple(np.asarray(o, dtype=np.float64) for o in self.offsets)
        if len(offsets) != len(CONTROL_BIN_COUNTS):
            raise ValueError(f"need {len(CONTROL_BIN_COUNTS)} offset vectors")
        for o, n in zip(offsets, CONTROL_BIN_COUNTS):
            if o.shape != (n,) or not np.all(np.isfinite(o)):
                raise ValueError("control prior offsets must be finite and bin-shaped")
            o.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)


def zero_prior() -> ControlPrior:
    return ControlPrior(tuple(np.zeros(n) for n in CONTROL_BIN_COUNTS))


# ---------------------------------------------------------------------------
# Descriptor extraction


def _mono(audio: np.ndarray) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64)
    return audio.mean(axis=1)


def _onset_envelope(mono: np.ndarray) -> np.ndarray:
    """Half-wave-rectified log-mel spectral flux at 100 Hz."""
    pad = (-mono.shape[0]) % _ENVELOPE_HOP
    mono = np.concatenate([mono, np.zeros(pad + _ENVELOPE_HOP)])
    n_frames = mono.shape[0] // _ENVELOPE_HOP - 1
    idx = np.arange(_ENVELOPE_WIN)[None, :] + _ENVELOPE_HOP * np.arange(n_frames)[:, None]
    frames = mono[idx] * np.hanning(_ENVELOPE_WIN)
    spec = np.fft.rfft(frames, n=2048, axis=1)
    power = spec.real**2 + spec.imag**2
    fb = codec._mel_filterbank()
    logmel = np.log(np.maximum(power @ fb.T, codec.LOG_FLOOR) / codec.LOG_FLOOR)
    flux = np.maximum(np.diff(logmel, axis=0), 0.0).sum(axis=1)
    return np.concatenate([[0.0], flux])


def _pick_onsets(envelope: np.ndarray) -> list[int]:
    """Local maxima above an adaptive median threshold, 50 ms apart minimum."""
    if envelope.size == 0 or envelope.max() <= 0:
        return []
    thresh_bump = 0.1 * envelope.max()
    onsets: list[int] = []
    for t in range(1, len(envelope) - 1):
        window = envelope[max(0, t - 10) : t + 11]
        if envelope[t] < np.median(window) + thresh_bump:
            continue
        if envelope[t] < envelope[t - 1] or envelope[t] < envelope[t + 1]:
            continue
        if onsets and t - onsets[-1] < _MIN_ONSET_GAP:
            continue
        onsets.append(t)
    return onsets


def _chroma(mono: np.ndarray) -> np.ndarray:
    """Fold linear-frequency power into 12 pitch classes, A440 reference."""
    win = 2048
    hop = 1024
    pad = (-mono.shape[0]) % hop
    mono = np.concatenate([mono, np.zeros(pad)])
    n_frames = max(mono.shape[0] // hop - 1, 1)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    idx = np.minimum(idx, mono.shape[0] - 1)
    frames = mono[idx] * np.hanning(win)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mean_power = power.mean(axis=0)
    freqs = np.arange(mean_power.shape[0]) * (codec.SAMPLE_RATE / win)
    mask = (freqs >= 55.0) & (freqs <= 8000.0)
    classes = (np.round(12.0 * np.log2(freqs[mask] / 440.0)).astype(int) + 9) % 12
    chroma = np.bincount(classes, weights=mean_power[mask], minlength=12)
    total = chroma.sum()
    if total <= 0:
        return np.full(12, 1.0 / 12.0)
    return chroma / total


def _estimate_bpm(envelope: np.ndarray) -> float | None:
    """Argmax of the onset-envelope autocorrelation, parabolic-refined."""
    min_lag = int(round(60.0 * _ENVELOPE_RATE / BPM_RANGE[1]))  # 25
    max_lag = int(round(60.0 * _ENVELOPE_RATE / BPM_RANGE[0]))  # 150
    if envelope.size < min_lag + 2 or envelope.max() <= 0:
        return None
    e = envelope - envelope.mean()
    full = np.correlate(e, e, mode="full")[e.size - 1 :]
    hi = min(max_lag, e.size - 2)
    if hi <= min_lag:
        return None
    lags = np.arange(min_lag, hi + 1)
    ac = full[min_lag : hi + 1]
    if ac.max() <= 0:
        return None
    best = int(np.argmax(ac))
    # impulse trains peak at integer multiples of the period; prefer the
    # smallest lag whose correlation is nearly as strong
    peak = float(ac[best])
    for div in (4, 3, 2):
        cand = lags[best] / div
        if cand < min_lag:
            continue
        lo, hi = int(np.floor(cand)), int(np.ceil(cand))
        pick = lo if full[lo] >= full[hi] else hi
        if full[pick] >= 0.8 * peak:
            best = pick - min_lag
            break
    lag = float(lags[best])
    if 0 < best < len(ac) - 1:
        a, b, c = full[int(lag) - 1], full[int(lag)], full[int(lag) + 1]
        denom = a - 2 * b + c
        if denom < 0:
            lag += 0.5 * (a - c) / denom
    bpm = 60.0 * _ENVELOPE_RATE / lag
    while bpm < BPM_RANGE[0]:
        bpm *= 2.0
    while bpm > BPM_RANGE[1]:
        bpm /= 2.0
    return float(bpm)


def extract_descriptors(audio: np.ndarray) -> ControlState:
    """Deterministic descriptor extraction over at least 2 s of stereo audio."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size == 0:
        raise ValueError("empty audio")
    duration = audio.shape[0] / codec.SAMPLE_RATE

    feats = codec.analyze(audio)
    logmel = 0.5 * (feats[:, : codec.MEL_BANDS] + feats[:, codec.MEL_BANDS :])
    weights = logmel.mean(axis=0)
    centers = codec.mel_band_centers()
    wsum = weights.sum()
    if wsum > 0:
        centroid = float((centers * weights).sum() / wsum)
        bandwidth = float(np.sqrt(((centers - centroid) ** 2 * weights).sum() / wsum))
    else:
        centroid = 0.0
        bandwidth = 0.0

    mono = _mono(audio)
    envelope = _onset_envelope(mono)
    onsets = _pick_onsets(envelope)
    density = len(onsets) / duration
    bpm = _estimate_bpm(envelope) if onsets else None
    chroma = _chroma(mono)
    return ControlState(
        bpm=bpm,
        brightness_centroid=centroid,
        brightness_bandwidth=bandwidth,
        density=density,
        key_class=int(np.argmax(chroma)),
        chroma=chroma,
    )


# ---------------------------------------------------------------------------
# Binning


def _encode_bin(value: float, edges: np.ndarray) -> int:
    # out-of-range values clamp to the edge bins
    return int(np.clip(np.searchsorted(edges, value, side="right") - 1, 0, len(edges) - 2))


def _decode_bin(bin_id: int, edges: np.ndarray) -> float:
    return float(0.5 * (edges[bin_id] + edges[bin_id + 1]))


def encode_bpm(bpm: float) -> int:
    return _encode_bin(bpm, _BPM_EDGES)


def decode_bpm(bin_id: int) -> float:
    return _decode_bin(bin_id, _BPM_EDGES)


def encode_brightness(centroid: float) -> int:
    return _encode_bin(centroid, _BRIGHTNESS_EDGES)


def decode_brightness(bin_id: int) -> float:
    return _decode_bin(bin_id, _BRIGHTNESS_EDGES)


def encode_density(density: float) -> int:
    return _encode_bin(density, _DENSITY_EDGES)


def decode_density(bin_id: int) -> float:
    return _decode_bin(bin_id, _DENSITY_EDGES)


def to_control_tokens(state: ControlState) -> ControlTokens:
    if state.bpm is None:
        raise ValueError("cannot tokenize unknown bpm")
    return ControlTokens(
        (
            encode_bpm(state.bpm),
            encode_brightness(state.brightness_centroid),
            encode_density(state.density),
            state.key_class,
        )
    )


def decode_control_tokens(tokens: ControlTokens) -> dict[str, float]:
    """Bin centers for each control id."""
    return {
        "bpm": decode_bpm(tokens.ids[0]),
        "brightness": decode_brightness(tokens.ids[1]),
        "density": decode_density(tokens.ids[2]),
        "key": float(tokens.ids[3]),
    }


_TARGET_ENCODERS = {
    "bpm": (0, encode_bpm),
    "brightness": (1, encode_brightness),
    "density": (2, encode_density),
    "key": (3, lambda v: int(v)),
}


def prior_from_targets(targets: Mapping[str, float], strength: float) -> ControlPrior:
    """Gaussian logit bump (width one bin, height `strength`) per targeted control.

    Unknown control names are rejected; "stems" is reserved but unsupported.
    """
    if strength < 0:
        raise ValueError("strength must be non-negative")
    offsets = [np.zeros(n) for n in CONTROL_BIN_COUNTS]
    for name, value in targets.items():
        if name == "stems":
            raise ValueError("stems control is reserved but not supported")
        if name not in _TARGET_ENCODERS:
            raise ValueError(f"unknown control {name!r}")
        slot, enc = _TARGET_ENCODERS[name]
        b = enc(value)
        bins = np.arange(CONTROL_BIN_COUNTS[slot])
        offsets[slot] = strength * np.exp(-0.5 * (bins - b) ** 2)
    return ControlPrior(tuple(offsets))
