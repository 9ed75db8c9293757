"""Deterministic toy audio codec: log-mel analysis, ladder RVQ, sinusoid synthesis.

The codebooks are seeded and exactly reproducible (double precision mandated),
so encode/decode are bit-stable across runs and platforms. Fidelity is a
non-goal; the token geometry (48 kHz stereo, 25 Hz frames, 1024-way levels,
coarse prefix hierarchy) is what the rest of the pipeline relies on.
"""
from __future__ import annotations

import functools
import wave
from typing import Sequence

import numpy as np

from .tokens import (
    CODEBOOK_SIZE,
    FRAMES_PER_CHUNK,
    SUPPORTED_DEPTHS,
    Chunk,
    DepthError,
    TokenFrame,
    TokenRangeError,
    chunk_from_indices,
)

SAMPLE_RATE = 48_000
FRAME_RATE = 25
SAMPLES_PER_FRAME = SAMPLE_RATE // FRAME_RATE  # 1920
SAMPLES_PER_CHUNK = SAMPLES_PER_FRAME * FRAMES_PER_CHUNK  # 96000
FFT_SIZE = 2048
MEL_BANDS = 64
FEATURE_DIM = 2 * MEL_BANDS  # both stereo channels
LOG_FLOOR = 1e-10
# Log compression applied after the floor-relative log, chosen so typical
# feature magnitudes sit inside the quantizer ladder's representable range.
FEATURE_LOG_SCALE = 0.25

CODEC_SEED = 0x000C0DEC
CODEC_LEVELS = 64
CODEC_BASE_SCALE = 2.0
CODEC_DECAY = 0.7

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(x: np.ndarray | int) -> np.ndarray:
    """Standard splitmix64 finalizer, vectorized over uint64 arrays."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64)
        z = (z + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, level: int, codeword: np.ndarray, component: np.ndarray) -> np.ndarray:
    """Map the hash of (seed, level, codeword, component) to uniform [-1, 1)."""
    h = splitmix64(np.uint64(seed))
    h = splitmix64(h ^ np.uint64(level))
    h = splitmix64(h ^ np.asarray(codeword, dtype=np.uint64))
    h = splitmix64(h[:, None] ^ np.asarray(component, dtype=np.uint64)[None, :])
    return h.astype(np.float64) * 2.0**-63 - 1.0


class LadderCodebooks:
    """Seeded residual-quantizer codebooks: per level, 1024 codewords.

    Codeword 0 is forced to zero at every level, which makes residual-norm
    monotonicity exact rather than empirical. Scales decay geometrically.
    """

    def __init__(self, seed: int, levels: int, dim: int, base_scale: float, decay: float):
        self.seed = seed
        self.levels = levels
        self.dim = dim
        self.scales = base_scale * decay ** np.arange(levels, dtype=np.float64)
        j = np.arange(CODEBOOK_SIZE, dtype=np.uint64)
        k = np.arange(dim, dtype=np.uint64)
        books = np.empty((levels, CODEBOOK_SIZE, dim), dtype=np.float64)
        for level in range(levels):
            u = hash_uniform(seed, level, j, k)
            books[level] = self.scales[level] * u
            books[level, 0, :] = 0.0
        self.codewords = books
        self.codewords.setflags(write=False)
        # squared norms, reused by every nearest-neighbour search
        self._sqnorms = np.einsum("ljk,ljk->lj", books, books)


@functools.lru_cache(maxsize=4)
def _cached_codebooks(seed: int, levels: int, dim: int, base_scale: float, decay: float) -> LadderCodebooks:
    return LadderCodebooks(seed, levels, dim, base_scale, decay)


def codec_codebooks() -> LadderCodebooks:
    return _cached_codebooks(CODEC_SEED, CODEC_LEVELS, FEATURE_DIM, CODEC_BASE_SCALE, CODEC_DECAY)


# ---------------------------------------------------------------------------
# Log-mel analysis


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=1)
def mel_band_edges() -> np.ndarray:
    """The 66 band-edge frequencies (Hz) spanning [0, 24 kHz] on the mel scale."""
    mels = np.linspace(_hz_to_mel(0.0), _hz_to_mel(SAMPLE_RATE / 2), MEL_BANDS + 2)
    return _mel_to_hz(mels)


def mel_band_centers() -> np.ndarray:
    return mel_band_edges()[1:-1]


@functools.lru_cache(maxsize=1)
def _mel_filterbank() -> np.ndarray:
    """Triangular filters, shape (MEL_BANDS, FFT_SIZE // 2 + 1)."""
    edges = mel_band_edges()
    bin_freqs = np.arange(FFT_SIZE // 2 + 1) * (SAMPLE_RATE / FFT_SIZE)
    fb = np.zeros((MEL_BANDS, FFT_SIZE // 2 + 1))
    for b in range(MEL_BANDS):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        fb[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


@functools.lru_cache(maxsize=1)
def _analysis_window() -> np.ndarray:
    return np.hanning(SAMPLES_PER_FRAME)


def _as_stereo(audio: np.ndarray) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 2 or audio.shape[1] != 2:
        raise ValueError(f"expected stereo audio of shape (n, 2), got {audio.shape}")
    return audio


def analyze(audio: np.ndarray) -> np.ndarray:
    """Audio -> feature frames, shape (n_frames, 128).

    One frame per 1920-sample hop (zero-padded to a full frame). Each frame is
    Hann-windowed within its own hop (no lookahead), transformed at 2048
    points, folded into 64 mel bands per channel, and log-compressed relative
    to the 1e-10 floor, so silence maps to an exactly-zero feature.
    """
    audio = _as_stereo(audio)
    n = audio.shape[0]
    if n == 0:
        return np.zeros((0, FEATURE_DIM))
    pad = (-n) % SAMPLES_PER_FRAME
    if pad:
        audio = np.vstack([audio, np.zeros((pad, 2))])
    n_frames = audio.shape[0] // SAMPLES_PER_FRAME
    frames = audio.reshape(n_frames, SAMPLES_PER_FRAME, 2)
    win = _analysis_window()
    out = np.empty((n_frames, FEATURE_DIM))
    fb = _mel_filterbank()
    for ch in range(2):
        spec = np.fft.rfft(frames[:, :, ch] * win, n=FFT_SIZE, axis=1)
        power = spec.real**2 + spec.imag**2
        mel = power @ fb.T
        out[:, ch * MEL_BANDS : (ch + 1) * MEL_BANDS] = FEATURE_LOG_SCALE * np.log(
            np.maximum(mel, LOG_FLOOR) / LOG_FLOOR
        )
    return out


# ---------------------------------------------------------------------------
# RVQ


def rvq_encode_frames(features: np.ndarray, depth: int, books: LadderCodebooks | None = None) -> np.ndarray:
    """Greedy residual quantization of a batch of feature vectors.

    Returns indices of shape (n_frames, depth). Ties in the nearest-neighbour
    search break toward the lowest index (np.argmin is first-occurrence).
    """
    books = books or codec_codebooks()
    if depth not in SUPPORTED_DEPTHS and not 1 <= depth <= books.levels:
        raise DepthError(f"unsupported depth {depth}")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != books.dim:
        raise ValueError(f"feature dim {features.shape[1]} != {books.dim}")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature values")
    residual = features.copy()
    indices = np.empty((features.shape[0], depth), dtype=np.int64)
    for level in range(depth):
        cw = books.codewords[level]
        # ||r - c||^2 = ||r||^2 - 2 r.c + ||c||^2; ||r||^2 is constant per row
        dists = books._sqnorms[level][None, :] - 2.0 * residual @ cw.T
        idx = np.argmin(dists, axis=1)
        indices[:, level] = idx
        residual -= cw[idx]
    return indices


def rvq_encode(feature: np.ndarray, depth: int) -> TokenFrame:
    """Quantize one 128-d feature frame to a TokenFrame."""
    if depth not in SUPPORTED_DEPTHS:
        raise DepthError(f"depth must be one of {SUPPORTED_DEPTHS}, got {depth}")
    idx = rvq_encode_frames(np.asarray(feature)[None, :], depth)[0]
    return TokenFrame(tuple(int(v) for v in idx))


def rvq_decode_frames(indices: np.ndarray, books: LadderCodebooks | None = None) -> np.ndarray:
    """Sum of selected codewords, shape (n_frames, dim)."""
    books = books or codec_codebooks()
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    if indices.size and (indices.min() < 0 or indices.max() >= CODEBOOK_SIZE):
        raise TokenRangeError("RVQ index outside [0, 1024)")
    depth = indices.shape[1]
    if depth > books.levels:
        raise DepthError(f"depth {depth} exceeds codebook ladder ({books.levels})")
    out = np.zeros((indices.shape[0], books.dim))
    for level in range(depth):
        out += books.codewords[level][indices[:, level]]
    return out


def rvq_decode(frame: TokenFrame) -> np.ndarray:
    return rvq_decode_frames(np.asarray(frame.levels)[None, :])[0]


# ---------------------------------------------------------------------------
# Sinusoid-bank synthesis

_SYNTH_REF_BAND = 32
# Power-law compression exponent for feature -> amplitude: amp = (E/E_ref)^(g/2).
# 1.0 inverts the analysis energy exactly; smaller values trade fidelity for
# loudness stability under quantization error.
SYNTH_COMPRESSION = 1.0


@functools.lru_cache(maxsize=1)
def _band_phase_steps() -> np.ndarray:
    """Per-band phase advance per sample (radians)."""
    return 2.0 * np.pi * mel_band_centers() / SAMPLE_RATE


@functools.lru_cache(maxsize=1)
def _frame_oscillator_tables() -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(SAMPLES_PER_FRAME)
    theta = _band_phase_steps()[:, None] * n[None, :]  # (bands, samples)
    return np.cos(theta), np.sin(theta)


def _synthesize_features(features: np.ndarray, phase: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Render feature frames to audio with per-band phase accumulators.

    phase has shape (2, MEL_BANDS) and is carried across calls so chunk
    boundaries stay phase-continuous.
    """
    features = np.atleast_2d(features)
    n_frames = features.shape[0]
    cos_tab, sin_tab = _frame_oscillator_tables()
    gain = _synthesis_gain()
    steps = _band_phase_steps() * SAMPLES_PER_FRAME
    audio = np.empty((n_frames * SAMPLES_PER_FRAME, 2))
    phase = phase.copy()
    for f in range(n_frames):
        for ch in range(2):
            v = features[f, ch * MEL_BANDS : (ch + 1) * MEL_BANDS]
            # compressed energy inversion; exactly-zero features stay silent
            amp = np.where(
                v > 0.0,
                np.exp((v - gain) * (SYNTH_COMPRESSION / (2.0 * FEATURE_LOG_SCALE))),
                0.0,
            )
            # a*sin(phi + theta) = a*sin(phi)*cos(theta) + a*cos(phi)*sin(theta)
            s = (amp * np.sin(phase[ch])) @ cos_tab + (amp * np.cos(phase[ch])) @ sin_tab
            audio[f * SAMPLES_PER_FRAME : (f + 1) * SAMPLES_PER_FRAME, ch] = s
        phase = np.mod(phase + steps[None, :], 2.0 * np.pi)
    return audio, phase


def _raw_band_sine(band: int, n_frames: int) -> np.ndarray:
    t = np.arange(n_frames * SAMPLES_PER_FRAME) / SAMPLE_RATE
    x = np.sin(2.0 * np.pi * mel_band_centers()[band] * t)
    return np.stack([x, x], axis=1)


@functools.lru_cache(maxsize=1)
def _synthesis_gain() -> float:
    """Reference feature value: a band at this level synthesizes unit amplitude.

    Measured once from a unit-amplitude sine at a reference band centre.
    """
    feats = analyze(_raw_band_sine(_SYNTH_REF_BAND, 4))
    return float(np.mean(feats[:, _SYNTH_REF_BAND]))


# ---------------------------------------------------------------------------
# Whole-audio encode/decode


def encode_audio(audio: np.ndarray, depth: int) -> list[Chunk]:
    """analyze + per-frame RVQ, grouped into 50-frame chunks.

    The final partial chunk is zero-padded in the feature domain.
    """
    if depth not in SUPPORTED_DEPTHS:
        raise DepthError(f"depth must be one of {SUPPORTED_DEPTHS}, got {depth}")
    feats = analyze(audio)
    if feats.shape[0] == 0:
        return []
    pad = (-feats.shape[0]) % FRAMES_PER_CHUNK
    if pad:
        feats = np.vstack([feats, np.zeros((pad, FEATURE_DIM))])
    indices = rvq_encode_frames(feats, depth)
    chunks = []
    for c in range(feats.shape[0] // FRAMES_PER_CHUNK):
        flat = indices[c * FRAMES_PER_CHUNK : (c + 1) * FRAMES_PER_CHUNK].reshape(-1)
        chunks.append(chunk_from_indices([int(v) for v in flat], depth))
    return chunks


def decode_chunks(chunks: Sequence[Chunk], phase: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Decode uniform-depth chunks to audio, returning the final phase state."""
    if not chunks:
        return np.zeros((0, 2)), initial_phase() if phase is None else phase
    depths = {c.depth for c in chunks}
    if len(depths) != 1:
        raise DepthError(f"mixed chunk depths {sorted(depths)}")
    indices = np.array([f.levels for c in chunks for f in c.frames], dtype=np.int64)
    feats = rvq_decode_frames(indices)
    if phase is None:
        phase = initial_phase()
    return _synthesize_features(feats, phase)


def decode_audio(chunks: Sequence[Chunk]) -> np.ndarray:
    audio, _ = decode_chunks(chunks)
    return audio


def initial_phase() -> np.ndarray:
    return np.zeros((2, MEL_BANDS))


# ---------------------------------------------------------------------------
# Audio file / raw-stream I/O


def audio_to_s16le(audio: np.ndarray) -> bytes:
    audio = _as_stereo(audio)
    clipped = np.clip(audio, -1.0, 1.0)
    return (np.round(clipped * 32767.0)).astype("<i2").tobytes()


def s16le_to_audio(data: bytes) -> np.ndarray:
    flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
    return flat.reshape(-1, 2)


def write_wav(path, audio: np.ndarray) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(audio_to_s16le(audio))


def read_wav(path) -> np.ndarray:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 2 or w.getsampwidth() != 2 or w.getframerate() != SAMPLE_RATE:
            raise ValueError("expected 48 kHz stereo 16-bit WAV")
        return s16le_to_audio(w.readframes(w.getnframes()))
