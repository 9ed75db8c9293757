"""Style embeddings: toy text/audio embedder, weighted prompt mixing, 12-token RVQ.

The toy embedder is deterministic-by-hash so tests get stable geometry; the
Embedder interface lets a real contrastive model be plugged in behind the
same contract, including one backed by precomputed embedding files.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import codec
from .codec import LadderCodebooks, _cached_codebooks, splitmix64

EMBED_DIM = 768
STYLE_TOKEN_COUNT = 12
DEFAULT_ACTIVE_DEPTH = 6
STYLE_PAD_INDEX = -1  # reserved pad; maps to <P> in the unified vocabulary

STYLE_SEED = 0x05717E
STYLE_BASE_SCALE = 1.0
STYLE_DECAY = 0.7
# Unit embeddings are quantized at this magnification so codeword norms
# (about sqrt(768/3) per level scale) sit in the quantizer's useful range;
# without it the zero codeword dominates and every prompt collapses to the
# same tokens.
STYLE_QUANT_SCALE = 128.0
_AUDIO_PROJ_SEED = 0xC0CA
_SILENCE_SEED = 0x511E4CE
_WINDOW_SECONDS = 10
_FRAMES_PER_WINDOW = _WINDOW_SECONDS * codec.FRAME_RATE  # 250


def style_codebooks() -> LadderCodebooks:
    return _cached_codebooks(STYLE_SEED, STYLE_TOKEN_COUNT, EMBED_DIM, STYLE_BASE_SCALE, STYLE_DECAY)


@dataclass(frozen=True)
class StyleEmbedding:
    """A 768-d unit vector in the joint audio/text style space."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (EMBED_DIM,):
            raise ValueError(f"style embedding must have shape ({EMBED_DIM},), got {v.shape}")
        norm = float(np.linalg.norm(v))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-9:
            raise ValueError(f"style embedding must be unit-norm, got {norm}")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_unnormalized(cls, v: np.ndarray) -> "StyleEmbedding":
        v = np.asarray(v, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("cannot normalize zero or non-finite vector")
        return cls(v / norm)


def cosine(a: StyleEmbedding, b: StyleEmbedding) -> float:
    return float(np.dot(a.vector, b.vector))


Prompt = Union[str, StyleEmbedding, np.ndarray]


@dataclass(frozen=True)
class PromptEntry:
    prompt: Prompt
    weight: float

    def __post_init__(self):
        w = float(self.weight)
        if not np.isfinite(w) or w < 0:
            raise ValueError(f"prompt weight must be finite and non-negative, got {w}")
        object.__setattr__(self, "weight", w)


@dataclass(frozen=True)
class PromptMix:
    entries: tuple[PromptEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("prompt mix needs at least one entry")
        if not any(e.weight > 0 for e in entries):
            raise ValueError("prompt mix needs at least one positive weight")

    @classmethod
    def of(cls, *pairs: tuple[Prompt, float]) -> "PromptMix":
        return cls(tuple(PromptEntry(p, w) for p, w in pairs))


@dataclass(frozen=True)
class StyleTokens:
    """12 quantizer indices; levels >= active_depth hold the reserved pad index."""

    indices: tuple[int, ...]
    active_depth: int

    def __post_init__(self):
        idx = tuple(int(v) for v in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) != STYLE_TOKEN_COUNT:
            raise ValueError(f"need exactly {STYLE_TOKEN_COUNT} style indices")
        if not 1 <= self.active_depth <= STYLE_TOKEN_COUNT:
            raise ValueError(f"active_depth must be in [1, {STYLE_TOKEN_COUNT}]")
        for pos, v in enumerate(idx):
            if pos < self.active_depth:
                if not 0 <= v < codec.CODEBOOK_SIZE:
                    raise ValueError(f"style index {v} outside [0, {codec.CODEBOOK_SIZE})")
            elif v != STYLE_PAD_INDEX:
                raise ValueError(f"position {pos} past active_depth must hold the pad index")


class Embedder:
    """Interface: maps text or stereo audio into the style space.

    Implementations must be safe to call from multiple threads.
    """

    def embed_text(self, text: str) -> StyleEmbedding:
        raise NotImplementedError

    def embed_audio(self, audio: np.ndarray) -> StyleEmbedding:
        raise NotImplementedError


def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def _text_hash64(text: str) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _hash_vector(seed: int, dim: int) -> np.ndarray:
    h = splitmix64(np.uint64(seed) ^ np.arange(dim, dtype=np.uint64))
    return h.astype(np.float64) * 2.0**-63 - 1.0


class HashEmbedder(Embedder):
    """Deterministic toy backend seeded purely from its inputs."""

    def __init__(self):
        proj = _hash_vector(_AUDIO_PROJ_SEED, codec.FEATURE_DIM * EMBED_DIM)
        self._audio_proj = proj.reshape(codec.FEATURE_DIM, EMBED_DIM) / np.sqrt(codec.FEATURE_DIM)

    def embed_text(self, text: str) -> StyleEmbedding:
        norm = _normalize_text(text)
        if not norm:
            raise ValueError("empty text prompt")
        return StyleEmbedding.from_unnormalized(_hash_vector(_text_hash64(norm), EMBED_DIM))

    def embed_audio(self, audio: np.ndarray) -> StyleEmbedding:
        audio = np.asarray(audio, dtype=np.float64)
        if audio.size == 0:
            raise ValueError("empty audio prompt")
        feats = codec.analyze(audio)
        pad = (-feats.shape[0]) % _FRAMES_PER_WINDOW
        if pad:
            feats = np.vstack([feats, np.zeros((pad, codec.FEATURE_DIM))])
        windows = feats.reshape(-1, _FRAMES_PER_WINDOW, codec.FEATURE_DIM).mean(axis=1)
        pooled = (windows @ self._audio_proj).mean(axis=0)
        if not pooled.any():
            # digital silence: a fixed, deterministic point in the style space
            pooled = _hash_vector(_SILENCE_SEED, EMBED_DIM)
        return StyleEmbedding.from_unnormalized(pooled)


class FileEmbedder(Embedder):
    """Looks text prompts up in a precomputed embedding table.

    Records are flat little-endian float32, 768 per record; the index file is
    JSON mapping prompt text to record number. Lets real model exports drive
    the engine. Audio falls back to the given backend.
    """

    def __init__(self, records_path, index_path, audio_fallback: Embedder | None = None):
        raw = np.fromfile(str(records_path), dtype="<f4")
        if raw.size % EMBED_DIM:
            raise ValueError("embedding record file size is not a multiple of 768 floats")
        self._records = raw.reshape(-1, EMBED_DIM).astype(np.float64)
        self._index = {
            _normalize_text(k): int(v)
            for k, v in json.loads(Path(index_path).read_text()).items()
        }
        self._audio_fallback = audio_fallback

    def embed_text(self, text: str) -> StyleEmbedding:
        key = _normalize_text(text)
        if key not in self._index:
            raise KeyError(f"no precomputed embedding for {text!r}")
        return StyleEmbedding.from_unnormalized(self._records[self._index[key]])

    def embed_audio(self, audio: np.ndarray) -> StyleEmbedding:
        if self._audio_fallback is None:
            raise NotImplementedError("no audio backend configured")
        return self._audio_fallback.embed_audio(audio)


def write_embedding_file(records_path, index_path, table: dict[str, np.ndarray]) -> None:
    keys = list(table)
    mat = np.stack([np.asarray(table[k], dtype="<f4") for k in keys])
    mat.astype("<f4").tofile(str(records_path))
    Path(index_path).write_text(json.dumps({k: i for i, k in enumerate(keys)}))


def resolve_prompt(prompt: Prompt, embedder: Embedder) -> StyleEmbedding:
    if isinstance(prompt, StyleEmbedding):
        return prompt
    if isinstance(prompt, str):
        return embedder.embed_text(prompt)
    return embedder.embed_audio(np.asarray(prompt))


def mix(prompt_mix: PromptMix, embedder: Embedder) -> StyleEmbedding:
    """Weighted average of entry embeddings, L2-normalized.

    Invariant under uniform weight rescaling and entry permutation.
    """
    total = sum(e.weight for e in prompt_mix.entries)
    if total <= 0:
        raise ValueError("prompt weights sum to zero")
    acc = np.zeros(EMBED_DIM)
    for entry in prompt_mix.entries:
        if entry.weight == 0:
            continue
        acc += (entry.weight / total) * resolve_prompt(entry.prompt, embedder).vector
    return StyleEmbedding.from_unnormalized(acc)


def quantize_style(embedding: StyleEmbedding, active_depth: int = DEFAULT_ACTIVE_DEPTH) -> StyleTokens:
    """12-level ladder RVQ over the style space; inactive levels are padded."""
    if not 1 <= active_depth <= STYLE_TOKEN_COUNT:
        raise ValueError(f"active_depth must be in [1, {STYLE_TOKEN_COUNT}]")
    books = style_codebooks()
    scaled = embedding.vector * STYLE_QUANT_SCALE
    idx = codec.rvq_encode_frames(scaled[None, :], active_depth, books)[0]
    indices = [int(v) for v in idx] + [STYLE_PAD_INDEX] * (STYLE_TOKEN_COUNT - active_depth)
    return StyleTokens(tuple(indices), active_depth)


def dequantize_style(tokens: StyleTokens) -> np.ndarray:
    """Unnormalized reconstruction: sum of codewords over the active levels."""
    books = style_codebooks()
    out = np.zeros(EMBED_DIM)
    for level in range(tokens.active_depth):
        out += books.codewords[level][tokens.indices[level]]
    return out / STYLE_QUANT_SCALE
