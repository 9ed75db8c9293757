"""Token geometry: RVQ frames, 2 s chunks, and the unified id space.

All types here are immutable values and safe to share across threads.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

CODEBOOK_SIZE = 1024
FRAMES_PER_CHUNK = 50  # 2 s at 25 Hz
SUPPORTED_DEPTHS = (4, 16, 64)
COARSE_DEPTH = 4
TARGET_DEPTH = 16

# Unified id layout: specials first, then codec indices, then style indices.
PAD_ID = 0
START_ID = 1
CODEC_OFFSET = 2
STYLE_OFFSET = CODEC_OFFSET + CODEBOOK_SIZE  # 1026
VOCAB_SIZE = STYLE_OFFSET + CODEBOOK_SIZE  # 2050

_CHUNK_MAGIC = b"MRT0"


class TokenRangeError(ValueError):
    """An RVQ or unified index fell outside its legal range."""


class DepthError(ValueError):
    """A frame or chunk had an unsupported or mismatched depth."""


@dataclass(frozen=True)
class TokenFrame:
    """One 40 ms frame of RVQ indices at a fixed depth tier."""

    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) not in SUPPORTED_DEPTHS:
            raise DepthError(f"unsupported depth {len(levels)}, expected one of {SUPPORTED_DEPTHS}")
        for v in levels:
            if not 0 <= v < CODEBOOK_SIZE:
                raise TokenRangeError(f"RVQ index {v} outside [0, {CODEBOOK_SIZE})")

    @property
    def depth(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class Chunk:
    """Exactly 50 TokenFrames (2 s of audio) sharing one depth."""

    frames: tuple[TokenFrame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if len(frames) != FRAMES_PER_CHUNK:
            raise ValueError(f"chunk needs exactly {FRAMES_PER_CHUNK} frames, got {len(frames)}")
        depths = {f.depth for f in frames}
        if len(depths) != 1:
            raise DepthError(f"chunk frames have mixed depths {sorted(depths)}")

    @property
    def depth(self) -> int:
        return self.frames[0].depth

    def indices(self) -> list[int]:
        """All RVQ indices, frame-major then level-major."""
        return [v for f in self.frames for v in f.levels]


def unify_special(name: str) -> int:
    if name == "<P>":
        return PAD_ID
    if name == "<S>":
        return START_ID
    raise TokenRangeError(f"unknown special token {name!r}")


def unify_codec(index: int) -> int:
    if not 0 <= index < CODEBOOK_SIZE:
        raise TokenRangeError(f"codec index {index} outside [0, {CODEBOOK_SIZE})")
    return CODEC_OFFSET + index


def unify_style(index: int) -> int:
    if not 0 <= index < CODEBOOK_SIZE:
        raise TokenRangeError(f"style index {index} outside [0, {CODEBOOK_SIZE})")
    return STYLE_OFFSET + index


def from_unified(uid: int) -> tuple[str, int | None]:
    """Inverse of the unify_* maps: returns (kind, index)."""
    if uid == PAD_ID:
        return ("<P>", None)
    if uid == START_ID:
        return ("<S>", None)
    if CODEC_OFFSET <= uid < STYLE_OFFSET:
        return ("codec", uid - CODEC_OFFSET)
    if STYLE_OFFSET <= uid < VOCAB_SIZE:
        return ("style", uid - STYLE_OFFSET)
    raise TokenRangeError(f"unified id {uid} outside [0, {VOCAB_SIZE})")


def coarse_view(chunk: Chunk) -> Chunk:
    """Project a chunk down to its first 4 RVQ levels (the audio-history tier)."""
    if chunk.depth < COARSE_DEPTH:
        raise DepthError(f"cannot take coarse view of depth-{chunk.depth} chunk")
    if chunk.depth == COARSE_DEPTH:
        return chunk
    return Chunk(tuple(TokenFrame(f.levels[:COARSE_DEPTH]) for f in chunk.frames))


def chunk_from_indices(indices: Sequence[int], depth: int) -> Chunk:
    """Build a chunk from a flat frame-major index list."""
    if len(indices) != FRAMES_PER_CHUNK * depth:
        raise ValueError(f"expected {FRAMES_PER_CHUNK * depth} indices, got {len(indices)}")
    frames = tuple(
        TokenFrame(tuple(indices[i * depth : (i + 1) * depth])) for i in range(FRAMES_PER_CHUNK)
    )
    return Chunk(frames)


def chunk_to_bytes(chunk: Chunk) -> bytes:
    """Serialize: 8-byte header (magic, depth, frame count) + LE uint16 unified ids."""
    header = struct.pack("<4sBHx", _CHUNK_MAGIC, chunk.depth, FRAMES_PER_CHUNK)
    ids = [unify_codec(v) for v in chunk.indices()]
    return header + struct.pack(f"<{len(ids)}H", *ids)


def chunk_from_bytes(data: bytes) -> Chunk:
    magic, depth, count = struct.unpack_from("<4sBHx", data)
    if magic != _CHUNK_MAGIC:
        raise ValueError(f"bad chunk magic {magic!r}")
    if count != FRAMES_PER_CHUNK:
        raise ValueError(f"bad frame count {count}")
    n = count * depth
    ids = struct.unpack_from(f"<{n}H", data, 8)
    indices = []
    for uid in ids:
        kind, idx = from_unified(uid)
        if kind != "codec":
            raise TokenRangeError(f"non-codec id {uid} in serialized chunk")
        indices.append(idx)
    return chunk_from_indices(indices, depth)


def chunks_to_bytes(chunks: Iterable[Chunk]) -> bytes:
    return b"".join(chunk_to_bytes(c) for c in chunks)
