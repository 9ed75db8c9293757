"""Encoder-sequence assembly and the generative backend contract.

Two reference backends ship with the engine: a deterministic pattern backend
(copies the most recent history chunk, useful as an exactly-predictable test
double and fast enough for realtime) and a tiny seeded transformer with a
frame-level temporal module and a per-frame depth module. Neither is trained;
the mechanisms under test are streaming, causality, and sampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import sampling
from .tokens import (
    CODEBOOK_SIZE,
    CODEC_OFFSET,
    COARSE_DEPTH,
    FRAMES_PER_CHUNK,
    PAD_ID,
    STYLE_OFFSET,
    VOCAB_SIZE,
    Chunk,
    DepthError,
    TokenFrame,
    chunk_from_indices,
    unify_codec,
    unify_style,
)
from .style import STYLE_PAD_INDEX, STYLE_TOKEN_COUNT, StyleTokens

HISTORY_CHUNKS = 5
AUDIO_SPAN = HISTORY_CHUNKS * FRAMES_PER_CHUNK * COARSE_DEPTH  # 1000
SEQ_LEN = AUDIO_SPAN + STYLE_TOKEN_COUNT  # 1012
TARGET_DEPTH = 16
TARGET_LEN = FRAMES_PER_CHUNK * TARGET_DEPTH  # 800
CHUNK_ID_SPAN = FRAMES_PER_CHUNK * COARSE_DEPTH  # 200

TINY_SEED = 0x7EA7


class GenerationError(RuntimeError):
    """A backend or codec failure during chunk generation."""


@dataclass(frozen=True)
class EncoderSequence:
    """The 1012-token unified-vocabulary conditioning sequence."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (SEQ_LEN,):
            raise ValueError(f"encoder sequence must have {SEQ_LEN} ids, got {ids.shape}")
        audio = ids[:AUDIO_SPAN]
        ok_audio = (audio == PAD_ID) | ((audio >= CODEC_OFFSET) & (audio < STYLE_OFFSET))
        if not ok_audio.all():
            raise ValueError("audio span contains ids outside the codec range / <P>")
        tail = ids[AUDIO_SPAN:]
        ok_tail = (tail == PAD_ID) | ((tail >= STYLE_OFFSET) & (tail < VOCAB_SIZE))
        if not ok_tail.all():
            raise ValueError("style span contains ids outside the style range / <P>")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)


def assemble_encoder_sequence(history: Sequence[Chunk], style: StyleTokens) -> EncoderSequence:
    """Oldest-first coarse history, left-padded with <P> to 1000, then 12 style ids."""
    if len(history) > HISTORY_CHUNKS:
        raise ValueError(f"history longer than {HISTORY_CHUNKS} chunks")
    ids = np.full(SEQ_LEN, PAD_ID, dtype=np.int64)
    pos = AUDIO_SPAN - len(history) * CHUNK_ID_SPAN
    for chunk in history:
        if chunk.depth != COARSE_DEPTH:
            raise DepthError(f"history chunks must be depth {COARSE_DEPTH}, got {chunk.depth}")
        for v in chunk.indices():
            ids[pos] = unify_codec(v)
            pos += 1
    for level in range(STYLE_TOKEN_COUNT):
        idx = style.indices[level]
        ids[AUDIO_SPAN + level] = PAD_ID if idx == STYLE_PAD_INDEX else unify_style(idx)
    return EncoderSequence(ids)


def negative_style_sequence(seq: EncoderSequence) -> EncoderSequence:
    """The unconditional branch for prompt CFG: style tokens replaced by <P>."""
    ids = seq.ids.copy()
    ids[AUDIO_SPAN:] = PAD_ID
    return EncoderSequence(ids)


class Backend:
    """Generative backend contract.

    next_logits must be pure and deterministic: logits for target position
    p = len(partial_target) depend only on the encoder sequence, the partial
    target prefix, and (when self-conditioning) the control prefix.
    """

    control_bins: tuple[int, ...] | None = None

    def next_logits(
        self,
        seq: EncoderSequence,
        partial_target: Sequence[int],
        control_prefix: Sequence[int] | None = None,
    ) -> np.ndarray:
        raise NotImplementedError

    def next_control_logits(
        self, seq: EncoderSequence, sampled_controls: Sequence[int], slot: int
    ) -> np.ndarray:
        raise NotImplementedError

    def target_logits(
        self,
        seq: EncoderSequence,
        target: Sequence[int],
        control_prefix: Sequence[int] | None = None,
    ) -> np.ndarray:
        """Logits at every target position, shape (len(target), 1024)."""
        out = np.empty((len(target), CODEBOOK_SIZE))
        for p in range(len(target)):
            out[p] = self.next_logits(seq, target[:p], control_prefix)
        return out


def _history_slots(seq: EncoderSequence) -> np.ndarray:
    return seq.ids[:AUDIO_SPAN].reshape(HISTORY_CHUNKS, FRAMES_PER_CHUNK, COARSE_DEPTH)


class PatternBackend(Backend):
    """Copies the most recent non-pad history chunk; one-hot +/-10 logits.

    Greedy decoding therefore locks into a period-one loop, which makes
    streaming behaviour exactly predictable in tests.
    """

    ON = 10.0
    OFF = -10.0

    def __init__(self, control_bins: tuple[int, ...] | None = None):
        self.control_bins = control_bins

    def next_logits(self, seq, partial_target, control_prefix=None):
        p = len(partial_target)
        if not 0 <= p < TARGET_LEN:
            raise ValueError(f"target position {p} outside [0, {TARGET_LEN})")
        frame, level = divmod(p, TARGET_DEPTH)
        slots = _history_slots(seq)
        predicted = 0
        for s in range(HISTORY_CHUNKS - 1, -1, -1):
            if not np.any(slots[s] == PAD_ID):
                predicted = int(slots[s, frame, min(level, COARSE_DEPTH - 1)]) - CODEC_OFFSET
                break
        logits = np.full(CODEBOOK_SIZE, self.OFF)
        logits[predicted] = self.ON
        return logits

    def next_control_logits(self, seq, sampled_controls, slot):
        if self.control_bins is None:
            raise NotImplementedError("pattern backend built without control bins")
        logits = np.full(self.control_bins[slot], self.OFF)
        logits[0] = self.ON
        return logits


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-6)


def _causal_softmax(scores: np.ndarray) -> np.ndarray:
    n = scores.shape[-1]
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


class _Block:
    """One pre-norm transformer block with causal self-attention."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, hidden: int):
        def init(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        self.heads = heads
        self.wq = init(dim, dim)
        self.wk = init(dim, dim)
        self.wv = init(dim, dim)
        self.wo = init(dim, dim)
        self.w1 = init(dim, hidden)
        self.w2 = init(hidden, dim)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        n, dim = x.shape
        hd = dim // self.heads
        h = _layer_norm(x)
        q = (h @ self.wq).reshape(n, self.heads, hd).transpose(1, 0, 2)
        k = (h @ self.wk).reshape(n, self.heads, hd).transpose(1, 0, 2)
        v = (h @ self.wv).reshape(n, self.heads, hd).transpose(1, 0, 2)
        att = _causal_softmax(q @ k.transpose(0, 2, 1) / np.sqrt(hd))
        ctx = (att @ v).transpose(1, 0, 2).reshape(n, dim)
        x = x + ctx @ self.wo
        h = _layer_norm(x)
        x = x + np.tanh(h @ self.w1) @ self.w2
        return x


class TinyBackend(Backend):
    """Forward-only seeded transformer (width 64, 2+2 layers).

    The temporal module runs over a 25-position block summary of the audio
    context, a style summary position, an optional control prefix, and the
    generated frames (shifted by one, so frame f's state never sees frame f).
    The depth module is causally autoregressive over the 16 levels of the
    current frame, conditioned on that frame's temporal state.
    """

    DIM = 64
    HEADS = 4
    HIDDEN = 128
    SUMMARY_BLOCKS = 25
    LOGIT_SCALE = 5.0

    def __init__(self, seed: int = TINY_SEED, control_bins: tuple[int, ...] | None = None):
        rng = np.random.default_rng(seed)
        d = self.DIM

        def init(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        self.seed = seed
        self.tok_emb = init(VOCAB_SIZE, d)
        self.frame_bos = init(1, d)[0]
        self.depth_bos = init(1, d)[0]
        self.prefix_pos = init(self.SUMMARY_BLOCKS + 1 + 4, d)
        self.frame_pos = init(FRAMES_PER_CHUNK, d)
        self.depth_pos = init(TARGET_DEPTH, d)
        self.temporal = [_Block(rng, d, self.HEADS, self.HIDDEN) for _ in range(2)]
        self.depth = [_Block(rng, d, self.HEADS, self.HIDDEN) for _ in range(2)]
        self.out_proj = init(d, CODEBOOK_SIZE)
        self.control_bins = control_bins
        if control_bins is not None:
            self.control_emb = [init(n, d) for n in control_bins]
            self.control_out = [init(d, n) for n in control_bins]

    # -- internals ---------------------------------------------------------

    def _prefix(self, seq: EncoderSequence, control_prefix) -> np.ndarray:
        audio = self.tok_emb[seq.ids[:AUDIO_SPAN]]
        block = AUDIO_SPAN // self.SUMMARY_BLOCKS
        summary = audio.reshape(self.SUMMARY_BLOCKS, block, self.DIM).mean(axis=1)
        style = self.tok_emb[seq.ids[AUDIO_SPAN:]].mean(axis=0, keepdims=True)
        rows = [summary, style]
        if control_prefix:
            if self.control_bins is None:
                raise ValueError("control prefix given but backend has no control bins")
            ctrl = np.stack(
                [self.control_emb[i][tok] for i, tok in enumerate(control_prefix)]
            )
            rows.append(ctrl)
        prefix = np.vstack(rows)
        return prefix + self.prefix_pos[: prefix.shape[0]]

    def _frame_embedding(self, levels: Sequence[int]) -> np.ndarray:
        uids = [unify_codec(v) for v in levels]
        return self.tok_emb[uids].sum(axis=0)

    def _temporal_states(self, prefix: np.ndarray, frames: list[Sequence[int]], upto: int) -> np.ndarray:
        """States for frames 0..upto inclusive (uses frames < each position)."""
        rows = [prefix, (self.frame_bos + self.frame_pos[0])[None, :]]
        for f in range(upto):
            rows.append((self._frame_embedding(frames[f]) + self.frame_pos[f + 1])[None, :])
        x = np.vstack(rows)
        for block in self.temporal:
            x = block(x)
        return x[prefix.shape[0] :]

    def _temporal_state(self, seq, frames, frame_index, control_prefix) -> np.ndarray:
        prefix = self._prefix(seq, control_prefix)
        return self._temporal_states(prefix, frames, frame_index)[frame_index]

    def _depth_logits_row(self, t_state: np.ndarray, current_levels: Sequence[int], level: int) -> np.ndarray:
        rows = [self.depth_bos]
        for l in range(1, level + 1):
            rows.append(self.tok_emb[unify_codec(current_levels[l - 1])])
        x = np.stack(rows) + t_state[None, :] + self.depth_pos[: level + 1]
        for block in self.depth:
            x = block(x)
        return self.LOGIT_SCALE * (_layer_norm(x[level]) @ self.out_proj)

    # -- contract ----------------------------------------------------------

    def next_logits(self, seq, partial_target, control_prefix=None):
        p = len(partial_target)
        if not 0 <= p < TARGET_LEN:
            raise ValueError(f"target position {p} outside [0, {TARGET_LEN})")
        frame, level = divmod(p, TARGET_DEPTH)
        frames = [partial_target[f * TARGET_DEPTH : (f + 1) * TARGET_DEPTH] for f in range(frame)]
        current = list(partial_target[frame * TARGET_DEPTH :])
        t_state = self._temporal_state(seq, frames, frame, control_prefix)
        return self._depth_logits_row(t_state, current, level)

    def target_logits(self, seq, target, control_prefix=None):
        n = len(target)
        n_frames = -(-n // TARGET_DEPTH)
        frames = [target[f * TARGET_DEPTH : (f + 1) * TARGET_DEPTH] for f in range(n_frames)]
        prefix = self._prefix(seq, control_prefix)
        states = self._temporal_states(prefix, frames, n_frames - 1)
        out = np.empty((n, CODEBOOK_SIZE))
        for p in range(n):
            frame, level = divmod(p, TARGET_DEPTH)
            out[p] = self._depth_logits_row(states[frame], frames[frame], level)
        return out

    def next_control_logits(self, seq, sampled_controls, slot):
        if self.control_bins is None:
            raise NotImplementedError("tiny backend built without control bins")
        h = self._prefix(seq, None).mean(axis=0)
        for i, tok in enumerate(sampled_controls[:slot]):
            h = h + self.control_emb[i][tok]
        return self.LOGIT_SCALE * (_layer_norm(h[None, :])[0] @ self.control_out[slot])


BACKENDS = {"pattern": PatternBackend, "tiny": TinyBackend}


def make_backend(
    name: str,
    seed: int | None = None,
    control_bins: tuple[int, ...] | None = None,
) -> Backend:
    if name == "pattern":
        return PatternBackend(control_bins=control_bins)
    if name == "tiny":
        return TinyBackend(seed=TINY_SEED if seed is None else seed, control_bins=control_bins)
    raise ValueError(f"unknown backend {name!r}; expected one of {sorted(BACKENDS)}")


@dataclass(frozen=True)
class GenerationResult:
    chunk: Chunk
    control_tokens: tuple[int, ...] | None = None


def generate_chunk(
    backend: Backend,
    seq: EncoderSequence,
    config: sampling.SamplerConfig,
    rng_seed,
    *,
    negative_seq: EncoderSequence | None = None,
    control_prior: Sequence[np.ndarray] | None = None,
    self_conditioning: bool = False,
    rng: np.random.Generator | None = None,
) -> GenerationResult:
    """Sample one depth-16 chunk position by position.

    The negative CFG branch defaults to the same sequence with style tokens
    padded out; audio injection passes its model-only context instead.
    Stateless: identical arguments reproduce identical chunks.
    """
    if rng is None:
        rng = np.random.default_rng(rng_seed)
    if config.cfg_weight > 0 and negative_seq is None:
        negative_seq = negative_style_sequence(seq)
    use_cfg = config.cfg_weight > 0 and not np.array_equal(negative_seq.ids, seq.ids)

    controls: tuple[int, ...] | None = None
    try:
        if self_conditioning:
            if backend.control_bins is None:
                raise GenerationError("backend has no control vocabulary")
            sampled: list[int] = []
            for slot in range(len(backend.control_bins)):
                logits = backend.next_control_logits(seq, sampled, slot)
                prior = control_prior[slot] if control_prior is not None else None
                sampled.append(
                    sampling.sample_pipeline(logits, rng, config, prior_logits=prior)
                )
            controls = tuple(sampled)

        target: list[int] = []
        for _ in range(TARGET_LEN):
            pos = backend.next_logits(seq, target, controls)
            neg = backend.next_logits(negative_seq, target, controls) if use_cfg else None
            target.append(sampling.sample_pipeline(pos, rng, config, neg_logits=neg))
    except (sampling.ShapeError, ValueError, NotImplementedError) as exc:
        raise GenerationError(str(exc)) from exc

    return GenerationResult(chunk_from_indices(target, TARGET_DEPTH), controls)
