"""Acceptance gate: one test per shipping criterion.

Each test records a single [PASS]/[FAIL] line that the shared conftest prints
in the terminal summary, so a plain `pytest -v` run shows every verdict.
"""
import time

import conftest
import numpy as np
from scipy import stats

from livejam import codec, controls, sampling, stream, style
from livejam.codec import codec_codebooks, rvq_encode_frames
from livejam.model import (
    AUDIO_SPAN,
    CHUNK_ID_SPAN,
    SEQ_LEN,
    EncoderSequence,
    assemble_encoder_sequence,
    make_backend,
)
from livejam.inject import InjectionConfig, build_context_free, build_context_looper
from livejam.sampling import SamplerConfig, cfg_combine
from livejam.session import SessionConfig, SessionCore, bundled_prompt_pairs, render_offline
from livejam.stream import (
    CHUNK_SAMPLES,
    TRANSITION_SCHEDULE,
    EngineConfig,
    InjectionInput,
    RealtimeRunner,
    StreamEngine,
    run_transition,
)
from livejam.tokens import CODEC_OFFSET, PAD_ID, STYLE_OFFSET, chunk_from_indices

SR = codec.SAMPLE_RATE


def criterion(name, problems):
    verdict = "PASS" if not problems else "FAIL"
    conftest.record_acceptance(f"[{verdict}] {name}")
    assert not problems, f"{name}: {problems}"


def random_coarse_chunk(rng):
    return chunk_from_indices(rng.integers(0, 1024, size=CHUNK_ID_SPAN).tolist(), 4)


def random_style_tokens(rng):
    idx = rng.integers(0, 1024, size=6).tolist() + [style.STYLE_PAD_INDEX] * 6
    return style.StyleTokens(tuple(idx), active_depth=6)


EMBEDDER = style.HashEmbedder()


def make_engine(backend="pattern", seed=0, **cfg):
    return StreamEngine(make_backend(backend), EMBEDDER, EngineConfig(seed=seed, **cfg))


MIX = style.PromptMix.of(("warm pads", 1.0))


def test_sequence_layout():
    problems = []
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    for n_hist in (0, 2, 5):
        history = [random_coarse_chunk(rng) for _ in range(n_hist)]
        tokens = random_style_tokens(rng)
        seq = assemble_encoder_sequence(history, tokens)
        if seq.ids.shape != (1012,):
            problems.append(f"history={n_hist}: length {seq.ids.shape}")
            continue
        pad_span = AUDIO_SPAN - n_hist * CHUNK_ID_SPAN
        if not np.all(seq.ids[:pad_span] == PAD_ID):
            problems.append(f"history={n_hist}: left pad span not all <P>")
        for k, chunk in enumerate(history):
            lo = pad_span + k * CHUNK_ID_SPAN
            want = np.asarray(chunk.indices()) + CODEC_OFFSET
            if not np.array_equal(seq.ids[lo : lo + CHUNK_ID_SPAN], want):
                problems.append(f"history={n_hist}: chunk {k} span mismatch")
        got_style = seq.ids[AUDIO_SPAN:]
        want_style = [
            PAD_ID if v == style.STYLE_PAD_INDEX else v + STYLE_OFFSET
            for v in tokens.indices
        ]
        if not np.array_equal(got_style, want_style):
            problems.append(f"history={n_hist}: style span mismatch")
    elapsed = time.perf_counter() - t0
    if elapsed >= 1.0:
        problems.append(f"runtime {elapsed:.2f}s >= 1s")
    criterion("sequence layout: 1012 ids, spans position-verified, < 1 s", problems)


def test_rvq_monotonicity():
    problems = []
    t0 = time.perf_counter()
    books = codec_codebooks()
    rng = np.random.default_rng(7)
    feats = rng.normal(scale=5.0, size=(1000, codec.FEATURE_DIM))
    residual = feats.copy()
    norms = [np.linalg.norm(residual, axis=1)]
    err_at = {}
    for level in range(64):
        # greedy level-by-level against the full ladder
        book = books.codewords[level]
        d = (
            np.sum(residual**2, axis=1)[:, None]
            - 2.0 * residual @ book.T
            + np.sum(book**2, axis=1)[None, :]
        )
        pick = np.argmin(d, axis=1)
        residual = residual - book[pick]
        norms.append(np.linalg.norm(residual, axis=1))
        if level + 1 in (16, 64):
            err_at[level + 1] = norms[-1].copy()
    norms = np.stack(norms)
    if not np.all(norms[1:] <= norms[:-1] + 1e-12):
        problems.append("residual norms increased at some level")
    if not np.all(err_at[64] <= err_at[16] + 1e-12):
        problems.append("depth-64 error exceeded depth-16 error for some vector")
    # the greedy path above must match the production encoder
    enc = rvq_encode_frames(feats[:25], 64, books)
    recon = np.zeros_like(feats[:25])
    for level in range(64):
        recon += books.codewords[level][enc[:25, level]]
    if not np.allclose(np.linalg.norm(feats[:25] - recon, axis=1), err_at[64][:25]):
        problems.append("production encoder disagrees with reference greedy path")
    elapsed = time.perf_counter() - t0
    if elapsed >= 30.0:
        problems.append(f"runtime {elapsed:.1f}s >= 30s")
    criterion("rvq monotonicity: 1000 vectors, 64 levels, depth-64 <= depth-16, < 30 s", problems)


def test_cfg_algebra():
    problems = []
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 64))
        pos = rng.normal(size=n)
        neg = rng.normal(size=n)
        w = float(rng.uniform(0, 10))
        out = cfg_combine(pos, neg, w)
        if np.max(np.abs(out - (pos + w * (pos - neg)))) > 1e-12:
            problems.append("affine form violated")
            break
        if np.max(np.abs(cfg_combine(pos, neg, 0.0) - pos)) > 1e-12:
            problems.append("w = 0 identity violated")
            break
        if np.max(np.abs(cfg_combine(pos, pos, w) - pos)) > 1e-12:
            problems.append("pos = neg identity violated")
            break
    worked = cfg_combine(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 5.0)
    if not np.allclose(worked, [12.0, -10.0], atol=1e-12):
        problems.append(f"worked example gave {worked}")
    criterion("cfg algebra: identities to 1e-12 and [12, -10] worked example", problems)


def test_backend_causality():
    problems = []
    rng = np.random.default_rng(23)
    n_positions = 64  # 4 frames of 16 levels: exercises both axes
    for backend_name in ("pattern", "tiny"):
        backend = make_backend(backend_name)
        mismatches = 0
        for trial in range(100):
            history = [random_coarse_chunk(rng) for _ in range(int(rng.integers(0, 6)))]
            seq = assemble_encoder_sequence(history, random_style_tokens(rng))
            target = rng.integers(0, 1024, size=n_positions).tolist()
            base = backend.target_logits(seq, target)
            # alternate depth-axis and temporal-axis (frame boundary) edits
            if trial % 2 == 0:
                q = int(rng.integers(0, n_positions))
            else:
                q = int(rng.integers(0, n_positions // 16)) * 16
            perturbed = list(target)
            perturbed[q] = (perturbed[q] + 1 + int(rng.integers(0, 1022))) % 1024
            after = backend.target_logits(seq, perturbed)
            for p in range(q + 1):
                if not np.array_equal(base[p], after[p]):
                    mismatches += 1
                    break
        if mismatches:
            problems.append(f"{backend_name}: {mismatches}/100 trials leaked future edits")
    criterion("backend causality: 100 perturbation trials per backend, bit-identical", problems)


def test_live_throughput():
    problems = []
    engine = make_engine("pattern", seed=0)
    report = RealtimeRunner(engine, MIX).run(60.0)
    rtf = report.metrics.cumulative_rtf
    if rtf < 1.0:
        problems.append(f"cumulative rtf {rtf:.3f} < 1.0")
    if report.metrics.underruns != 0:
        problems.append(f"{report.metrics.underruns} underruns")
    if report.audio.shape[0] != 30 * CHUNK_SAMPLES:
        problems.append(f"audio length {report.audio.shape[0]}")
    criterion("live throughput: 60 s realtime, cumulative rtf >= 1.0, zero underruns", problems)


def test_deterministic_replay(tmp_path):
    problems = []
    cfg = SessionConfig(backend="pattern", seed=13)
    schedule = [(0.0, [("warm pads", 1.0)]), (20.0, [("dub techno", 1.0)])]
    out1, out2 = tmp_path / "a.wav", tmp_path / "b.wav"
    m1 = render_offline(cfg, schedule, 47.0, out1)
    render_offline(cfg, schedule, 47.0, out2)
    if len(m1.samples) != 24:
        problems.append(f"{len(m1.samples)} chunks rendered, want 24")
    if out1.read_bytes() != out2.read_bytes():
        problems.append("offline renders differ")

    messages = [
        (0, {"type": "set_prompts", "prompts": [{"text": "dub techno", "weight": 1.0}]}),
        (2, {"type": "set_sampler", "temperature": 1.1}),
        (4, {"type": "set_controls", "bpm": 120, "strength": 2.0}),
    ]

    def live_run():
        session = SessionCore(SessionConfig(backend="pattern", seed=13),
                              extract_descriptors=False)
        queue = list(messages)
        out = []
        for i in range(6):
            while queue and queue[0][0] <= i:
                session.handle_message(queue.pop(0)[1])
            out.append(session.generate_next().audio)
        return codec.audio_to_s16le(np.vstack(out))

    if live_run() != live_run():
        problems.append("scripted live sessions differ")
    criterion("deterministic replay: byte-identical offline render and live session", problems)


def test_transition_schedule():
    problems = []
    t0 = time.perf_counter()
    pairs = bundled_prompt_pairs()[::16][:8]
    if len(pairs) != 8:
        problems.append(f"picked {len(pairs)} pairs")
    engine = make_engine("pattern", seed=0)
    for a, b in pairs:
        trace = run_transition(a, b, EMBEDDER, engine)
        got = tuple((w.weight_b, w.weight_a) for w in trace.windows)
        if got != TRANSITION_SCHEDULE:
            problems.append(f"{a}->{b}: weight schedule {got}")
            continue
        cos_a = [w.cond_cos_a for w in trace.windows]
        cos_b = [w.cond_cos_b for w in trace.windows]
        if not all(x >= y - 1e-12 for x, y in zip(cos_a, cos_a[1:])):
            problems.append(f"{a}->{b}: cosine-to-A not non-increasing")
        if not all(y >= x - 1e-12 for x, y in zip(cos_b, cos_b[1:])):
            problems.append(f"{a}->{b}: cosine-to-target not non-decreasing")
    elapsed = time.perf_counter() - t0
    if elapsed >= 120.0:
        problems.append(f"runtime {elapsed:.0f}s >= 120s")
    criterion("transition schedule: 8 pairs, exact weights, monotone cosines, < 2 min", problems)


def test_injection_contracts():
    problems = []

    def run(injection):
        engine = make_engine("pattern", seed=3)
        state = engine.initial_state()
        out = []
        for _ in range(3):
            r = engine.step(state, MIX, injection=injection)
            state = r.state
            out.append(r.audio)
        return codec.audio_to_s16le(np.vstack(out))

    muted = InjectionInput(config=InjectionConfig(mode="free", gain=0.0),
                           user_audio=np.ones((CHUNK_SAMPLES, 2)) * 0.3)
    if run(muted) != run(None):
        problems.append("gain-0 injection changed the output")

    rng = np.random.default_rng(2)
    model = rng.normal(scale=0.1, size=(10 * SR, 2))
    user = np.ones((7 * SR, 2)) * 0.5
    mixed = build_context_free(model, user, gain=1.0, fade=False)
    if not (np.allclose(mixed[: 7 * SR], model[: 7 * SR] + 0.5)
            and np.array_equal(mixed[7 * SR :], model[7 * SR :])):
        problems.append("free-mode 7 s / 3 s coverage split violated")

    loop_len = 4 * SR  # 8 beats at 120 BPM
    loop = np.random.default_rng(4).normal(size=(loop_len, 2))
    tiled = build_context_looper(np.zeros((10 * SR, 2)), loop, 1.0, 120.0, 8)
    worst = 0
    for n in (0, loop_len - 1, loop_len, 2 * loop_len + 7, 10 * SR - 1):
        if not np.array_equal(tiled[n], loop[n % loop_len]):
            # allow a one-sample phase slip
            ok = any(
                np.array_equal(tiled[n], loop[(n + d) % loop_len]) for d in (-1, 1)
            )
            if not ok:
                worst += 1
    if worst:
        problems.append(f"looper tiling off by more than 1 sample at {worst} probes")
    criterion("injection: gain-0 identity, 7 s/3 s split, looper tiling +/- 1 sample", problems)


def test_control_priors():
    problems = []
    backend = make_backend("tiny", control_bins=controls.CONTROL_BIN_COUNTS)
    rng = np.random.default_rng(0)
    seq = assemble_encoder_sequence(
        [random_coarse_chunk(rng) for _ in range(3)], random_style_tokens(rng)
    )
    logits = backend.next_control_logits(seq, [], 0)
    config = SamplerConfig()
    spread = float(logits.max() - logits.min())
    strength = (spread + 40.0 * config.temperature) / (1.0 - np.exp(-0.5))
    prior = controls.prior_from_targets({"bpm": 120.0}, strength=strength)
    target_bin = controls.encode_bpm(120.0)
    hits = sum(
        sampling.sample_pipeline(logits, np.random.default_rng(t), config,
                                 prior_logits=prior.offsets[0]) == target_bin
        for t in range(100)
    )
    if hits != 100:
        problems.append(f"strong prior hit target bin {hits}/100")

    zero = controls.prior_from_targets({"bpm": 120.0}, strength=0.0)
    draw_rng = np.random.default_rng(99)
    draws = [
        sampling.sample_pipeline(logits, draw_rng, config, prior_logits=zero.offsets[0])
        for _ in range(10_000)
    ]
    shaped = sampling.shape_logits(logits, config.temperature, config.top_k)
    probs = np.exp(shaped - shaped.max())
    probs[~np.isfinite(shaped)] = 0.0
    probs /= probs.sum()
    keep = probs > 0
    observed = np.bincount(draws, minlength=len(logits))[keep]
    expected = 10_000 * probs[keep]
    result = stats.chisquare(observed, expected)
    if not result.pvalue > 0.01:
        problems.append(f"strength-0 distribution chi-square p = {result.pvalue:.4f}")
    criterion("control priors: 100/100 target-bin hits; strength-0 chi-square p > 0.01", problems)


def test_descriptor_extractors():
    problems = []

    clicks = np.zeros((5 * SR, 2))
    rng = np.random.default_rng(0)
    spacing = (5.0 - 0.5) / 9
    for k in range(10):
        s = int((0.25 + k * spacing) * SR)
        clicks[s : s + 200] = 0.8 * rng.uniform(-1, 1, size=(200, 2))
    density = controls.extract_descriptors(clicks).density
    if abs(density - 2.0) > 0.1:
        problems.append(f"density {density:.3f} not within 2.0 +/- 0.1")

    t = np.arange(5 * SR) / SR
    a440 = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    key = controls.extract_descriptors(np.stack([a440, a440], axis=1)).key_class
    if key != 9:
        problems.append(f"A440 key class {key} != 9")

    beats = np.zeros((10 * SR, 2))
    rng = np.random.default_rng(1)
    pos = 0.1
    while pos < 10.0 - 200 / SR:
        s = int(pos * SR)
        beats[s : s + 200] = 0.8 * rng.uniform(-1, 1, size=(200, 2))
        pos += 0.5  # 120 BPM
    bpm = controls.extract_descriptors(beats).bpm
    if bpm is None or abs(bpm - 120.0) > 2.0:
        problems.append(f"bpm {bpm} not within 120 +/- 2")
    criterion("descriptors: density 2.0 +/- 0.1, key class 9 for A440, bpm 120 +/- 2", problems)
