import numpy as np
import pytest

from livejam import codec, controls
from livejam.controls import (
    BPM_RANGE,
    CONTROL_BIN_COUNTS,
    CONTROL_OFFSET,
    ControlPrior,
    ControlState,
    ControlTokens,
    decode_bpm,
    decode_brightness,
    decode_control_tokens,
    decode_density,
    encode_bpm,
    encode_brightness,
    encode_density,
    extract_descriptors,
    prior_from_targets,
    to_control_tokens,
    zero_prior,
)

SR = codec.SAMPLE_RATE


def click_track(n_clicks, seconds, first=0.25, amp=0.8, width=200):
    """Evenly spaced broadband clicks starting away from the boundary."""
    audio = np.zeros((int(seconds * SR), 2))
    spacing = (seconds - 2 * first) / max(n_clicks - 1, 1)
    rng = np.random.default_rng(0)
    for k in range(n_clicks):
        s = int((first + k * spacing) * SR)
        audio[s : s + width] = amp * rng.uniform(-1, 1, size=(width, 2))
    return audio


def beat_track(bpm, seconds, amp=0.8, width=200):
    audio = np.zeros((int(seconds * SR), 2))
    period = 60.0 / bpm
    rng = np.random.default_rng(1)
    t = 0.1
    while t < seconds - width / SR:
        s = int(t * SR)
        audio[s : s + width] = amp * rng.uniform(-1, 1, size=(width, 2))
        t += period
    return audio


def sine(freq, seconds=5.0, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    x = amp * np.sin(2 * np.pi * freq * t)
    return np.stack([x, x], axis=1)


class TestDescriptors:
    def test_density_ten_clicks_in_five_seconds(self):
        ds = extract_descriptors(click_track(10, 5.0))
        assert abs(ds.density - 2.0) <= 0.1

    def test_key_class_a440(self):
        ds = extract_descriptors(sine(440.0))
        assert ds.key_class == 9

    def test_key_class_c(self):
        ds = extract_descriptors(sine(261.63))
        assert ds.key_class == 0

    def test_bpm_120_click_track(self):
        ds = extract_descriptors(beat_track(120.0, 10.0))
        assert ds.bpm is not None
        assert abs(ds.bpm - 120.0) <= 2.0

    def test_bpm_90_click_track(self):
        ds = extract_descriptors(beat_track(90.0, 10.0))
        assert abs(ds.bpm - 90.0) <= 2.0

    def test_silence(self):
        ds = extract_descriptors(np.zeros((5 * SR, 2)))
        assert ds.bpm is None
        assert ds.density == 0.0
        assert np.allclose(ds.chroma, 1.0 / 12.0)

    def test_brightness_orders_tones(self):
        low = extract_descriptors(sine(300.0))
        high = extract_descriptors(sine(4000.0))
        assert high.brightness_centroid > low.brightness_centroid

    def test_chroma_sums_to_one(self):
        ds = extract_descriptors(sine(523.25))
        assert abs(ds.chroma.sum() - 1.0) < 1e-9

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            extract_descriptors(np.zeros((0, 2)))


class TestBinning:
    def test_roundtrip_within_half_bin(self):
        for bpm in (40.0, 67.3, 120.0, 239.0):
            b = encode_bpm(bpm)
            lo, hi = controls._BPM_EDGES[b], controls._BPM_EDGES[b + 1]
            assert lo <= bpm <= hi or bpm in (lo, hi)
            assert abs(decode_bpm(b) - bpm) <= (hi - lo) / 2

    def test_clamping(self):
        assert encode_bpm(10.0) == 0
        assert encode_bpm(999.0) == CONTROL_BIN_COUNTS[0] - 1
        assert encode_brightness(1.0) == 0
        assert encode_density(99.0) == CONTROL_BIN_COUNTS[2] - 1

    def test_log_spacing_bpm(self):
        widths = np.diff(controls._BPM_EDGES)
        assert np.all(np.diff(widths) > 0)  # widths grow with bpm

    def test_density_linear(self):
        widths = np.diff(controls._DENSITY_EDGES)
        assert np.allclose(widths, widths[0])

    def test_decode_is_bin_center(self):
        assert decode_density(0) == 0.25
        mid = decode_brightness(5)
        lo, hi = controls._BRIGHTNESS_EDGES[5], controls._BRIGHTNESS_EDGES[6]
        assert mid == pytest.approx((lo + hi) / 2)


class TestControlTokens:
    def test_unified_block(self):
        tok = ControlTokens((0, 0, 0, 0))
        assert tok.to_unified() == (
            CONTROL_OFFSET,
            CONTROL_OFFSET + 64,
            CONTROL_OFFSET + 96,
            CONTROL_OFFSET + 128,
        )

    def test_range_validation(self):
        with pytest.raises(ValueError):
            ControlTokens((64, 0, 0, 0))
        with pytest.raises(ValueError):
            ControlTokens((0, 0, 0, 12))

    def test_from_descriptors(self):
        ds = extract_descriptors(beat_track(120.0, 10.0))
        tok = to_control_tokens(ds)
        decoded = decode_control_tokens(tok)
        assert abs(decoded["bpm"] - 120.0) < 5.0

    def test_unknown_bpm_rejected(self):
        ds = extract_descriptors(np.zeros((5 * SR, 2)))
        with pytest.raises(ValueError):
            to_control_tokens(ds)


class TestPrior:
    def test_zero_prior_shapes(self):
        prior = zero_prior()
        for o, n in zip(prior.offsets, CONTROL_BIN_COUNTS):
            assert o.shape == (n,)
            assert not o.any()

    def test_gaussian_bump(self):
        prior = prior_from_targets({"bpm": 120.0}, strength=4.0)
        b = encode_bpm(120.0)
        off = prior.offsets[0]
        assert off[b] == pytest.approx(4.0)
        assert off[b - 1] == pytest.approx(4.0 * np.exp(-0.5))
        assert int(np.argmax(off)) == b
        assert not prior.offsets[1].any()

    def test_key_target(self):
        prior = prior_from_targets({"key": 9}, strength=2.0)
        assert int(np.argmax(prior.offsets[3])) == 9

    def test_stems_rejected(self):
        with pytest.raises(ValueError):
            prior_from_targets({"stems": 1.0}, strength=1.0)

    def test_unknown_control_rejected(self):
        with pytest.raises(ValueError):
            prior_from_targets({"reverb": 0.5}, strength=1.0)

    def test_negative_strength_rejected(self):
        with pytest.raises(ValueError):
            prior_from_targets({"bpm": 100.0}, strength=-1.0)

    def test_strength_zero_is_zero_prior(self):
        prior = prior_from_targets({"bpm": 100.0}, strength=0.0)
        assert not any(o.any() for o in prior.offsets)
