import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdq import events as EV
from bdq.events import EventConfig
from bdq.video import Clip


def test_static_clip_has_no_events():
    clip = Clip(np.repeat(np.random.default_rng(0).random((1, 6, 6, 1)), 4, axis=0))
    out = EV.to_event_frames(clip, EventConfig(0.4))
    assert out.T == 3
    assert np.all(out.frames == 0.5)


def test_huge_threshold_saturates():
    clip = Clip(np.random.default_rng(1).random((5, 6, 6, 1)))
    assert np.all(EV.to_event_frames(clip, EventConfig(1e6)).frames == 0.5)


def test_polarity_mapping():
    frames = np.array([0.2, 0.8, 0.2, 0.2]).reshape(4, 1, 1, 1)
    out = EV.to_event_frames(Clip(frames), EventConfig(0.4)).frames.ravel()
    np.testing.assert_array_equal(out, [1.0, 0.0, 0.5])


def test_threshold_boundary_counts():
    # delta exactly th * s counts as an event
    d = 0.1
    i1 = np.exp(np.log(0.5 + EV.EPS) + d) - EV.EPS
    frames = np.array([0.5, i1]).reshape(2, 1, 1, 1)
    p = EV.event_polarity(frames, EventConfig(d / EV.DEFAULT_SCALE * (1 - 1e-9)))
    assert p.item() == 1


@pytest.mark.parametrize("th", [0.0, -1.0])
def test_bad_threshold(th):
    with pytest.raises(ValueError, match="positive"):
        EventConfig(th)


def test_single_frame_rejected():
    with pytest.raises(ValueError, match="at least 2"):
        EV.to_event_frames(Clip(np.zeros((1, 3, 3, 1))), EventConfig(1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.05, 3.0), st.floats(0.05, 3.0))
def test_monotone_in_threshold(seed, a, b):
    clip = Clip(np.random.default_rng(seed).random((4, 5, 5, 1)))
    lo, hi = sorted((a, b))
    e_lo = EV.event_polarity(clip.frames, EventConfig(lo)) != 0
    e_hi = EV.event_polarity(clip.frames, EventConfig(hi)) != 0
    assert not np.any(e_hi & ~e_lo)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.5, 1.0))
def test_gain_invariant_away_from_zero(seed, gain):
    # intensities in [0.5, 1]: the eps floor shifts log differences by < 1e-3
    x = 0.5 + 0.5 * np.random.default_rng(seed).random((4, 5, 5, 1))
    cfg = EventConfig(0.8)
    th = cfg.threshold * cfg.scale
    delta = np.abs(np.diff(np.log(x), axis=0))
    safe = np.abs(delta - th) > 2e-3
    a = EV.event_polarity(x, cfg)
    b = EV.event_polarity(x * gain, cfg)
    np.testing.assert_array_equal(a[safe], b[safe])


def test_batch_transform_matches_clip_path():
    x = np.random.default_rng(3).random((2, 1, 5, 4, 4)).astype(np.float32)
    cfg = EventConfig(0.4)
    batch = EV.event_transform(cfg)(x)
    single = EV.to_event_frames(Clip(np.moveaxis(x[1], 0, -1)), cfg).frames
    np.testing.assert_array_equal(np.moveaxis(batch[1], 0, -1), single)
