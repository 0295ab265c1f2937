"""Clips, the BDQV container, and clip sampling / cropping."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"BDQV"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIII")
DTYPES = {"u8": 0, "f32": 1}
# multi-scale crop scales, as fractions of the shorter frame side
CROP_SCALES = (1.0, 2 ** -0.25, 2 ** -0.75, 0.5)


class ClipFormatError(ValueError):
    pass


@dataclass
class Clip:
    """T x H x W x C float32 intensities in [0, 1]."""

    frames: np.ndarray
    frame_rate_hint: Optional[float] = None

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 3:
            f = f[..., None]
        if f.ndim != 4:
            raise ValueError(f"clip must be T x H x W x C, got shape {f.shape}")
        t, h, w, c = f.shape
        if t < 1:
            raise ValueError("empty clip")
        if h < 1 or w < 1:
            raise ValueError(f"degenerate frame size {h}x{w}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        f = f.astype(np.float32, copy=False)
        if f.size and (np.isnan(f).any() or f.min() < 0.0 or f.max() > 1.0):
            raise ValueError("clip intensities must lie in [0, 1]")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape

    @property
    def T(self):
        return self.frames.shape[0]


@dataclass
class LabeledClip:
    clip: Clip
    action_label: int
    privacy_label: int


def save_clip(clip: Clip, path, dtype: str = "f32") -> None:
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
    t, h, w, c = clip.frames.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPES[dtype], c, t, h, w)
    if dtype == "u8":
        # round half up, then clamp
        payload = np.clip(np.floor(clip.frames.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    else:
        payload = clip.frames.astype("<f4")
    Path(path).write_bytes(header + payload.tobytes())


def load_clip(path) -> Clip:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ClipFormatError(f"{path}: file shorter than header")
    magic, version, dtype, c, t, h, w = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ClipFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ClipFormatError(f"{path}: unsupported version {version}")
    if dtype not in DTYPES.values():
        raise ClipFormatError(f"{path}: unsupported dtype code {dtype}")
    if t == 0:
        raise ClipFormatError(f"{path}: empty clip")
    if c not in (1, 3) or h == 0 or w == 0:
        raise ClipFormatError(f"{path}: bad dimensions C={c} H={h} W={w}")
    n = t * h * w * c
    itemsize = 1 if dtype == 0 else 4
    if len(buf) - _HEADER.size != n * itemsize:
        raise ClipFormatError(
            f"{path}: payload is {len(buf) - _HEADER.size} bytes, header implies {n * itemsize}")
    if dtype == 0:
        data = np.frombuffer(buf, np.uint8, n, _HEADER.size).astype(np.float32) / np.float32(255.0)
    else:
        data = np.frombuffer(buf, "<f4", n, _HEADER.size).astype(np.float32)
    return Clip(data.reshape(t, h, w, c))


def temporal_sample(clip: Clip, t: int, offset="start", rng=None) -> Clip:
    """``t`` consecutive frames starting at 0 (``"start"``) or at a seeded random offset."""
    if t < 1:
        raise ValueError("t must be positive")
    if clip.T < t:
        raise ValueError(f"clip has {clip.T} frames, need {t}")
    if offset == "start":
        start = 0
    elif offset == "random":
        if rng is None:
            raise ValueError("random offset needs an rng")
        start = int(rng.integers(0, clip.T - t + 1))
    else:
        start = int(offset)
        if not 0 <= start <= clip.T - t:
            raise ValueError(f"offset {start} out of range")
    return Clip(clip.frames[start:start + t], clip.frame_rate_hint)


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of ``(..., H, W, C)`` frames."""
    h, w = frames.shape[-3:-1]

    def axis_weights(n_in, n_out):
        if n_out == 1:
            pos = np.array([(n_in - 1) / 2.0])
        else:
            pos = np.linspace(0.0, n_in - 1, n_out)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo).astype(np.float32)

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    top = frames[..., y0, :, :]
    bot = frames[..., y1, :, :]
    # a + f * (b - a) keeps constant inputs exactly constant
    rows = top + fy[:, None, None] * (bot - top)
    left = rows[..., x0, :]
    right = rows[..., x1, :]
    return left + fx[:, None] * (right - left)


def _check_out_size(clip, out_size):
    h, w = clip.frames.shape[1:3]
    if out_size < 1 or out_size > min(h, w):
        raise ValueError(f"crop size {out_size} larger than frame {h}x{w}")
    return h, w


def multi_scale_crop(clip: Clip, out_size: int, rng, scale=None, position=None) -> Clip:
    """Random-scale, random-position square crop resized to ``out_size``.

    One scale and one position are drawn per clip and applied to every frame.
    ``scale`` / ``position`` override the draws (for tests).
    """
    h, w = _check_out_size(clip, out_size)
    if scale is None:
        scale = CROP_SCALES[int(rng.integers(len(CROP_SCALES)))]
    side = max(1, int(round(scale * min(h, w))))
    if position is None:
        position = (int(rng.integers(0, h - side + 1)), int(rng.integers(0, w - side + 1)))
    y, x = position
    if not (0 <= y <= h - side and 0 <= x <= w - side):
        raise ValueError(f"crop at {position} with side {side} leaves the frame")
    window = clip.frames[:, y:y + side, x:x + side, :]
    if side == out_size:
        return Clip(window.copy(), clip.frame_rate_hint)
    return Clip(np.clip(resize_bilinear(window, out_size, out_size), 0.0, 1.0), clip.frame_rate_hint)


def center_crop(clip: Clip, out_size: int) -> Clip:
    h, w = _check_out_size(clip, out_size)
    top, left = (h - out_size) // 2, (w - out_size) // 2
    return Clip(clip.frames[:, top:top + out_size, left:left + out_size, :].copy(), clip.frame_rate_hint)
