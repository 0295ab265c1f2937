"""Threshold event-camera simulator.

Each pixel fires when its log intensity moves by more than ``threshold *
scale`` between consecutive frames.  Polarities become a 3-level frame:
1.0 for ON, 0.0 for OFF and 0.5 where nothing happened.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .video import Clip

EPS = 1e-3
DEFAULT_SCALE = 0.25
THRESHOLDS = (0.4, 0.8, 1.2, 1.6, 2.0, 2.4)
SWEEP_FIELDS = ("threshold", "action_acc", "privacy_acc", "seed")


@dataclass(frozen=True)
class EventConfig:
    threshold: float
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def event_polarity(x: np.ndarray, config: EventConfig, axis: int = 0) -> np.ndarray:
    """Signed events in {-1, 0, 1}; one entry shorter than ``x`` along ``axis``."""
    if x.shape[axis] < 2:
        raise ValueError(f"events need at least 2 frames, got {x.shape[axis]}")
    logi = np.log(x.astype(np.float64) + EPS)
    delta = np.diff(logi, axis=axis)
    th = config.threshold * config.scale
    return (delta >= th).astype(np.int8) - (delta <= -th).astype(np.int8)


def polarity_to_intensity(p: np.ndarray) -> np.ndarray:
    return (0.5 + 0.5 * p).astype(np.float32)


def to_event_frames(clip: Clip, config: EventConfig) -> Clip:
    """T - 1 event frames for a clip."""
    return Clip(polarity_to_intensity(event_polarity(clip.frames, config, axis=0)), clip.frame_rate_hint)


def event_transform(config: EventConfig):
    """Batch transform over ``(N, C, T, H, W)`` arrays for :func:`~bdq.trainer.validate_transform`."""
    def apply(x):
        return polarity_to_intensity(event_polarity(x, config, axis=2))
    return apply


def event_sweep(dataset, thresholds, cfg, scale=DEFAULT_SCALE, out_path=None) -> list[dict]:
    """Train fresh action/privacy nets on event frames for every threshold."""
    from .trainer import validate_transform

    if not thresholds:
        raise ValueError("no thresholds given")
    rows = []
    for th in thresholds:
        res = validate_transform(dataset, event_transform(EventConfig(float(th), scale)), cfg)
        rows.append({"threshold": float(th), "action_acc": res.action_acc,
                     "privacy_acc": res.privacy_acc, "seed": cfg.seed})
    if out_path is not None:
        write_rows(out_path, rows, SWEEP_FIELDS)
    return rows


def write_rows(path, rows, fields):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
