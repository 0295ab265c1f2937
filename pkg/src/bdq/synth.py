"""Moving-sprite clips with separable action and identity labels.

Action is the motion program of a square sprite; identity is the plaid
texture painted on the sprite.  The background is one static texture shared
by every clip, so the identity signal lives only on the moving sprite: it
survives in raw frames, leaks into frame differences through the texture
motion, and can be removed by blurring/quantizing those differences.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .video import Clip, LabeledClip, load_clip, save_clip

# sprite texture periods (pixels); identity k gets one (period_x, period_y) pair
PERIODS = (4.0, 5.0, 6.5, 8.5)
MOTIONS = ("right", "left", "down", "up", "diagonal", "oscillate",
           "anti_diagonal", "up_right", "down_left", "bob")


@dataclass(frozen=True)
class SynthConfig:
    num_actions: int = 6
    num_identities: int = 10
    clips_per_pair: int = 8
    T: int = 9
    size: int = 32
    noise_std: float = 0.01
    seed: int = 0
    sprite_size: int = 16
    speed: float = 1.25
    sprite_level: float = 0.7
    background_level: float = 0.3
    texture_amplitude: float = 0.3
    background_amplitude: float = 0.06
    static: bool = False
    train_fraction: float = 0.75

    def validate(self):
        if self.num_actions < 2 or self.num_identities < 2:
            raise ValueError("need at least 2 actions and 2 identities")
        if self.num_actions > len(MOTIONS):
            raise ValueError(f"at most {len(MOTIONS)} motion programs are defined")
        if self.num_identities > len(PERIODS) ** 2:
            raise ValueError(f"at most {len(PERIODS) ** 2} identity textures are defined")
        if self.T < 3:
            raise ValueError("T must be at least 3")
        if self.clips_per_pair < 2:
            raise ValueError("clips_per_pair must be at least 2 so both splits are populated")
        for motion in MOTIONS[:self.num_actions]:
            d = displacement(motion, self.T, self.speed)
            if self.sprite_size + (d.max(axis=0) - d.min(axis=0)).max() + 2 > self.size:
                raise ValueError(f"frame too small for the {motion!r} trajectory")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class Dataset:
    items: list
    splits: list
    paths: list
    num_actions: int
    num_identities: int

    def split(self, name: str) -> list:
        return [it for it, s in zip(self.items, self.splits) if s == name]

    def __len__(self):
        return len(self.items)


def identity_periods(num_identities: int) -> list[tuple[float, float]]:
    pairs = list(itertools.product(PERIODS, PERIODS))
    picks = np.linspace(0, len(pairs) - 1, num_identities).round().astype(int)
    return [pairs[i] for i in picks]


def displacement(motion: str, T: int, speed: float) -> np.ndarray:
    """(T, 2) sprite offsets (dy, dx) in pixels for a motion program."""
    t = np.arange(T, dtype=np.float64)
    step = speed * t
    wave = 4.0 * np.sin(2 * math.pi * t / 8.0)
    d = {
        "right": (0 * t, step),
        "left": (0 * t, -step),
        "down": (step, 0 * t),
        "up": (-step, 0 * t),
        "diagonal": (step / math.sqrt(2), step / math.sqrt(2)),
        "oscillate": (0 * t, wave),
        "anti_diagonal": (-step / math.sqrt(2), -step / math.sqrt(2)),
        "up_right": (-step / math.sqrt(2), step / math.sqrt(2)),
        "down_left": (step / math.sqrt(2), -step / math.sqrt(2)),
        "bob": (wave, 0 * t),
    }[motion]
    return np.stack(d, axis=1)


def _box_coverage(pix, start, length):
    # fraction of pixel [p - .5, p + .5) covered by [start, start + length)
    return np.clip(np.minimum(pix + 0.5, start + length) - np.maximum(pix - 0.5, start), 0.0, 1.0)


def _background(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0xB6])
    coarse = rng.uniform(-1.0, 1.0, size=(cfg.size // 4 + 2, cfg.size // 4 + 2))
    # smooth value noise: upsample a coarse grid bilinearly
    pos = np.linspace(0, coarse.shape[0] - 1.001, cfg.size)
    i0 = pos.astype(int)
    f = pos - i0
    rows = coarse[i0] * (1 - f[:, None]) + coarse[i0 + 1] * f[:, None]
    field = rows[:, i0] * (1 - f[None, :]) + rows[:, i0 + 1] * f[None, :]
    return cfg.background_level + cfg.background_amplitude * field


def render_clip(cfg: SynthConfig, action: int, identity: int, rep: int) -> Clip:
    rng = np.random.default_rng([cfg.seed, action, identity, rep])
    s, n = cfg.sprite_size, cfg.size
    if cfg.static:
        d = np.zeros((cfg.T, 2))
    else:
        d = displacement(MOTIONS[action], cfg.T, cfg.speed)
    lo = 1.0 - d.min(axis=0)
    hi = n - s - 1.0 - d.max(axis=0)
    start = rng.uniform(lo, np.maximum(lo, hi))

    (px_x, px_y) = identity_periods(cfg.num_identities)[identity]
    phase_rng = np.random.default_rng([cfg.seed, 0x1D, identity])
    phi_x, phi_y = phase_rng.uniform(0, 2 * math.pi, size=2)

    bg = _background(cfg)
    grid = np.arange(n, dtype=np.float64)
    frames = np.empty((cfg.T, n, n), dtype=np.float64)
    for t in range(cfg.T):
        top, left = start + d[t]
        alpha = _box_coverage(grid, top, s)[:, None] * _box_coverage(grid, left, s)[None, :]
        u = grid[None, :] - left
        v = grid[:, None] - top
        tex = np.cos(2 * math.pi * u / px_x + phi_x) * np.cos(2 * math.pi * v / px_y + phi_y)
        sprite = cfg.sprite_level + cfg.texture_amplitude * tex
        frames[t] = bg * (1.0 - alpha) + sprite * alpha
    if cfg.noise_std:
        frames += rng.normal(0.0, cfg.noise_std, size=frames.shape)
    return Clip(np.clip(frames, 0.0, 1.0)[..., None])


def generate(cfg: SynthConfig) -> Dataset:
    """Render every (action, identity, repetition) clip and split it 75/25.

    The split is stratified: the first ``round(train_fraction * clips_per_pair)``
    repetitions of each (action, identity) pair go to train, the rest to val.
    """
    cfg.validate()
    n_train = min(max(1, round(cfg.train_fraction * cfg.clips_per_pair)), cfg.clips_per_pair - 1)
    items, splits, paths = [], [], []
    for a in range(cfg.num_actions):
        for p in range(cfg.num_identities):
            for r in range(cfg.clips_per_pair):
                items.append(LabeledClip(render_clip(cfg, a, p, r), a, p))
                splits.append("train" if r < n_train else "val")
                paths.append(f"clips/a{a:02d}_p{p:02d}_r{r:03d}.bdqv")
    return Dataset(items, splits, paths, cfg.num_actions, cfg.num_identities)


def write_dataset(ds: Dataset, out_dir, dtype="f32") -> Path:
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    lines = []
    for item, split, rel in zip(ds.items, ds.splits, ds.paths):
        save_clip(item.clip, out / rel, dtype=dtype)
        lines.append(f"{rel}\t{item.action_label}\t{item.privacy_label}\t{split}\n")
    manifest = out / "manifest.tsv"
    manifest.write_text("".join(lines))
    return manifest


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    items, splits, paths = [], [], []
    with open(root / "manifest.tsv", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"manifest row has {len(row)} fields: {row!r}")
            rel, a, p, split = row
            if split not in ("train", "val"):
                raise ValueError(f"unknown split {split!r}")
            items.append(LabeledClip(load_clip(root / rel), int(a), int(p)))
            splits.append(split)
            paths.append(rel)
    if not items:
        raise ValueError(f"{root}: empty manifest")
    return Dataset(items, splits, paths,
                   max(it.action_label for it in items) + 1,
                   max(it.privacy_label for it in items) + 1)


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
