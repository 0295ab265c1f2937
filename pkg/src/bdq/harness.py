"""Experiment harness: trade-off rows, ablations, alpha sweeps, adversary
probes, the reconstruction attack and the downsampling baseline.

Every cell trains fresh downstream nets.  Results are plain dataclasses;
:func:`write_rows` / :func:`tradeoff_report` turn them into CSV files under
``runs/<experiment>/<cell>/``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoder import ABLATION_MASKS, FULL, EncoderParams, ModuleMask, encode_batch
from .nn import checkpoint
from .nn import tensor as F
from .nn.layers import AttackNet, NetworkSpec, conv_stack
from .nn.optim import Adam
from .nn.tensor import Tensor
from .trainer import (TrainConfig, ValidationResult, encoder_transform, features, identity_transform,
                      stream, train_adversarial, validate_transform)
from .video import resize_bilinear

log = logging.getLogger(__name__)

ROW_FIELDS = ("method", "action_acc", "privacy_acc", "config_hash", "seed")
DOWNSAMPLE_SIZES = (32, 16, 8, 4)
_STREAM_ATTACK = 21
_STREAM_ATTACK_SHUFFLE = 22
_STREAM_FRAME_SHUFFLE = 23


class FreshInitError(RuntimeError):
    """A validation net started from weights it should never have seen."""


@dataclass
class TradeoffRow:
    method: str
    action_acc: float
    privacy_acc: float
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        if not str(self.method).strip():
            raise ValueError("trade-off row needs a non-empty method label")
        for name in ("action_acc", "privacy_acc"):
            v = getattr(self, name)
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def write_rows(path, rows, fields=None):
    """Write dataclass or dict rows as CSV; floats keep full precision."""
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    if fields is None:
        fields = list(rows[0]) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check_fresh(result: ValidationResult, seen: Sequence[str]):
    """Fresh validation nets must not start from any adversarial-phase weights."""
    clash = set(result.init_fingerprints) & set(seen)
    if clash:
        raise FreshInitError(f"validation net initialized from trained weights {sorted(clash)}")


def _row(method, res: ValidationResult, cfg: TrainConfig, extra=None) -> TradeoffRow:
    key = {"cfg": cfg.to_dict(), "method": method, **(extra or {})}
    return TradeoffRow(method, res.action_acc, res.privacy_acc, config_hash(key), cfg.seed)


def raw_baseline(dataset, cfg: TrainConfig, privacy_spec=None, action=True) -> TradeoffRow:
    res = validate_transform(dataset, identity_transform, cfg, privacy_spec=privacy_spec, action=action)
    return _row("raw", res, cfg)


def validate_encoder(encoder: EncoderParams, dataset, cfg: TrainConfig, mask: ModuleMask = FULL,
                     seen=(), method=None) -> TradeoffRow:
    res = validate_transform(dataset, encoder_transform(encoder, mask), cfg)
    check_fresh(res, seen)
    return _row(method or mask.label, res, cfg, {"encoder": encoder_fingerprint(encoder)})


def encoder_fingerprint(encoder: EncoderParams) -> str:
    h = hashlib.sha256()
    for k, v in sorted(encoder.state().items()):
        h.update(k.encode())
        h.update(np.ascontiguousarray(v, dtype=np.float32).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# ablation grid and alpha sweep
# ---------------------------------------------------------------------------

def ablation_grid(encoder: EncoderParams, dataset, cfg: TrainConfig, masks=ABLATION_MASKS,
                  seen=(), out_dir=None) -> list[TradeoffRow]:
    """Validate ``encoder`` under each module mask with fresh nets."""
    rows = []
    for mask in masks:
        row = validate_encoder(encoder, dataset, cfg, mask, seen)
        log.info("ablation %-6s action %.3f privacy %.3f", mask.label, row.action_acc, row.privacy_acc)
        rows.append(row)
    if out_dir is not None:
        write_rows(Path(out_dir) / "summary.csv", rows, ROW_FIELDS)
    return rows


@dataclass
class SweepCell:
    alpha: float
    row: TradeoffRow
    sigma: float
    boundaries: list
    encoder: EncoderParams = field(repr=False, default=None)

    @property
    def spread(self) -> float:
        return float(max(self.boundaries) - min(self.boundaries))


def train_encoder(dataset, cfg: TrainConfig, out_dir=None):
    """Adversarially train one encoder; returns the game state."""
    state = train_adversarial(dataset, cfg, out_dir)
    if out_dir is not None:
        write_json(Path(out_dir) / "config.json", {"train": cfg.to_dict()})
    return state


def alpha_cell(dataset, cfg: TrainConfig, out_dir=None) -> SweepCell:
    state = train_encoder(dataset, cfg, out_dir)
    seen = (state.target.fingerprint(), state.privacy.fingerprint())
    mask = ModuleMask.parse(cfg.mask)
    row = validate_encoder(state.encoder, dataset, cfg, mask, seen, method=f"alpha={cfg.alpha:g}")
    b = sorted(float(v) for v in state.encoder.boundaries.data)
    cell = SweepCell(cfg.alpha, row, float(state.encoder.sigma.data), b, state.encoder)
    if out_dir is not None:
        write_rows(Path(out_dir) / "result.csv", [sweep_record(cell)])
    return cell


def sweep_record(cell: SweepCell) -> dict:
    rec = {"alpha": cell.alpha, **asdict(cell.row), "sigma": cell.sigma, "boundary_spread": cell.spread}
    rec.update({f"b{i:02d}": v for i, v in enumerate(cell.boundaries)})
    return rec


def alpha_sweep(dataset, alphas, cfg: TrainConfig, out_dir=None) -> list[SweepCell]:
    """Train one encoder per alpha from scratch and validate it."""
    cells = []
    for a in alphas:
        sub = None if out_dir is None else Path(out_dir) / f"alpha_{a:g}"
        cells.append(alpha_cell(dataset, replace(cfg, alpha=float(a)), sub))
    if out_dir is not None:
        write_rows(Path(out_dir) / "summary.csv", [sweep_record(c) for c in cells])
    return cells


# ---------------------------------------------------------------------------
# unseen adversaries
# ---------------------------------------------------------------------------

def adversary_specs(num_identities, channels=1) -> list[NetworkSpec]:
    """Held-out frame-level privacy nets; none matches the training-time P."""
    variants = [
        ("adv_wide", (16, 32), 3, (0,)),
        ("adv_k5", (8, 16), 5, (0,)),
        ("adv_deep3", (8, 16, 32), 3, (0, 1)),
        ("adv_deep4", (8, 16, 16, 32), 3, (0, 1)),
    ]
    return [conv_stack(name, 2, widths, num_identities, kernel=k, in_channels=channels, pool_after=pools)
            for name, widths, k, pools in variants]


@dataclass
class ProbeRow:
    adversary: str
    raw_privacy_acc: float
    encoded_privacy_acc: float
    seed: int

    @property
    def gap(self) -> float:
        return self.raw_privacy_acc - self.encoded_privacy_acc


def multi_adversary_probe(encoder: EncoderParams, dataset, specs, cfg: TrainConfig,
                          mask: ModuleMask = FULL, out_dir=None) -> list[ProbeRow]:
    """Train each adversary on raw clips and on encoder output; report both."""
    if len(specs) < 3:
        raise ValueError("need at least 3 adversary architectures")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("adversary names must be unique")
    enc = encoder_transform(encoder, mask)
    rows = []
    for spec in specs:
        raw = validate_transform(dataset, identity_transform, cfg, privacy_spec=spec, action=False)
        coded = validate_transform(dataset, enc, cfg, privacy_spec=spec, action=False)
        rows.append(ProbeRow(spec.name, raw.privacy_acc, coded.privacy_acc, cfg.seed))
        log.info("adversary %-10s raw %.3f encoded %.3f", spec.name, raw.privacy_acc, coded.privacy_acc)
    if out_dir is not None:
        write_rows(Path(out_dir) / "summary.csv",
                   [{**asdict(r), "gap": r.gap} for r in rows])
    return rows


# ---------------------------------------------------------------------------
# reconstruction attack
# ---------------------------------------------------------------------------

@dataclass
class AttackConfig:
    epochs: int = 60
    lr: float = 2e-3
    batch_size: int = 16
    width: int = 4
    frames: int = 5  # raw frames per clip fed to the encoder
    seed: int = 0


def psnr(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-clip PSNR in dB on [0, 1] intensities; leading axis is the clip."""
    err = ((np.clip(pred, 0, 1) - target) ** 2).reshape(len(pred), -1).mean(axis=1)
    return 10.0 * np.log10(1.0 / np.maximum(err, 1e-12))


def attack_pairs(dataset, transform, cfg: TrainConfig, frames: int, shift: bool):
    """(inputs, targets) per split.  ``shift`` aligns T-1 difference outputs with frames[1:]."""
    cfg = replace(cfg, t=frames)
    (xt, _, _), (xv, _, _) = features(dataset, identity_transform, cfg)

    def build(x):
        z = transform(x).astype(np.float32)
        y = x[:, :, 1:] if shift else x
        if z.shape != y.shape:
            raise ValueError(f"encoded shape {z.shape} does not match target {y.shape}")
        return z, y

    return build(xt), build(xv)


def train_attacker(train, val, acfg: AttackConfig, channels=1):
    """Fit an :class:`AttackNet` with Adam; return (net, per-clip val PSNR)."""
    zt, yt = train
    zv, yv = val
    net = AttackNet(stream(acfg.seed, _STREAM_ATTACK), width=acfg.width,
                    in_channels=zt.shape[1], out_channels=channels)
    opt = Adam(net.parameters(), acfg.lr)
    rng = stream(acfg.seed, _STREAM_ATTACK_SHUFFLE)
    for epoch in range(acfg.epochs):
        order = rng.permutation(len(zt))
        losses = []
        for s in range(0, len(order), acfg.batch_size):
            idx = order[s:s + acfg.batch_size]
            loss = F.mse(net(Tensor(zt[idx])), Tensor(yt[idx]))
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        log.debug("attack epoch %d mse %.5f", epoch, np.mean(losses))
    return net, psnr(reconstruct(net, zv), yv)


def reconstruct(net, z, batch=32):
    with F.no_grad():
        return np.concatenate([net(Tensor(z[s:s + batch])).data for s in range(0, len(z), batch)])


@dataclass
class AttackResult:
    psnr_trained: float
    psnr_reference: float
    seed: int

    @property
    def gap(self) -> float:
        return self.psnr_reference - self.psnr_trained


def attack_transform(transform, dataset, cfg: TrainConfig, acfg: AttackConfig, shift=True):
    train, val = attack_pairs(dataset, transform, cfg, acfg.frames, shift)
    net, scores = train_attacker(train, val, acfg)
    return net, val, float(scores.mean())


def reconstruction_attack(trained: EncoderParams, dataset, cfg: TrainConfig, acfg: AttackConfig,
                          reference: Optional[EncoderParams] = None, mask: ModuleMask = FULL,
                          out_dir=None) -> AttackResult:
    """Attack ``trained`` and ``reference`` (default: the untrained encoder) with equal budgets."""
    reference = reference or EncoderParams.default()
    shift = mask.use_difference
    scores = {}
    for arm, enc in (("trained", trained), ("reference", reference)):
        net, (zv, yv), score = attack_transform(encoder_transform(enc, mask), dataset, cfg, acfg, shift)
        scores[arm] = score
        log.info("attack on %s encoder: PSNR %.2f dB", arm, score)
        if out_dir is not None:
            _write_samples(Path(out_dir) / arm, net, zv, yv)
    res = AttackResult(scores["trained"], scores["reference"], acfg.seed)
    if out_dir is not None:
        write_rows(Path(out_dir) / "summary.csv", [{**asdict(res), "gap": res.gap}])
    return res


def _write_samples(out: Path, net, z, y, count=2):
    from .video import Clip, save_clip

    out.mkdir(parents=True, exist_ok=True)
    rec = np.clip(reconstruct(net, z[:count]), 0.0, 1.0)
    for i in range(min(count, len(z))):
        for name, arr in (("encoded", z[i]), ("reconstructed", rec[i]), ("original", y[i])):
            save_clip(Clip(np.clip(np.moveaxis(arr, 0, -1), 0.0, 1.0)), out / f"sample{i}_{name}.bdqv")


# ---------------------------------------------------------------------------
# downsampling baseline and reports
# ---------------------------------------------------------------------------

def downsample_transform(size: int):
    def apply(x):
        # (N, C, T, H, W) -> (N, T, H, W, C) for the resizer and back
        h, w = x.shape[-2:]
        if size > min(h, w):
            raise ValueError(f"target size {size} larger than clips ({h}x{w})")
        if size == h and size == w:
            return x
        frames = np.moveaxis(x, 1, -1)
        return np.moveaxis(resize_bilinear(frames, size, size), -1, 1)
    return apply


def shuffle_transform(seed: int):
    """Permute the frames of every clip independently (temporal-order control)."""
    rng = stream(seed, _STREAM_FRAME_SHUFFLE)

    def apply(x):
        order = np.argsort(rng.random(x.shape[:1] + x.shape[2:3]), axis=1)
        return np.take_along_axis(x, order[:, None, :, None, None], axis=2)
    return apply


def downsample_baseline(dataset, sizes, cfg: TrainConfig, out_dir=None) -> list[TradeoffRow]:
    rows = []
    for size in sizes:
        res = validate_transform(dataset, downsample_transform(int(size)), cfg)
        rows.append(_row(f"down{int(size)}", res, cfg, {"size": int(size)}))
        log.info("downsample %dx%d action %.3f privacy %.3f", size, size, res.action_acc, res.privacy_acc)
    if out_dir is not None:
        write_rows(Path(out_dir) / "summary.csv", rows, ROW_FIELDS)
    return rows


def tradeoff_report(rows, out_dir) -> tuple[Path, Path]:
    """``tradeoff.csv`` plus ``tradeoff_plot.tsv`` (x = privacy, y = action, label)."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to report")
    rows = [r if isinstance(r, TradeoffRow) else TradeoffRow(**_coerce_row(r)) for r in rows]
    out = Path(out_dir)
    table = write_rows(out / "tradeoff.csv", rows, ROW_FIELDS)
    plot = out / "tradeoff_plot.tsv"
    with open(plot, "w", newline="") as fh:
        fh.write("x_privacy_acc\ty_action_acc\tlabel\n")
        for r in rows:
            fh.write(f"{r.privacy_acc!r}\t{r.action_acc!r}\t{r.method}\n")
    return table, plot


def _coerce_row(d: dict) -> dict:
    return {"method": d["method"], "action_acc": float(d["action_acc"]),
            "privacy_acc": float(d["privacy_acc"]), "config_hash": d.get("config_hash", ""),
            "seed": int(d.get("seed", 0) or 0)}


def save_encoder(encoder: EncoderParams, path):
    checkpoint.save_params(encoder.state(), path)


def load_encoder(path) -> EncoderParams:
    return EncoderParams.from_state(checkpoint.load_params(path))


__all__ = [
    "AttackConfig", "AttackResult", "ProbeRow", "SweepCell", "TradeoffRow", "ablation_grid",
    "adversary_specs", "alpha_sweep", "downsample_baseline", "multi_adversary_probe", "psnr",
    "raw_baseline", "reconstruction_attack", "tradeoff_report",
]
