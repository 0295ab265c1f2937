"""Adversarial training of the encoder and freeze-and-retrain validation.

One training iteration plays two moves on the same batch:

* ``step_ET`` updates the encoder and the action net on
  ``XE(T(E(V)), action) - alpha * H(P(E(V)))`` with the privacy net fixed;
* ``step_P`` updates only the privacy net on ``XE(P(E(V)), identity)`` with
  the encoder output detached.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .encoder import FULL, EncoderParams, ModuleMask, encode_batch
from .nn import checkpoint
from .nn import tensor as F
from .nn.layers import Network, NetworkSpec, action_net_spec, privacy_net_spec
from .nn.optim import SGD
from .nn.tensor import Tensor
from .video import Clip, center_crop, multi_scale_crop, temporal_sample

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "loss_ET", "loss_P", "train_action_acc", "train_privacy_acc")

# independent random streams derived from one seed
_STREAM_ENCODER_T = 1
_STREAM_ENCODER_P = 2
_STREAM_SHUFFLE = 3
_STREAM_AUGMENT = 4
_STREAM_FRESH_T = 11
_STREAM_FRESH_P = 12
_STREAM_FRESH_SHUFFLE = 13


def stream(seed: int, tag: int, *extra) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag, *extra])


@dataclass
class TrainConfig:
    alpha: float = 2.0
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 16
    t: int = 9
    crop: int = 32
    seed: int = 0
    momentum: float = 0.9
    encoder_lr_scale: float = 1.0
    augment: bool = False
    alternate: str = "batch"
    privacy_frames: int = 0
    checkpoint_every: int = 10
    mask: str = "bdq"

    def validate(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.alternate not in ("batch", "epoch"):
            raise ValueError("alternate must be 'batch' or 'epoch'")
        ModuleMask.parse(self.mask)

    def to_dict(self):
        return asdict(self)


@dataclass
class GameState:
    encoder: EncoderParams
    target: Network
    privacy: Network
    opt_et: SGD
    opt_p: SGD
    mask: ModuleMask = FULL
    epoch: int = 0
    log: list = field(default_factory=list)

    def checkpoint_state(self) -> dict:
        out = dict(self.encoder.state())
        out.update(self.target.state())
        out.update(self.privacy.state())
        return out


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _prepare_clip(clip: Clip, cfg: TrainConfig, rng: Optional[np.random.Generator], train: bool) -> np.ndarray:
    if train and rng is not None:
        clip = temporal_sample(clip, cfg.t, "random", rng)
        if cfg.augment:
            clip = multi_scale_crop(clip, cfg.crop, rng)
        else:
            clip = center_crop(clip, cfg.crop)
    else:
        clip = center_crop(temporal_sample(clip, cfg.t, "start"), cfg.crop)
    return np.moveaxis(clip.frames, -1, 0)  # (C, T, H, W)


def make_batch(items, cfg: TrainConfig, rng=None, train=True):
    """Stack labeled clips into ``(N, C, t, crop, crop)`` float32 plus label arrays."""
    if not items:
        raise ValueError("empty batch")
    x = np.stack([_prepare_clip(it.clip, cfg, rng, train) for it in items]).astype(np.float32)
    ya = np.array([it.action_label for it in items], dtype=np.int64)
    yp = np.array([it.privacy_label for it in items], dtype=np.int64)
    return x, ya, yp


def frames_of(z: Tensor) -> Tensor:
    """``(N, C, T, H, W)`` -> ``(N * T, C, H, W)`` for the frame-level privacy net."""
    n, c, t, h, w = z.shape
    return z.transpose(0, 2, 1, 3, 4).reshape(n * t, c, h, w)


def _frame_subset(z: Tensor, k: int, rng) -> Tensor:
    t = z.shape[2]
    if not k or k >= t:
        return z
    idx = np.sort(rng.choice(t, size=k, replace=False))
    return z[:, :, idx]


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=-1) == labels).mean())


# ---------------------------------------------------------------------------
# the two moves
# ---------------------------------------------------------------------------

def new_game(num_actions, num_identities, cfg: TrainConfig, channels=1, dtype=np.float32) -> GameState:
    encoder = EncoderParams.default(dtype)
    target = Network(action_net_spec(num_actions, channels), stream(cfg.seed, _STREAM_ENCODER_T), dtype)
    privacy = Network(privacy_net_spec(num_identities, channels), stream(cfg.seed, _STREAM_ENCODER_P), dtype)
    opt_et = SGD(target.parameters(), cfg.lr, cfg.epochs, cfg.momentum)
    # encoder params can take a scaled learning rate
    opt_enc = SGD(encoder.parameters(), cfg.lr * cfg.encoder_lr_scale, cfg.epochs, cfg.momentum)
    opt_p = SGD(privacy.parameters(), cfg.lr, cfg.epochs, cfg.momentum)
    state = GameState(encoder, target, privacy, _Joint(opt_et, opt_enc), opt_p, ModuleMask.parse(cfg.mask))
    return state


class _Joint:
    """Step several optimizers as one (encoder + action net share a move)."""

    def __init__(self, *opts):
        self.opts = opts

    def step(self, epoch):
        for opt in self.opts:
            opt.step(epoch)

    def lr(self, epoch):
        return self.opts[0].lr(epoch)

    @property
    def params(self):
        return [p for opt in self.opts for p in opt.params]


def step_ET(batch, state: GameState, alpha: float, epoch: int = 0, frame_rng=None, privacy_frames=0):
    """Update encoder + action net against a fixed privacy net.  Returns (loss, action logits)."""
    x, ya, _ = batch
    if len(x) == 0:
        raise ValueError("empty batch")
    z = encode_batch(Tensor(x), state.encoder, state.mask)
    logits_t = state.target(z)
    loss = F.softmax_cross_entropy(logits_t, ya)
    if alpha:
        with state.privacy.frozen():
            zf = _frame_subset(z, privacy_frames, frame_rng) if frame_rng is not None else z
            logits_p = state.privacy(frames_of(zf))
            loss = loss - F.entropy(logits_p) * alpha
    loss.backward()
    state.opt_et.step(epoch)
    return float(loss.data), logits_t.data


def step_P(batch, state: GameState, epoch: int = 0, frame_rng=None, privacy_frames=0):
    """Update only the privacy net on the detached encoder output.  Returns (loss, frame logits)."""
    x, _, yp = batch
    if len(x) == 0:
        raise ValueError("empty batch")
    with F.no_grad():
        z = encode_batch(Tensor(x), state.encoder, state.mask)
    if frame_rng is not None:
        z = _frame_subset(z, privacy_frames, frame_rng)
    t = z.shape[2]
    logits = state.privacy(frames_of(z))
    loss = F.softmax_cross_entropy(logits, np.repeat(yp, t))
    loss.backward()
    state.opt_p.step(epoch)
    return float(loss.data), logits.data, np.repeat(yp, t)


def train_adversarial(dataset, cfg: TrainConfig, out_dir=None, state: Optional[GameState] = None) -> GameState:
    """Play the two-move game for ``cfg.epochs`` epochs on the train split."""
    cfg.validate()
    train = dataset.split("train")
    if not train:
        raise ValueError("dataset has no training clips")
    channels = train[0].clip.shape[-1]
    if state is None:
        state = new_game(dataset.num_actions, dataset.num_identities, cfg, channels)
    shuffle_rng = stream(cfg.seed, _STREAM_SHUFFLE)
    aug_rng = stream(cfg.seed, _STREAM_AUGMENT)
    frame_rng = stream(cfg.seed, _STREAM_AUGMENT, 1) if cfg.privacy_frames else None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train))
        batches = [[train[i] for i in order[s:s + cfg.batch_size]]
                   for s in range(0, len(order), cfg.batch_size)]
        stats = {"et": [], "p": [], "a_hit": 0, "a_n": 0, "p_hit": 0, "p_n": 0}

        def do_et(batch):
            loss, logits = step_ET(batch, state, cfg.alpha, epoch, frame_rng, cfg.privacy_frames)
            stats["et"].append(loss)
            stats["a_hit"] += int((logits.argmax(-1) == batch[1]).sum())
            stats["a_n"] += len(batch[1])

        def do_p(batch):
            loss, logits, labels = step_P(batch, state, epoch, frame_rng, cfg.privacy_frames)
            stats["p"].append(loss)
            stats["p_hit"] += int((logits.argmax(-1) == labels).sum())
            stats["p_n"] += len(labels)

        prepared = [make_batch(b, cfg, aug_rng, train=True) for b in batches]
        if cfg.alternate == "batch":
            for batch in prepared:
                do_et(batch)
                do_p(batch)
        else:
            for batch in prepared:
                do_et(batch)
            for batch in prepared:
                do_p(batch)

        row = {
            "epoch": epoch,
            "lr": state.opt_et.lr(epoch),
            "loss_ET": float(np.mean(stats["et"])),
            "loss_P": float(np.mean(stats["p"])),
            "train_action_acc": stats["a_hit"] / max(stats["a_n"], 1),
            "train_privacy_acc": stats["p_hit"] / max(stats["p_n"], 1),
        }
        state.log.append(row)
        state.epoch = epoch + 1
        log.info("epoch %d  loss_ET %.4f  loss_P %.4f  act %.3f  priv %.3f  sigma %.3f",
                 epoch, row["loss_ET"], row["loss_P"], row["train_action_acc"],
                 row["train_privacy_acc"], float(state.encoder.sigma.data))
        if out is not None and (state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs):
            checkpoint.save_params(state.checkpoint_state(), out / f"checkpoint_e{state.epoch:03d}.bdqp")
    if out is not None:
        write_log(state.log, out / "log.csv")
        checkpoint.save_params(state.encoder.state(), out / "encoder.bdqp")
    return state


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------------------
# freeze-and-retrain validation
# ---------------------------------------------------------------------------

Transform = Callable[[np.ndarray], np.ndarray]


def encoder_transform(encoder: EncoderParams, mask: ModuleMask = FULL) -> Transform:
    def apply(x):
        with F.no_grad():
            return encode_batch(Tensor(x), encoder, mask).data
    return apply


def identity_transform(x):
    return x


def _transform_split(items, transform, cfg, batch=64):
    xs, ya, yp = [], [], []
    for s in range(0, len(items), batch):
        x, a, p = make_batch(items[s:s + batch], cfg, train=False)
        xs.append(transform(x).astype(np.float32))
        ya.append(a)
        yp.append(p)
    return np.concatenate(xs), np.concatenate(ya), np.concatenate(yp)


def train_classifier(spec: NetworkSpec, x, y, cfg: TrainConfig, init_rng, shuffle_rng, frame_level: bool,
                     epochs=None) -> Network:
    """Fit a fresh net with SGD + cosine annealing on precomputed features.

    ``frame_level`` treats every frame of every clip as a sample (privacy
    nets); batches still hold ``batch_size`` clips.
    """
    epochs = epochs or cfg.epochs
    net = Network(spec, init_rng, np.float32)
    opt = SGD(net.parameters(), cfg.lr, epochs, cfg.momentum)
    n = len(x)
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb = Tensor(x[idx])
            if frame_level:
                t = xb.shape[2]
                logits = net(frames_of(xb))
                loss = F.softmax_cross_entropy(logits, np.repeat(y[idx], t))
            else:
                loss = F.softmax_cross_entropy(net(xb), y[idx])
            loss.backward()
            opt.step(epoch)
    return net


def predict_clips(net: Network, x, frame_level: bool, batch=64) -> np.ndarray:
    """Class probabilities per clip; frame-level nets average softmax over frames."""
    out = []
    with F.no_grad():
        for s in range(0, len(x), batch):
            xb = Tensor(x[s:s + batch])
            if frame_level:
                n, _, t = xb.shape[:3]
                probs = F.softmax(net(frames_of(xb)).data).reshape(n, t, -1).mean(axis=1)
            else:
                probs = F.softmax(net(xb).data)
            out.append(probs)
    return np.concatenate(out)


@dataclass
class ValidationResult:
    action_acc: float
    privacy_acc: float
    target_fingerprint: str = ""
    privacy_fingerprint: str = ""
    init_fingerprints: tuple = ()


def features(dataset, transform: Transform, cfg: TrainConfig):
    train = _transform_split(dataset.split("train"), transform, cfg)
    val = _transform_split(dataset.split("val"), transform, cfg)
    return train, val


def validate_transform(dataset, transform: Transform, cfg: TrainConfig, privacy_spec=None,
                       action=True, privacy=True) -> ValidationResult:
    """Train fresh action and privacy nets on ``transform`` outputs; score the val split.

    Action accuracy is clip-1 crop-1 (start-aligned window, centre crop);
    privacy accuracy argmaxes the frame-averaged softmax of the privacy net.
    """
    (xt, yat, ypt), (xv, yav, ypv) = features(dataset, transform, cfg)
    channels = xt.shape[1]
    acc_a = acc_p = float("nan")
    fps, inits = {}, []
    if action:
        spec = action_net_spec(dataset.num_actions, channels)
        inits.append(Network(spec, stream(cfg.seed, _STREAM_FRESH_T)).fingerprint())
        net = train_classifier(spec, xt, yat, cfg, stream(cfg.seed, _STREAM_FRESH_T),
                               stream(cfg.seed, _STREAM_FRESH_SHUFFLE, 0), frame_level=False)
        acc_a = _accuracy(predict_clips(net, xv, False), yav)
        fps["t"] = net.fingerprint()
    if privacy:
        spec = privacy_spec or privacy_net_spec(dataset.num_identities, channels)
        inits.append(Network(spec, stream(cfg.seed, _STREAM_FRESH_P)).fingerprint())
        net = train_classifier(spec, xt, ypt, cfg, stream(cfg.seed, _STREAM_FRESH_P),
                               stream(cfg.seed, _STREAM_FRESH_SHUFFLE, 1), frame_level=True)
        acc_p = _accuracy(predict_clips(net, xv, True), ypv)
        fps["p"] = net.fingerprint()
    return ValidationResult(acc_a, acc_p, fps.get("t", ""), fps.get("p", ""), tuple(inits))


def validate_frozen(encoder: EncoderParams, dataset, cfg: TrainConfig, mask: ModuleMask = FULL) -> ValidationResult:
    """Freeze ``encoder`` and score it with freshly trained action/privacy nets."""
    return validate_transform(dataset, encoder_transform(encoder, mask), cfg)
