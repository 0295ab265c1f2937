"""Layer specs and the small conv networks built from them."""
from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as F
from .tensor import Tensor


@dataclass(frozen=True)
class Layer:
    kind: str  # standardize | conv2d | conv3d | relu | max_pool | global_avg_pool | dense
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: str = "same"
    pool: tuple = (2, 2)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    in_channels: int
    num_classes: int
    name: str = "net"

    @property
    def dims(self) -> int:
        kinds = {layer.kind for layer in self.layers}
        return 3 if "conv3d" in kinds else 2


# per-frame standardization at the input: lets momentum SGD train these nets in
# a few hundred steps and makes them blind to global contrast, so an encoder can
# only hide identity by destroying it, not by shrinking it.  STD_EPS floors the
# divisor at an rms of 0.01 so near-constant frames are not blown up.
STD_EPS = 1e-4


def conv_stack(name, dims, widths, num_classes, kernel=3, in_channels=1, pool_after=(0,)):
    """Input centering, conv/relu blocks, a max pool after the listed block indices, then GAP + dense."""
    conv = "conv3d" if dims == 3 else "conv2d"
    pool = (2, 2, 2) if dims == 3 else (2, 2)
    layers = [Layer("standardize")]
    for i, width in enumerate(widths):
        layers.append(Layer(conv, out_channels=width, kernel=kernel))
        layers.append(Layer("relu"))
        if i in pool_after and i < len(widths) - 1:
            layers.append(Layer("max_pool", pool=pool))
    layers.append(Layer("global_avg_pool"))
    layers.append(Layer("dense", out_channels=num_classes))
    return NetworkSpec(tuple(layers), in_channels, num_classes, name)


def action_net_spec(num_actions, in_channels=1):
    """3D conv action classifier: conv3d 1->8, pool, conv3d 8->16, GAP, dense."""
    return conv_stack("target", 3, (8, 16), num_actions, in_channels=in_channels)


def privacy_net_spec(num_identities, in_channels=1):
    """Frame-level 2D conv privacy classifier with the same shape as the action net."""
    return conv_stack("privacy", 2, (8, 16), num_identities, in_channels=in_channels)


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Network:
    """Parameters plus forward pass for a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        channels = spec.in_channels
        dense_in = None
        for i, layer in enumerate(spec.layers):
            if layer.kind in ("conv2d", "conv3d"):
                nd = 3 if layer.kind == "conv3d" else 2
                shape = (layer.out_channels, channels) + (layer.kernel,) * nd
                fan_in = channels * layer.kernel ** nd
                self.params[f"{spec.name}.{i}.w"] = Tensor(_he_uniform(rng, shape, fan_in, dtype), True)
                self.params[f"{spec.name}.{i}.b"] = Tensor(np.zeros(layer.out_channels, dtype), True)
                channels = layer.out_channels
            elif layer.kind == "global_avg_pool":
                dense_in = channels
            elif layer.kind == "dense":
                fan_in = dense_in if dense_in is not None else channels
                shape = (fan_in, layer.out_channels)
                self.params[f"{spec.name}.{i}.w"] = Tensor(_he_uniform(rng, shape, fan_in, dtype), True)
                self.params[f"{spec.name}.{i}.b"] = Tensor(np.zeros(layer.out_channels, dtype), True)
                channels = layer.out_channels
            elif layer.kind not in ("relu", "max_pool", "standardize"):
                raise ValueError(f"unknown layer kind {layer.kind!r}")
        if channels != spec.num_classes:
            raise ValueError(f"{spec.name}: final width {channels} != num_classes {spec.num_classes}")

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.spec.layers):
            if layer.kind in ("conv2d", "conv3d"):
                want = 5 if layer.kind == "conv3d" else 4
                if x.ndim != want:
                    raise ValueError(f"{layer.kind} expects rank-{want} input, got {x.shape}")
                x = F.conv(x, self.params[f"{self.spec.name}.{i}.w"],
                           self.params[f"{self.spec.name}.{i}.b"],
                           stride=layer.stride, padding=layer.padding)
            elif layer.kind == "standardize":
                # per-frame, per-channel, over the spatial axes
                x = x - F.mean(x, axis=(-2, -1), keepdims=True)
                x = x * F.power(F.mean(x * x, axis=(-2, -1), keepdims=True) + STD_EPS, -0.5)
            elif layer.kind == "relu":
                x = F.relu(x)
            elif layer.kind == "max_pool":
                # clamp so tiny inputs (e.g. 4x4 downsampled clips) survive
                pool = tuple(min(p, s) for p, s in zip(layer.pool, x.shape[2:]))
                x = F.max_pool(x, pool)
            elif layer.kind == "global_avg_pool":
                x = F.global_avg_pool(x)
            elif layer.kind == "dense":
                x = F.matmul(x, self.params[f"{self.spec.name}.{i}.w"]) + self.params[f"{self.spec.name}.{i}.b"]
        return x

    def parameters(self):
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unexpected parameter {k!r}")
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.asarray(v, dtype=self.params[k].dtype).copy()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()[:16]

    @contextlib.contextmanager
    def frozen(self):
        """Use the net without recording gradients for its own parameters."""
        flags = {k: p.requires_grad for k, p in self.params.items()}
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        try:
            yield self
        finally:
            for k, p in self.params.items():
                p.requires_grad = flags[k]


@dataclass
class AttackNet:
    """3D encoder-decoder: two stride-(1,2,2) downs, two nearest-neighbour ups, skips.

    Temporal resolution is kept so any clip length works; the final layer
    also sees the raw input, which lets the net learn an exact pass-through.
    """

    rng: np.random.Generator
    width: int = 8
    in_channels: int = 1
    out_channels: int = 1
    dtype: type = np.float32
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        w, c = self.width, self.in_channels
        layout = {
            "enc0": (w, c),
            "down1": (2 * w, w),
            "down2": (2 * w, 2 * w),
            "up1": (2 * w, 4 * w),
            "up0": (w, 3 * w),
            "out": (self.out_channels, w + c),
        }
        for name, (o, i) in layout.items():
            k = 1 if name == "out" else 3
            shape = (o, i, k, k, k)
            self.params[f"attack.{name}.w"] = Tensor(_he_uniform(self.rng, shape, i * k ** 3, self.dtype), True)
            self.params[f"attack.{name}.b"] = Tensor(np.zeros(o, self.dtype), True)

    def _conv(self, name, x, stride=1):
        return F.conv(x, self.params[f"attack.{name}.w"], self.params[f"attack.{name}.b"], stride=stride)

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"attack net needs H, W divisible by 4, got {h}x{w}")
        e0 = F.relu(self._conv("enc0", x))
        e1 = F.relu(self._conv("down1", e0, stride=(1, 2, 2)))
        e2 = F.relu(self._conv("down2", e1, stride=(1, 2, 2)))
        u1 = F.relu(self._conv("up1", F.concat([F.upsample(e2, (1, 2, 2)), e1], axis=1)))
        u0 = F.relu(self._conv("up0", F.concat([F.upsample(u1, (1, 2, 2)), e0], axis=1)))
        return self._conv("out", F.concat([u0, x], axis=1))

    def parameters(self):
        return list(self.params.values())

    def state(self):
        return {k: v.data.copy() for k, v in self.params.items()}
