"""The Blur -> Difference -> Quantization video encoder.

Every stage is built from differentiable ops, so the encoder's blur width
and quantization boundaries can be trained jointly with downstream nets.
Batched inputs are ``(N, C, T, H, W)`` tensors; :func:`encode` wraps a
single :class:`~bdq.video.Clip`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .nn import tensor as F
from .nn.tensor import Tensor
from .video import Clip

log = logging.getLogger(__name__)

NUM_BOUNDARIES = 15
LEVELS = 15.0
DEFAULT_HARDNESS = 5.0
WINDOW = 5
SIGMA_FLOOR = 0.3
# softplus(raw) = 0.7, so sigma starts at 1.0
SIGMA_RAW_INIT = math.log(math.expm1(0.7))


def default_boundaries(dtype=np.float32) -> np.ndarray:
    return np.arange(NUM_BOUNDARIES, dtype=dtype) + dtype(0.5)


@dataclass
class EncoderParams:
    raw_sigma: Tensor
    boundaries: Tensor
    hardness: float = DEFAULT_HARDNESS
    window: int = WINDOW

    def __post_init__(self):
        if self.boundaries.shape != (NUM_BOUNDARIES,):
            raise ValueError(f"need {NUM_BOUNDARIES} boundaries, got shape {self.boundaries.shape}")
        if not self.hardness > 0:
            raise ValueError("hardness must be positive")

    @classmethod
    def default(cls, dtype=np.float32, hardness=DEFAULT_HARDNESS):
        return cls(Tensor(np.asarray(SIGMA_RAW_INIT, dtype=dtype), requires_grad=True),
                   Tensor(default_boundaries(dtype), requires_grad=True), hardness)

    @property
    def sigma(self) -> Tensor:
        """Blur width, kept above ``SIGMA_FLOOR`` by a softplus."""
        return F.softplus(self.raw_sigma) + SIGMA_FLOOR

    def parameters(self):
        return [self.raw_sigma, self.boundaries]

    def state(self) -> dict[str, np.ndarray]:
        return {
            "encoder.raw_sigma": self.raw_sigma.data.copy(),
            "encoder.boundaries": self.boundaries.data.copy(),
            "encoder.hardness": np.asarray(self.hardness, dtype=np.float32),
        }

    @classmethod
    def from_state(cls, state, dtype=np.float32):
        return cls(Tensor(np.asarray(state["encoder.raw_sigma"], dtype=dtype), requires_grad=True),
                   Tensor(np.asarray(state["encoder.boundaries"], dtype=dtype), requires_grad=True),
                   float(state["encoder.hardness"]))

    def copy(self):
        return EncoderParams(Tensor(self.raw_sigma.data.copy(), True),
                             Tensor(self.boundaries.data.copy(), True), self.hardness, self.window)


@dataclass(frozen=True)
class ModuleMask:
    use_blur: bool = True
    use_difference: bool = True
    use_quantization: bool = True

    @classmethod
    def parse(cls, text: str) -> "ModuleMask":
        """``"bdq"``, ``"d+q"``, ``"B"``... any subset of the letters b, d, q."""
        letters = text.lower().replace("+", "").replace(",", "")
        if not letters or set(letters) - set("bdq"):
            raise ValueError(f"mask must be a non-empty subset of 'bdq', got {text!r}")
        return cls("b" in letters, "d" in letters, "q" in letters)

    @property
    def label(self) -> str:
        return "+".join(n for n, on in zip("BDQ", (self.use_blur, self.use_difference, self.use_quantization)) if on)

    @property
    def empty(self) -> bool:
        return not (self.use_blur or self.use_difference or self.use_quantization)


FULL = ModuleMask()
# ablation order: singles, pairs, all three
ABLATION_MASKS = tuple(ModuleMask.parse(m) for m in ("b", "d", "q", "bd", "bq", "dq", "bdq"))


def gaussian_kernel(sigma, window: int = WINDOW) -> Tensor:
    """Normalized ``window x window`` Gaussian sampled at integer offsets."""
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(np.asarray(sigma, dtype=np.float64))
    if not np.all(sigma.data > 0):
        raise ValueError(f"sigma must be positive, got {sigma.data}")
    r = np.arange(window, dtype=sigma.dtype) - (window // 2)
    r2 = Tensor(r[:, None] ** 2 + r[None, :] ** 2)
    two_var = sigma * sigma * 2.0
    k = F.exp(-(r2 / two_var)) / (two_var * math.pi)
    return k / k.sum()


def blur(x: Tensor, sigma) -> Tensor:
    """Blur every frame of a ``(..., H, W)`` tensor with :func:`gaussian_kernel`."""
    return F.filter2d(x, gaussian_kernel(sigma), preserve_constants=True)


def difference(x: Tensor, axis: int = 2) -> Tensor:
    """``out[i] = x[i + 1] - x[i]`` along the time axis; one frame shorter."""
    n = x.shape[axis]
    if n < 2:
        raise ValueError(f"difference needs at least 2 frames, got {n}")
    lead = (slice(None),) * axis
    return x[lead + (slice(1, None),)] - x[lead + (slice(0, -1),)]


def normalize_to_range(x: Tensor) -> Tensor:
    """Map differences from [-1, 1] onto [0, 15] with a fixed affine map."""
    if x.data.size and (x.data.min() < -1.0 or x.data.max() > 1.0):
        log.warning("difference values outside [-1, 1] clamped before quantization")
        x = F.clip(x, -1.0, 1.0)
    return (x + 1.0) * (LEVELS / 2.0)


def quantize_soft(x: Tensor, boundaries: Tensor, hardness: float) -> Tensor:
    """``sum_i sigmoid(H * (x - b_i))`` elementwise; differentiable in x and b."""
    if not hardness > 0:
        raise ValueError("hardness must be positive")
    x = x if isinstance(x, Tensor) else Tensor(x)
    b = boundaries if isinstance(boundaries, Tensor) else Tensor(boundaries)
    s = F._sigmoid(hardness * (x.data[..., None] - b.data))
    out = s.sum(axis=-1)

    def backward(g):
        slope = hardness * s * (1.0 - s)
        gx = g * slope.sum(axis=-1) if x.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = -(slope.reshape(-1, slope.shape[-1]).T @ g.reshape(-1))
        return gx, gb

    return Tensor.from_op(out, (x, b), backward)


def quantize_hard(x, boundaries) -> np.ndarray:
    """Number of boundaries ``b_i <= x`` (a step that counts ties), as int."""
    x = np.asarray(getattr(x, "data", x))
    b = np.asarray(getattr(boundaries, "data", boundaries))
    return (x[..., None] >= b).sum(axis=-1).astype(np.int64)


def encode_tensor(x: Tensor, sigma, boundaries, hardness, mask: ModuleMask = FULL, time_axis: int = 2) -> Tensor:
    """Apply the enabled stages B -> D -> Q and rescale the result to [0, 1]."""
    if mask.empty:
        raise ValueError("at least one encoder module must be enabled")
    if mask.use_blur:
        x = blur(x, sigma)
    if mask.use_difference:
        x = normalize_to_range(difference(x, axis=time_axis))
    else:
        x = x * LEVELS
    if mask.use_quantization:
        x = quantize_soft(x, boundaries, hardness)
    return x * (1.0 / LEVELS)


def encode_batch(x: Tensor, params: EncoderParams, mask: ModuleMask = FULL) -> Tensor:
    """Encode an ``(N, C, T, H, W)`` batch."""
    return encode_tensor(x, params.sigma, params.boundaries, params.hardness, mask)


def encode(clip: Clip, params: EncoderParams, mask: ModuleMask = FULL) -> Clip:
    """Encode one clip; the result is a clip with T - 1 frames when D is on."""
    x = Tensor(np.moveaxis(clip.frames, -1, 0)[None])
    with F.no_grad():
        out = encode_batch(x, params, mask).data[0]
    # soft quantization can land a hair outside [0, 1] in float32
    return Clip(np.clip(np.moveaxis(out, 0, -1), 0.0, 1.0), clip.frame_rate_hint)
