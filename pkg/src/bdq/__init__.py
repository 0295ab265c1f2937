"""Blur, Difference, Quantization: a trainable privacy-preserving video encoder."""
from .encoder import ABLATION_MASKS, FULL, EncoderParams, ModuleMask, encode
from .video import Clip, LabeledClip, load_clip, save_clip

__version__ = "0.1.0"

__all__ = ["ABLATION_MASKS", "FULL", "Clip", "EncoderParams", "LabeledClip", "ModuleMask",
           "encode", "load_clip", "save_clip", "__version__"]
