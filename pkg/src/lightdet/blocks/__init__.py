"""Layer blocks for the six ablation presets."""
from .base import Block, Conv2d, ConvBNSiLU, conv_macs, init_params, scope
from .dysample import Dysample
from .ema import EMA
from .head import DetectHead, decode_detections, dfl_decode, head_widths
from .pconv import FastBlock, FastC2f, PConv, pconv_mac_ratio
from .yolo import SPPF, Bottleneck, C2f

__all__ = [
    "Block", "Bottleneck", "C2f", "Conv2d", "ConvBNSiLU", "DetectHead", "Dysample", "EMA",
    "FastBlock", "FastC2f", "PConv", "SPPF", "conv_macs", "decode_detections", "dfl_decode",
    "head_widths", "init_params", "pconv_mac_ratio", "scope",
]
