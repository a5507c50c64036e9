"""The six-step ablation ladder as programmatic graph presets.

====  ===========================================================
 id   architecture
====  ===========================================================
 1    YOLOv8s: heads at strides 8/16/32
 2    + stride-4 head; top-down path extended to P2, bottom-up path
      rebuilt from it (heads at 4/8/16/32)
 3    2 without the stride-32 head and the PAN leg feeding it
      (backbone P5 stage and SPPF stay: the top-down path uses them)
 4    3 with every neck C2f replaced by Fast-C2f (backbone untouched)
 5    4 with every neck nearest upsample replaced by Dysample
 6    5 with EMA attention in front of each head level
====  ===========================================================

Widths and depths follow the YOLOv8 scaling rule with the ``s`` multipliers
(width 0.5, depth 0.33, channel cap 1024). Node ids are role names shared by
every preset, so cost diffs line up row by row.

:func:`write_snapshots` regenerates the committed JSON snapshots for
``nc=10, imgsz=640``.
"""
from __future__ import annotations

import math
from pathlib import Path

from ..blocks.head import head_widths
from ..errors import ArgumentError
from .spec import GraphSpec, NodeSpec

WIDTH, DEPTH, MAX_CHANNELS = 0.50, 0.33, 1024
REG_MAX = 16
MODEL_NAMES = {
    1: "yolov8s",
    2: "yolov8s-p2",
    3: "yolov8s-p2-no-p5",
    4: "p2-no-p5-fast-c2f",
    5: "p2-no-p5-fast-c2f-dysample",
    6: "p2-no-p5-fast-c2f-dysample-ema-head",
}
MODEL_IDS = tuple(MODEL_NAMES)


def width(c):
    return math.ceil(min(c, MAX_CHANNELS) * WIDTH / 8) * 8


def depth(n):
    return max(round(n * DEPTH), 1) if n > 1 else n


class _Builder:
    def __init__(self, fast_neck, dysample):
        self.nodes = []
        self.fast_neck = fast_neck
        self.dysample = dysample

    def add(self, node_id, kind, inputs, **attrs):
        self.nodes.append(NodeSpec(node_id, kind, tuple(inputs), attrs))
        return node_id

    def conv(self, node_id, src, c, k=3, s=2):
        return self.add(node_id, "conv_bn_silu", [src], channels=width(c), k=k, stride=s)

    def c2f(self, node_id, src, c, n, shortcut):
        return self.add(node_id, "c2f", [src], channels=width(c), n=depth(n), shortcut=shortcut)

    def neck_c2f(self, node_id, src, c):
        if self.fast_neck:
            return self.add(node_id, "fast_c2f", [src], channels=width(c), n=depth(3),
                            residual=True, mlp_ratio=2, n_div=4)
        return self.c2f(node_id, src, c, 3, shortcut=False)

    def up(self, node_id, src):
        if self.dysample:
            return self.add(node_id, "dysample", [src], scale=2, groups=4, offset_scale=0.25)
        return self.add(node_id, "upsample_nearest", [src], scale=2)


def build_preset(model_id, nc=10, input_size=640):
    """Graph for ablation step ``model_id`` (1..6)."""
    if model_id not in MODEL_NAMES:
        raise ArgumentError(f"model_id must be one of {list(MODEL_IDS)}, got {model_id!r}")
    if input_size <= 0 or input_size % 32:
        raise ArgumentError(f"input_size must be a positive multiple of 32, got {input_size}")
    if nc < 1:
        raise ArgumentError(f"nc must be >= 1, got {nc}")
    p2 = model_id >= 2
    p5_head = model_id <= 2
    b = _Builder(fast_neck=model_id >= 4, dysample=model_id >= 5)

    # Backbone (shared by every preset).
    b.add("images", "input", [], channels=3)
    b.conv("p1_conv", "images", 64)
    b.conv("p2_conv", "p1_conv", 128)
    b.c2f("p2_c2f", "p2_conv", 128, 3, shortcut=True)
    b.conv("p3_conv", "p2_c2f", 256)
    b.c2f("p3_c2f", "p3_conv", 256, 6, shortcut=True)
    b.conv("p4_conv", "p3_c2f", 512)
    b.c2f("p4_c2f", "p4_conv", 512, 6, shortcut=True)
    b.conv("p5_conv", "p4_c2f", 1024)
    b.c2f("p5_c2f", "p5_conv", 1024, 3, shortcut=True)
    b.add("sppf", "sppf", ["p5_c2f"], channels=width(1024), k=5)

    # Top-down path.
    b.up("td4_up", "sppf")
    b.add("td4_cat", "concat", ["td4_up", "p4_c2f"])
    b.neck_c2f("td4_c2f", "td4_cat", 512)
    b.up("td3_up", "td4_c2f")
    b.add("td3_cat", "concat", ["td3_up", "p3_c2f"])
    b.neck_c2f("td3_c2f", "td3_cat", 256)
    levels = ["td3_c2f"]
    if p2:
        b.up("td2_up", "td3_c2f")
        b.add("td2_cat", "concat", ["td2_up", "p2_c2f"])
        b.neck_c2f("td2_c2f", "td2_cat", 128)
        b.conv("bu3_down", "td2_c2f", 128)
        b.add("bu3_cat", "concat", ["bu3_down", "td3_c2f"])
        b.neck_c2f("bu3_c2f", "bu3_cat", 256)
        levels = ["td2_c2f", "bu3_c2f"]

    # Bottom-up path.
    b.conv("bu4_down", levels[-1], 256)
    b.add("bu4_cat", "concat", ["bu4_down", "td4_c2f"])
    b.neck_c2f("bu4_c2f", "bu4_cat", 512)
    levels.append("bu4_c2f")
    if p5_head:
        b.conv("bu5_down", "bu4_c2f", 512)
        b.add("bu5_cat", "concat", ["bu5_down", "sppf"])
        # The stride-32 PAN cell is a plain C2f in every preset that has one.
        b.c2f("bu5_c2f", "bu5_cat", 1024, 3, shortcut=False)
        levels.append("bu5_c2f")

    level_channels = [_channels_of(b.nodes, lv) for lv in levels]
    box_hidden, cls_hidden = head_widths(level_channels, nc, REG_MAX)
    head_attrs = dict(nc=nc, reg_max=REG_MAX, box_hidden=box_hidden, cls_hidden=cls_hidden)
    if model_id == 6:
        b.add("detect", "ema_head", levels, ema_groups=32, **head_attrs)
    else:
        b.add("detect", "detect_head", levels, **head_attrs)

    meta = {"name": MODEL_NAMES[model_id], "model_id": model_id, "nc": nc, "reg_max": REG_MAX,
            "imgsz": input_size, "width_multiple": WIDTH, "depth_multiple": DEPTH,
            "backbone_end": "sppf"}
    return GraphSpec(b.nodes, ["detect"], meta).validate()


def _channels_of(nodes, node_id):
    for n in nodes:
        if n.id == node_id:
            return n.attrs["channels"]
    raise KeyError(node_id)


def snapshot_path(model_id):
    return Path(__file__).with_name("presets") / f"model{model_id}.json"


def write_snapshots(directory=None):
    for model_id in MODEL_IDS:
        path = snapshot_path(model_id) if directory is None else Path(directory) / f"model{model_id}.json"
        path.write_text(build_preset(model_id).to_json())

