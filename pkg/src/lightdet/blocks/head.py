"""Decoupled anchor-free detection head, its EMA-augmented variant, and box decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels as K
from ..errors import ArgumentError, ShapeError
from .base import Block, Conv2d, ConvBNSiLU, scope
from .ema import EMA


def head_widths(channels, nc, reg_max=16):
    """Hidden widths ``(box, cls)`` of the head branches.

    Both are derived from the *first* (highest-resolution) level's channel
    count and shared by every level, as in the YOLOv8 reference head.
    """
    c0 = channels[0]
    return max(16, c0 // 4, 4 * reg_max), max(c0, min(nc, 100))


@dataclass(frozen=True)
class DetectHead(Block):
    """Per level: box branch (2x ConvBNSiLU 3x3 + 1x1 to ``4*reg_max``) and class
    branch (2x ConvBNSiLU 3x3 + 1x1 to ``nc``), concatenated raw.

    With ``ema_groups`` set, an :class:`EMA` block rescales each incoming level
    before both branches.
    """

    channels: tuple
    nc: int = 10
    reg_max: int = 16
    box_hidden: int | None = None
    cls_hidden: int | None = None
    ema_groups: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        box, cls = head_widths(self.channels, self.nc, self.reg_max)
        if self.box_hidden is None:
            object.__setattr__(self, "box_hidden", box)
        if self.cls_hidden is None:
            object.__setattr__(self, "cls_hidden", cls)

    @property
    def out_channels(self):
        return 4 * self.reg_max + self.nc

    def children(self):
        ch = {}
        bh, kh = self.box_hidden, self.cls_hidden
        for i, c in enumerate(self.channels):
            if self.ema_groups:
                ch[f"ema.{i}"] = EMA(c, self.ema_groups)
            ch[f"box.{i}.0"] = ConvBNSiLU(c, bh, 3)
            ch[f"box.{i}.1"] = ConvBNSiLU(bh, bh, 3)
            ch[f"box.{i}.2"] = Conv2d(bh, 4 * self.reg_max, 1)
            ch[f"cls.{i}.0"] = ConvBNSiLU(c, kh, 3)
            ch[f"cls.{i}.1"] = ConvBNSiLU(kh, kh, 3)
            ch[f"cls.{i}.2"] = Conv2d(kh, self.nc, 1)
        return ch

    def _check_levels(self, shapes):
        if len(shapes) != len(self.channels):
            raise ArgumentError(f"head configured for {len(self.channels)} levels, got {len(shapes)}")
        for i, (shape, c) in enumerate(zip(shapes, self.channels)):
            if shape[1] != c:
                raise ShapeError(f"head level {i} expects {c} channels, got shape {tuple(shape)}")

    def out_shape(self, shapes):
        self._check_levels(shapes)
        return [(s[0], self.out_channels, s[2], s[3]) for s in shapes]

    def macs(self, shapes):
        self._check_levels(shapes)
        ch = self.children()
        total = 0
        for i, (n, c, h, w) in enumerate(shapes):
            if self.ema_groups:
                total += ch[f"ema.{i}"].macs((n, c, h, w))
            for branch, hidden in (("box", self.box_hidden), ("cls", self.cls_hidden)):
                total += ch[f"{branch}.{i}.0"].macs((n, c, h, w))
                total += ch[f"{branch}.{i}.1"].macs((n, hidden, h, w))
                total += ch[f"{branch}.{i}.2"].macs((n, hidden, h, w))
        return total

    def forward(self, params, features):
        self._check_levels([f.shape for f in features])
        ch = self.children()
        outs = []
        for i, x in enumerate(features):
            if self.ema_groups:
                x = ch[f"ema.{i}"].forward(scope(params, f"ema.{i}"), x)
            branches = []
            for branch in ("box", "cls"):
                y = x
                for j in range(3):
                    name = f"{branch}.{i}.{j}"
                    y = ch[name].forward(scope(params, name), y)
                branches.append(y.astype(x.dtype, copy=False))
            outs.append(K.concat(branches))
        return outs


def dfl_decode(raw_box, reg_max=16):
    """Distribution-focal decoding: softmax over each side's ``reg_max`` bins, then the
    expected bin index. ``(n, 4*reg_max, h, w) -> (n, 4, h, w)``."""
    n, c, h, w = raw_box.shape
    if c != 4 * reg_max:
        raise ShapeError(f"dfl_decode expects {4 * reg_max} channels, got shape {raw_box.shape}")
    prob = K.softmax(raw_box.reshape(n, 4, reg_max, h, w), axis=2)
    bins = np.arange(reg_max, dtype=prob.dtype).reshape(1, 1, reg_max, 1, 1)
    return (prob * bins).sum(axis=2)


def decode_detections(outputs, strides, nc, reg_max=16, conf=0.25, image_ids=None):
    """Turn raw head maps into :class:`~lightdet.metrics.DetBox` records.

    Each cell predicts one box around its centre ``((x + .5) * stride, (y + .5) * stride)``
    with side distances ``dfl_decode * stride``, labelled with its best class
    (sigmoid score); cells scoring below ``conf`` are dropped.
    """
    from ..metrics import DetBox

    dets = []
    for out, stride in zip(outputs, strides):
        n, _, h, w = out.shape
        dist = dfl_decode(out[:, :4 * reg_max], reg_max).astype(np.float64) * stride
        prob = K.sigmoid(out[:, 4 * reg_max:4 * reg_max + nc].astype(np.float64))
        cls = prob.argmax(axis=1)
        score = prob.max(axis=1)
        cy, cx = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride, indexing="ij")
        for b in range(n):
            image_id = str(b) if image_ids is None else str(image_ids[b])
            keep = np.argwhere(score[b] >= conf)
            for y, x in keep:
                l, t, r, bt = dist[b, :, y, x]
                box = (cx[y, x] - l, cy[y, x] - t, cx[y, x] + r, cy[y, x] + bt)
                if box[2] > box[0] and box[3] > box[1]:
                    dets.append(DetBox(image_id, int(cls[b, y, x]), box, float(score[b, y, x])))
    return dets
