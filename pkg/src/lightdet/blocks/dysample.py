"""Content-aware upsampling by learned point sampling (static-scope, linear-projection variant)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels as K
from ..errors import ArgumentError, ShapeError
from .base import Block, Conv2d, scope


@dataclass(frozen=True)
class Dysample(Block):
    """Upsample by ``scale`` through bilinear sampling at predicted positions.

    A biased 1x1 conv predicts ``2 * groups * scale**2`` offset maps at input
    resolution. Offsets are scaled by ``offset_scale`` (in input-pixel units),
    added to the sub-pixel positions of a plain bilinear resize, pixel-shuffled
    to output resolution, and each channel group is sampled at its own
    positions. With a zero offset head the block reduces to bilinear resizing.
    """

    c: int
    scale: int = 2
    groups: int = 4
    offset_scale: float = 0.25

    def __post_init__(self):
        if self.c % self.groups:
            raise ArgumentError(f"Dysample: {self.c} channels not divisible by {self.groups} groups")
        if self.scale < 1:
            raise ArgumentError(f"Dysample scale must be >= 1, got {self.scale}")

    @property
    def offset_channels(self):
        return 2 * self.groups * self.scale ** 2

    def children(self):
        return {"offset": Conv2d(self.c, self.offset_channels, 1, bias=True)}

    def out_shape(self, shape):
        if shape[1] != self.c:
            raise ShapeError(f"Dysample expects {self.c} channels, got shape {tuple(shape)}")
        n, c, h, w = shape
        return (n, c, h * self.scale, w * self.scale)

    def macs(self, shape):
        return self.children()["offset"].macs(shape)

    def init_pos(self, dtype=np.float64):
        """Sub-pixel start offsets, layout ``(xy, group, i, j)`` flattened to channels."""
        s = self.scale
        h = (np.arange(s) - (s - 1) / 2) / s
        ox = np.broadcast_to(h[None, :], (s, s))   # x varies with the column index j
        oy = np.broadcast_to(h[:, None], (s, s))   # y varies with the row index i
        pos = np.stack([np.tile(ox.ravel(), self.groups), np.tile(oy.ravel(), self.groups)])
        return pos.reshape(-1).astype(dtype)

    def sampling_grid(self, offset, h, w):
        """Offsets ``(n, 2*g*s*s, h, w)`` in pixel units -> normalized grid ``(n*g, s*h, s*w, 2)``."""
        n = offset.shape[0]
        g, s = self.groups, self.scale
        off = offset.reshape(n, 2, g * s * s, h, w)
        base_x = (np.arange(w) + 0.5).reshape(1, 1, w)
        base_y = (np.arange(h) + 0.5).reshape(1, h, 1)
        coords = np.empty_like(off)
        coords[:, 0] = 2.0 * (base_x + off[:, 0]) / w - 1.0
        coords[:, 1] = 2.0 * (base_y + off[:, 1]) / h - 1.0
        shuffled = K.pixel_shuffle(coords.reshape(n, -1, h, w), s)   # (n, 2*g, s*h, s*w)
        grid = shuffled.reshape(n, 2, g, s * h, s * w).transpose(0, 2, 3, 4, 1)
        return np.ascontiguousarray(grid.reshape(n * g, s * h, s * w, 2))

    def _grid_backward(self, dgrid, n, h, w):
        g, s = self.groups, self.scale
        d = dgrid.reshape(n, g, s * h, s * w, 2).transpose(0, 4, 1, 2, 3).reshape(n, 2 * g, s * h, s * w)
        doff = K.pixel_unshuffle(d, s).reshape(n, 2, g * s * s, h, w).copy()
        doff[:, 0] *= 2.0 / w
        doff[:, 1] *= 2.0 / h
        return doff.reshape(n, -1, h, w)

    def forward(self, params, x):
        return self.forward_with_cache(params, x)[0]

    def forward_with_cache(self, params, x):
        self.out_shape(x.shape)
        n, c, h, w = x.shape
        raw = self.children()["offset"].forward(scope(params, "offset"), x)
        offset = raw * self.offset_scale + self.init_pos(raw.dtype).reshape(1, -1, 1, 1)
        grid = self.sampling_grid(offset, h, w).astype(x.dtype, copy=False)
        xs = x.reshape(n * self.groups, c // self.groups, h, w)
        out = K.grid_sample_bilinear(xs, grid).reshape(n, c, h * self.scale, w * self.scale)
        return out, (x, xs, grid)

    def backward(self, params, cache, dy):
        x, xs, grid = cache
        n, c, h, w = x.shape
        s = self.scale
        dxs, dgrid = K.grid_sample_bilinear_backward(
            dy.reshape(n * self.groups, c // self.groups, h * s, w * s), xs, grid)
        draw = self._grid_backward(dgrid, n, h, w) * self.offset_scale
        dx_off, g = self.children()["offset"].backward(scope(params, "offset"), x, draw)
        return dxs.reshape(x.shape) + dx_off, {f"offset.{k}": v for k, v in g.items()}
