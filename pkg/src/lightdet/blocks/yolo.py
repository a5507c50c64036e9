"""Baseline YOLOv8 cells: Bottleneck, C2f and SPPF."""
from __future__ import annotations

from dataclasses import dataclass

from .. import kernels as K
from ..errors import ShapeError
from .base import Block, ConvBNSiLU, scope


def _check_channels(block, shape, expected):
    if shape[1] != expected:
        raise ShapeError(f"{type(block).__name__} expects {expected} input channels, got shape {tuple(shape)}")


@dataclass(frozen=True)
class Bottleneck(Block):
    c: int
    shortcut: bool = True

    def children(self):
        return {"cv1": ConvBNSiLU(self.c, self.c, 3), "cv2": ConvBNSiLU(self.c, self.c, 3)}

    def out_shape(self, shape):
        _check_channels(self, shape, self.c)
        return tuple(shape)

    def macs(self, shape):
        return sum(child.macs(shape) for child in self.children().values())

    def forward(self, params, x):
        ch = self.children()
        y = ch["cv2"].forward(scope(params, "cv2"), ch["cv1"].forward(scope(params, "cv1"), x))
        return x + y if self.shortcut else y


@dataclass(frozen=True)
class C2f(Block):
    """1x1 expand to two halves, chain ``n`` inner blocks on the second half,
    concatenate every intermediate, fuse with a 1x1 conv."""

    c_in: int
    c_out: int
    n: int = 1
    shortcut: bool = False

    @property
    def hidden(self):
        return self.c_out // 2

    def inner(self):
        return Bottleneck(self.hidden, self.shortcut)

    def children(self):
        ch = {"cv1": ConvBNSiLU(self.c_in, 2 * self.hidden, 1),
              "cv2": ConvBNSiLU((2 + self.n) * self.hidden, self.c_out, 1)}
        for i in range(self.n):
            ch[f"m.{i}"] = self.inner()
        return ch

    def out_shape(self, shape):
        _check_channels(self, shape, self.c_in)
        return (shape[0], self.c_out, shape[2], shape[3])

    def macs(self, shape):
        n, _, h, w = shape
        ch = self.children()
        hidden_shape = (n, self.hidden, h, w)
        total = ch["cv1"].macs(shape) + ch["cv2"].macs((n, (2 + self.n) * self.hidden, h, w))
        return total + sum(ch[f"m.{i}"].macs(hidden_shape) for i in range(self.n))

    def forward(self, params, x):
        self.out_shape(x.shape)
        ch = self.children()
        ys = K.split(ch["cv1"].forward(scope(params, "cv1"), x), [self.hidden, self.hidden])
        for i in range(self.n):
            ys.append(ch[f"m.{i}"].forward(scope(params, f"m.{i}"), ys[-1]))
        return ch["cv2"].forward(scope(params, "cv2"), K.concat(ys))


@dataclass(frozen=True)
class SPPF(Block):
    """1x1 reduce, three chained k x k stride-1 max pools, concat of all four, 1x1 fuse."""

    c_in: int
    c_out: int
    k: int = 5

    @property
    def hidden(self):
        return self.c_in // 2

    def children(self):
        return {"cv1": ConvBNSiLU(self.c_in, self.hidden, 1),
                "cv2": ConvBNSiLU(4 * self.hidden, self.c_out, 1)}

    def out_shape(self, shape):
        _check_channels(self, shape, self.c_in)
        return (shape[0], self.c_out, shape[2], shape[3])

    def macs(self, shape):
        n, _, h, w = shape
        ch = self.children()
        return ch["cv1"].macs(shape) + ch["cv2"].macs((n, 4 * self.hidden, h, w))

    def forward(self, params, x):
        self.out_shape(x.shape)
        ch = self.children()
        y = [ch["cv1"].forward(scope(params, "cv1"), x)]
        for _ in range(3):
            y.append(K.max_pool(y[-1], self.k, 1, self.k // 2))
        return ch["cv2"].forward(scope(params, "cv2"), K.concat(y))
