"""Partial convolution and the blocks built from it.

``PConv`` convolves the leading ``cp`` channels and copies the remaining
``c - cp`` channels through untouched, so its cost is ``(cp / c)**2`` of a
full convolution of the same width.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .. import kernels as K
from ..errors import ArgumentError, ShapeError
from .base import Block, Conv2d, ConvBNSiLU, conv_macs, scope
from .yolo import C2f


@dataclass(frozen=True)
class PConv(Block):
    c: int
    cp: int | None = None
    k: int = 3

    def __post_init__(self):
        if self.cp is None:
            if self.c % 4:
                raise ArgumentError(f"default cp = c/4 needs c divisible by 4, got c={self.c}")
            object.__setattr__(self, "cp", self.c // 4)
        if not 1 <= self.cp <= self.c:
            raise ArgumentError(f"PConv needs 1 <= cp <= c, got cp={self.cp}, c={self.c}")

    def own_params(self):
        return {"conv.weight": (self.cp, self.cp, self.k, self.k)}

    def out_shape(self, shape):
        if shape[1] != self.c:
            raise ShapeError(f"PConv expects {self.c} channels, got shape {tuple(shape)}")
        return tuple(shape)

    def macs(self, shape):
        n, _, h, w = self.out_shape(shape)
        return n * conv_macs(self.cp, self.cp, self.k, h, w)

    def forward(self, params, x):
        self.out_shape(x.shape)
        head = K.conv2d(x[:, :self.cp], params["conv.weight"], None, 1, self.k // 2)
        return K.concat([head.astype(x.dtype, copy=False), x[:, self.cp:]])

    def backward(self, params, x, dy):
        dhead, dw, _ = K.conv2d_backward(dy[:, :self.cp], x[:, :self.cp], params["conv.weight"],
                                         1, self.k // 2)
        return K.concat([dhead, dy[:, self.cp:]]), {"conv.weight": dw}


@dataclass(frozen=True)
class FastBlock(Block):
    """PConv followed by pointwise convolutions, with a residual add.

    ``mlp_ratio=r > 0``: PConv -> 1x1 ConvBNSiLU (c -> r*c) -> 1x1 conv (r*c -> c, no bias).
    ``mlp_ratio=0``: PConv -> a single 1x1 ConvBNSiLU (c -> c).
    """

    c: int
    mlp_ratio: int = 2
    residual: bool = True
    n_div: int = 4

    def children(self):
        ch = {"pconv": PConv(self.c, self.c // self.n_div)}
        if self.mlp_ratio:
            ch["mlp.0"] = ConvBNSiLU(self.c, self.c * self.mlp_ratio, 1)
            ch["mlp.1"] = Conv2d(self.c * self.mlp_ratio, self.c, 1, bias=False)
        else:
            ch["pw"] = ConvBNSiLU(self.c, self.c, 1)
        return ch

    def out_shape(self, shape):
        return self.children()["pconv"].out_shape(shape)

    def macs(self, shape):
        n, _, h, w = shape
        total = 0
        for name, child in self.children().items():
            width = self.c * self.mlp_ratio if name == "mlp.1" else self.c
            total += child.macs((n, width, h, w))
        return total

    def forward(self, params, x):
        return self.forward_with_cache(params, x)[0]

    def forward_with_cache(self, params, x):
        ch = self.children()
        p = ch["pconv"].forward(scope(params, "pconv"), x)
        if self.mlp_ratio:
            hid, hid_cache = ch["mlp.0"].forward_with_cache(scope(params, "mlp.0"), p)
            y = ch["mlp.1"].forward(scope(params, "mlp.1"), hid).astype(x.dtype, copy=False)
            cache = (x, hid_cache, hid)
        else:
            y, pw_cache = ch["pw"].forward_with_cache(scope(params, "pw"), p)
            cache = (x, pw_cache, None)
        return (x + y if self.residual else y), cache

    def backward(self, params, cache, dy):
        x, first_cache, hid = cache
        ch = self.children()
        grads = {}
        if self.mlp_ratio:
            dhid, g1 = ch["mlp.1"].backward(scope(params, "mlp.1"), hid, dy)
            dp, g0 = ch["mlp.0"].backward(scope(params, "mlp.0"), first_cache, dhid)
            grads.update({f"mlp.1.{k}": v for k, v in g1.items()})
            grads.update({f"mlp.0.{k}": v for k, v in g0.items()})
        else:
            dp, g0 = ch["pw"].backward(scope(params, "pw"), first_cache, dy)
            grads.update({f"pw.{k}": v for k, v in g0.items()})
        dx, gp = ch["pconv"].backward(scope(params, "pconv"), x, dp)
        grads.update({f"pconv.{k}": v for k, v in gp.items()})
        if self.residual:
            dx = dx + dy
        return dx, grads


@dataclass(frozen=True)
class FastC2f(C2f):
    """C2f topology with every Bottleneck replaced by a :class:`FastBlock`."""

    mlp_ratio: int = 2
    residual: bool = True
    n_div: int = 4

    def inner(self):
        return FastBlock(self.hidden, self.mlp_ratio, self.residual, self.n_div)


def pconv_mac_ratio(c, cp, h=1, w=1, k=3):
    """MACs of a PConv over MACs of the full ``c -> c`` convolution, as an exact fraction."""
    full = conv_macs(c, c, k, h, w)
    return Fraction(PConv(c, cp, k).macs((1, c, h, w)), full)

