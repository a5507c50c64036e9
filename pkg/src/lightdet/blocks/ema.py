"""Efficient multi-scale attention over channel groups."""
from __future__ import annotations

from dataclasses import dataclass

from .. import kernels as K
from ..errors import ArgumentError, ShapeError
from .base import Block, Conv2d, scope


@dataclass(frozen=True)
class EMA(Block):
    """Grouped attention: axis-pooled sigmoid gates plus cross-branch softmax weighting.

    Channels are split into ``groups`` groups of ``c // groups`` and each group
    is processed independently:

    * a 1x1 branch pools along each spatial axis, mixes the two pooled strips
      with a shared 1x1 conv, gates the features with their sigmoids and
      normalizes per channel (``x1``);
    * a 3x3 branch convolves the features (``x2``);
    * the channel softmax of each branch's global pool weights the other
      branch's features; the sum of both maps, through a sigmoid, rescales the
      input at every position.
    """

    c: int
    groups: int = 32
    eps: float = 1e-5

    def __post_init__(self):
        if self.groups < 1 or self.c % self.groups:
            raise ArgumentError(f"EMA: {self.c} channels not divisible by {self.groups} groups")

    @property
    def cg(self):
        return self.c // self.groups

    def children(self):
        return {"conv1x1": Conv2d(self.cg, self.cg, 1, bias=True),
                "conv3x3": Conv2d(self.cg, self.cg, 3, bias=True)}

    def own_params(self):
        return {"gn.weight": (self.cg,), "gn.bias": (self.cg,)}

    def out_shape(self, shape):
        if shape[1] != self.c:
            raise ShapeError(f"EMA expects {self.c} channels, got shape {tuple(shape)}")
        return tuple(shape)

    def macs(self, shape):
        n, _, h, w = self.out_shape(shape)
        b = n * self.groups
        ch = self.children()
        return ch["conv1x1"].macs((b, self.cg, h + w, 1)) + ch["conv3x3"].macs((b, self.cg, h, w))

    def forward(self, params, x):
        return self.forward_with_cache(params, x)[0]

    def forward_with_cache(self, params, x):
        """Returns ``(out, cache)``; ``cache`` holds ``scores``, ``s1`` and ``s2`` among others."""
        n, c, h, w = self.out_shape(x.shape)
        b, cg = n * self.groups, self.cg
        ch = self.children()
        gx = x.reshape(b, cg, h, w)

        pooled = K.concat([K.avg_pool_w(gx), K.avg_pool_h(gx).transpose(0, 1, 3, 2)], axis=2)
        hw = ch["conv1x1"].forward(scope(params, "conv1x1"), pooled)
        ah, aw = K.split(hw, [h, w], axis=2)
        gate_h = K.sigmoid(ah)                          # (b, cg, h, 1)
        gate_w = K.sigmoid(aw).transpose(0, 1, 3, 2)    # (b, cg, 1, w)
        gated = gx * gate_h * gate_w
        x1, gn_stats = K.group_norm_with_stats(gated, cg, params["gn.weight"], params["gn.bias"], self.eps)
        x2 = ch["conv3x3"].forward(scope(params, "conv3x3"), gx)

        s1 = K.softmax(K.global_avg_pool(x1).reshape(b, 1, cg), axis=2)
        s2 = K.softmax(K.global_avg_pool(x2).reshape(b, 1, cg), axis=2)
        x1f, x2f = x1.reshape(b, cg, h * w), x2.reshape(b, cg, h * w)
        logits = K.matmul_batched(s1, x2f) + K.matmul_batched(s2, x1f)
        scores = K.sigmoid(logits.reshape(b, 1, h, w))
        out = (gx * scores).reshape(n, c, h, w)
        cache = dict(gx=gx, pooled=pooled, gate_h=gate_h, gate_w=gate_w, gn_stats=gn_stats,
                     x1f=x1f, x2f=x2f, s1=s1, s2=s2, scores=scores)
        return out, cache

    def backward(self, params, cache, dy):
        gx, scores = cache["gx"], cache["scores"]
        b, cg, h, w = gx.shape
        ch = self.children()
        dout = dy.reshape(gx.shape)

        dgx = dout * scores
        dlogits = K.sigmoid_backward((dout * gx).sum(axis=1, keepdims=True), scores).reshape(b, 1, h * w)

        ds1, dx2f = K.matmul_batched_backward(dlogits, cache["s1"], cache["x2f"])
        ds2, dx1f = K.matmul_batched_backward(dlogits, cache["s2"], cache["x1f"])
        dp1 = K.softmax_backward(ds1, cache["s1"], axis=2).reshape(b, cg, 1, 1)
        dp2 = K.softmax_backward(ds2, cache["s2"], axis=2).reshape(b, cg, 1, 1)
        dx1 = dx1f.reshape(gx.shape) + K.avg_pool_backward(dp1, gx.shape, (2, 3))
        dx2 = dx2f.reshape(gx.shape) + K.avg_pool_backward(dp2, gx.shape, (2, 3))

        dgx_3, g3 = ch["conv3x3"].backward(scope(params, "conv3x3"), gx, dx2)
        dgated, dgamma, dbeta = K.group_norm_backward(dx1, cache["gn_stats"], cg, params["gn.weight"])

        gate_h, gate_w = cache["gate_h"], cache["gate_w"]
        dgx = dgx + dgx_3 + dgated * gate_h * gate_w
        dgate_h = (dgated * gx * gate_w).sum(axis=3, keepdims=True)
        dgate_w = (dgated * gx * gate_h).sum(axis=2, keepdims=True)
        dhw = K.concat([K.sigmoid_backward(dgate_h, gate_h),
                        K.sigmoid_backward(dgate_w, gate_w).transpose(0, 1, 3, 2)], axis=2)
        dpooled, g1 = ch["conv1x1"].backward(scope(params, "conv1x1"), cache["pooled"], dhw)
        dph, dpw = K.split(dpooled, [h, w], axis=2)
        dgx = (dgx + K.avg_pool_backward(dph, gx.shape, (3,))
               + K.avg_pool_backward(dpw.transpose(0, 1, 3, 2), gx.shape, (2,)))

        grads = {"gn.weight": dgamma, "gn.bias": dbeta}
        grads.update({f"conv1x1.{k}": v for k, v in g1.items()})
        grads.update({f"conv3x3.{k}": v for k, v in g3.items()})
        n = b // self.groups
        return dgx.reshape(n, self.c, h, w), grads
