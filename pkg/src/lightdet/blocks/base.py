"""Stateless block descriptions.

A block is a frozen dataclass holding hyperparameters only. Weights live in a
flat mapping keyed like a torch ``state_dict`` (``"cv1.conv.weight"``); a block
reads the keys it owns and hands ``scope(params, name)`` views to its
children.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .. import kernels as K


def scope(params, prefix):
    """Sub-mapping of ``params`` under ``prefix.`` with the prefix stripped."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def _prefixed(prefix, shapes):
    return {f"{prefix}.{k}": v for k, v in shapes.items()}


class Block:
    """Common protocol: parameter layout, shape inference, cost, forward."""

    def children(self) -> dict:
        return {}

    def own_params(self) -> dict:
        return {}

    def own_buffers(self) -> dict:
        return {}

    def param_shapes(self) -> dict:
        """Learnable tensors, keyed by relative path."""
        shapes = dict(self.own_params())
        for name, child in self.children().items():
            shapes.update(_prefixed(name, child.param_shapes()))
        return shapes

    def buffer_shapes(self) -> dict:
        """Non-learnable state (batch-norm running statistics)."""
        shapes = dict(self.own_buffers())
        for name, child in self.children().items():
            shapes.update(_prefixed(name, child.buffer_shapes()))
        return shapes

    def n_params(self) -> int:
        return sum(prod(s) for s in self.param_shapes().values())

    def out_shape(self, shape):
        raise NotImplementedError

    def macs(self, shape) -> int:
        raise NotImplementedError

    def forward(self, params, x):
        raise NotImplementedError


def conv_macs(c_in, c_out, k, h_out, w_out, groups=1) -> int:
    """Multiply-accumulates of one convolution: ``c_out * h_out * w_out * k * k * c_in / groups``."""
    return c_out * h_out * w_out * k * k * (c_in // groups)


@dataclass(frozen=True)
class Conv2d(Block):
    """Plain convolution, optional bias, no normalization or activation."""

    c_in: int
    c_out: int
    k: int = 1
    stride: int = 1
    padding: int | None = None
    bias: bool = True

    @property
    def pad(self):
        return self.k // 2 if self.padding is None else self.padding

    def own_params(self):
        shapes = {"weight": (self.c_out, self.c_in, self.k, self.k)}
        if self.bias:
            shapes["bias"] = (self.c_out,)
        return shapes

    def out_shape(self, shape):
        n, _, h, w = shape
        return (n, self.c_out, K.conv_out_size(h, self.k, self.stride, self.pad),
                K.conv_out_size(w, self.k, self.stride, self.pad))

    def macs(self, shape):
        n, _, ho, wo = self.out_shape(shape)
        return n * conv_macs(self.c_in, self.c_out, self.k, ho, wo)

    def forward(self, params, x):
        return K.conv2d(x, params["weight"], params.get("bias") if self.bias else None,
                        self.stride, self.pad)

    def backward(self, params, x, dy):
        dx, dw, db = K.conv2d_backward(dy, x, params["weight"], self.stride, self.pad)
        grads = {"weight": dw}
        if self.bias:
            grads["bias"] = db
        return dx, grads


@dataclass(frozen=True)
class ConvBNSiLU(Block):
    """Convolution (no bias) -> inference batch norm -> SiLU; the standard YOLOv8 cell."""

    c_in: int
    c_out: int
    k: int = 1
    stride: int = 1
    padding: int | None = None
    eps: float = 1e-3

    @property
    def pad(self):
        return self.k // 2 if self.padding is None else self.padding

    def own_params(self):
        return {"conv.weight": (self.c_out, self.c_in, self.k, self.k),
                "bn.weight": (self.c_out,), "bn.bias": (self.c_out,)}

    def own_buffers(self):
        return {"bn.running_mean": (self.c_out,), "bn.running_var": (self.c_out,)}

    def out_shape(self, shape):
        n, _, h, w = shape
        return (n, self.c_out, K.conv_out_size(h, self.k, self.stride, self.pad),
                K.conv_out_size(w, self.k, self.stride, self.pad))

    def macs(self, shape):
        n, _, ho, wo = self.out_shape(shape)
        return n * conv_macs(self.c_in, self.c_out, self.k, ho, wo)

    def forward(self, params, x):
        return self.forward_with_cache(params, x)[0]

    def forward_with_cache(self, params, x):
        z = K.conv2d(x, params["conv.weight"], None, self.stride, self.pad)
        b = K.batchnorm_infer(z, params["bn.weight"], params["bn.bias"],
                              params["bn.running_mean"], params["bn.running_var"], self.eps)
        return K.silu(b), (x, z, b)

    def backward(self, params, cache, dy):
        x, z, b = cache
        db = K.silu_backward(dy, b)
        dz, dgamma, dbeta = K.batchnorm_infer_backward(
            db, z, params["bn.weight"], params["bn.running_mean"], params["bn.running_var"], self.eps)
        dx, dw, _ = K.conv2d_backward(dz, x, params["conv.weight"], self.stride, self.pad)
        return dx, {"conv.weight": dw, "bn.weight": dgamma, "bn.bias": dbeta}


def init_params(block, rng, dtype=np.float32, scale=0.1):
    """Seeded init: uniform(-scale, scale) for conv weights/biases, identity normalization."""
    out = {}
    for name, shape in block.param_shapes().items():
        leaf = name.rsplit(".", 1)[-1]
        parent = name.rsplit(".", 2)[-2] if name.count(".") else ""
        if parent in ("bn", "gn"):
            out[name] = (np.ones if leaf == "weight" else np.zeros)(shape, dtype=dtype)
        else:
            out[name] = rng.uniform(-scale, scale, size=shape).astype(dtype)
    for name, shape in block.buffer_shapes().items():
        out[name] = (np.ones if name.endswith("running_var") else np.zeros)(shape, dtype=dtype)
    return out
