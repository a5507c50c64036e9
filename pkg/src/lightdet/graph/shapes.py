"""Per-node shape inference and node -> block resolution."""
from __future__ import annotations

from dataclasses import dataclass

from ..blocks import C2f, ConvBNSiLU, DetectHead, Dysample, EMA, FastC2f, SPPF
from ..errors import ArgumentError, GraphError, LightdetError, ShapeError
from .spec import HEAD_KINDS


def block_for(node, in_shapes):
    """Block realizing ``node`` given its input shapes; ``None`` for weightless kinds."""
    a = node.attrs
    kind = node.kind
    if kind in ("input", "concat", "upsample_nearest"):
        return None
    if kind in HEAD_KINDS:
        return DetectHead(tuple(s[1] for s in in_shapes), a["nc"], a["reg_max"], a["box_hidden"],
                          a["cls_hidden"], a.get("ema_groups") if kind == "ema_head" else None)
    c = in_shapes[0][1]
    if kind == "conv_bn_silu":
        return ConvBNSiLU(c, a["channels"], a["k"], a["stride"])
    if kind == "c2f":
        return C2f(c, a["channels"], a["n"], a["shortcut"])
    if kind == "fast_c2f":
        return FastC2f(c, a["channels"], a["n"], False, a["mlp_ratio"], a["residual"], a["n_div"])
    if kind == "sppf":
        return SPPF(c, a["channels"], a["k"])
    if kind == "dysample":
        return Dysample(c, a["scale"], a["groups"], a["offset_scale"])
    if kind == "ema":
        return EMA(c, a["groups"])
    raise GraphError(f"unknown kind {kind!r}", node.id)


@dataclass(frozen=True)
class ShapeReport:
    """Shapes of every node for one input shape.

    ``shapes`` maps node id to ``(n, c, h, w)``; a head node maps to the list
    of its per-level output shapes. ``levels`` lists ``(source_id, shape,
    stride)`` for every head level in output order.
    """

    input_shape: tuple
    shapes: dict
    strides: dict
    levels: tuple

    @property
    def output_strides(self):
        return [stride for _, _, stride in self.levels]

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "nodes": {k: ([list(s) for s in v] if isinstance(v, list) else list(v))
                      for k, v in self.shapes.items()},
            "strides": dict(self.strides),
            "levels": [{"source": src, "shape": list(shape), "stride": stride}
                       for src, shape, stride in self.levels],
        }


def _stride(input_hw, hw, node_id):
    sh, sw = input_hw[0] / hw[0], input_hw[1] / hw[1]
    if sh != sw or sh < 1 or sh != int(sh):
        raise GraphError(f"non-integral or anisotropic stride {sh}x{sw}", node_id)
    return int(sh)


def _concat_shape(node, shapes):
    first = shapes[0]
    for src, s in zip(node.inputs[1:], shapes[1:]):
        if s[0] != first[0] or s[2:] != first[2:]:
            raise ShapeError(f"node '{node.id}': concat input '{src}' shape {s} does not match "
                             f"'{node.inputs[0]}' shape {first}")
    return (first[0], sum(s[1] for s in shapes), first[2], first[3])


def node_shape(node, in_shapes):
    """Output shape(s) of ``node``; raises with the node id on any inconsistency."""
    try:
        if node.kind == "concat":
            return _concat_shape(node, in_shapes)
        if node.kind == "upsample_nearest":
            n, c, h, w = in_shapes[0]
            s = node.attrs["scale"]
            if s < 1:
                raise ArgumentError(f"upsample scale must be >= 1, got {s}")
            return (n, c, h * s, w * s)
        block = block_for(node, in_shapes)
        if node.kind in HEAD_KINDS:
            return block.out_shape(in_shapes)
        return tuple(block.out_shape(in_shapes[0]))
    except GraphError:
        raise
    except LightdetError as exc:
        msg = str(exc)
        if not msg.startswith(f"node '{node.id}'"):
            raise type(exc)(f"node '{node.id}': {msg}") from None
        raise


def shape_infer(graph, input_shape):
    """Shapes of every node of ``graph`` for an ``(n, c, h, w)`` input."""
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 4 or min(input_shape) < 1:
        raise ShapeError(f"input shape must be 4 positive ints (n, c, h, w), got {input_shape}")
    shapes, strides, levels = {}, {}, []
    for node in graph.nodes:
        if node.kind == "input":
            if input_shape[1] != node.attrs["channels"]:
                raise ShapeError(f"node '{node.id}': expects {node.attrs['channels']} channels, "
                                 f"got input shape {input_shape}")
            shapes[node.id] = input_shape
            strides[node.id] = 1
            continue
        in_shapes = [shapes[src] for src in node.inputs]
        if any(isinstance(s, list) for s in in_shapes):
            raise GraphError("a head output cannot feed another node", node.id)
        out = node_shape(node, in_shapes)
        shapes[node.id] = out
        if node.kind in HEAD_KINDS:
            for src, s in zip(node.inputs, out):
                levels.append((src, s, _stride(input_shape[2:], s[2:], node.id)))
        else:
            strides[node.id] = _stride(input_shape[2:], out[2:], node.id)
    return ShapeReport(input_shape, shapes, strides, tuple(levels))
