"""Seeded weight materialization and whole-graph forward execution."""
from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .. import kernels as K
from .. import tensor
from ..blocks import init_params
from ..errors import FormatError, MissingWeightError, ShapeError
from .shapes import block_for, shape_infer
from .spec import HEAD_KINDS

MANIFEST = "manifest.json"


class WeightStore:
    """Flat mapping ``"<node_id>.<block path>" -> ndarray``.

    Serialized as a directory with one FDMT file per tensor and a
    ``manifest.json`` mapping each path to its file and sha256.
    """

    def __init__(self, tensors=None):
        self.tensors = dict(tensors or {})

    def __len__(self):
        return len(self.tensors)

    def __contains__(self, path):
        return path in self.tensors

    def __getitem__(self, path):
        try:
            return self.tensors[path]
        except KeyError:
            raise MissingWeightError(path) from None

    def for_node(self, node_id, block):
        """Weights of one node, scoped to the block; every required path must exist."""
        out = {}
        for rel in (*block.param_shapes(), *block.buffer_shapes()):
            out[rel] = self[f"{node_id}.{rel}"]
        return out

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = {}
        for i, (path, arr) in enumerate(sorted(self.tensors.items())):
            fname = f"t{i:04d}.fdmt"
            entries[path] = {"file": fname, "shape": list(arr.shape),
                             "sha256": tensor.save(directory / fname, arr)}
        (directory / MANIFEST).write_text(json.dumps({"tensors": entries}, indent=2) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST).read_text())
            entries = manifest["tensors"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"cannot read weight manifest in {directory}: {exc}") from None
        return cls({path: tensor.load(directory / e["file"]) for path, e in entries.items()})


def node_rng(seed, node_id):
    # Per-node streams keep a node's weights stable when other nodes change.
    return np.random.default_rng([seed, zlib.crc32(node_id.encode())])


def materialize(graph, seed=42, dtype=np.float32):
    """Deterministic weights for every parameterized node of ``graph``."""
    report = shape_infer(graph, (1, graph.nodes[0].attrs["channels"], 64, 64))
    store = {}
    for node in graph.nodes:
        if node.kind == "input":
            continue
        block = block_for(node, [report.shapes[s] for s in node.inputs])
        if block is None:
            continue
        for rel, arr in init_params(block, node_rng(seed, node.id), dtype).items():
            store[f"{node.id}.{rel}"] = arr
    return WeightStore(store)


def forward(graph, weights, x):
    """Run ``graph`` on ``x``; returns the head outputs flattened in level order."""
    x = tensor.as_nchw(x, "input")
    report = shape_infer(graph, x.shape)
    values = {}
    outputs = []
    for node in graph.nodes:
        if node.kind == "input":
            values[node.id] = x
            continue
        ins = [values[s] for s in node.inputs]
        if node.kind == "concat":
            y = K.concat(ins)
        elif node.kind == "upsample_nearest":
            y = K.upsample_nearest(ins[0], node.attrs["scale"])
        else:
            block = block_for(node, [a.shape for a in ins])
            params = weights.for_node(node.id, block)
            if node.kind in HEAD_KINDS:
                y = [o.astype(x.dtype, copy=False) for o in block.forward(params, ins)]
            else:
                y = block.forward(params, ins[0]).astype(x.dtype, copy=False)
        expected = _shape_list(report.shapes[node.id])
        got = [o.shape for o in y] if isinstance(y, list) else [y.shape]
        if got != expected:
            raise ShapeError(f"node '{node.id}': produced {got}, shape inference said {expected}")
        values[node.id] = y
    for out in graph.outputs:
        v = values[out]
        outputs.extend(v if isinstance(v, list) else [v])
    return outputs


def _shape_list(shape):
    return [tuple(s) for s in shape] if isinstance(shape, list) else [tuple(shape)]
