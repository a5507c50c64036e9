"""Declarative layer graphs and their JSON form.

A graph file looks like::

    {
      "format": "lightdet-graph", "version": 1,
      "meta": {"name": "...", "nc": 10, "reg_max": 16, "imgsz": 640,
               "width_multiple": 0.5, "depth_multiple": 0.33, "backbone_end": "sppf"},
      "nodes": [{"id": "images", "kind": "input", "inputs": [], "attrs": {"channels": 3}}, ...],
      "outputs": ["detect"]
    }

Nodes are listed in execution order and may only consume earlier nodes.
The structural part is checked against ``graph.schema.json``; per-kind
attribute requirements and wiring are checked by :meth:`GraphSpec.validate`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from ..errors import FormatError, GraphError

FORMAT = "lightdet-graph"
VERSION = 1

REQUIRED_ATTRS = {
    "input": ("channels",),
    "conv_bn_silu": ("channels", "k", "stride"),
    "c2f": ("channels", "n", "shortcut"),
    "fast_c2f": ("channels", "n", "residual", "mlp_ratio", "n_div"),
    "sppf": ("channels", "k"),
    "upsample_nearest": ("scale",),
    "dysample": ("scale", "groups", "offset_scale"),
    "ema": ("groups",),
    "concat": (),
    "detect_head": ("nc", "reg_max", "box_hidden", "cls_hidden"),
    "ema_head": ("nc", "reg_max", "box_hidden", "cls_hidden", "ema_groups"),
}
KINDS = tuple(REQUIRED_ATTRS)
HEAD_KINDS = ("detect_head", "ema_head")
SINGLE_INPUT = {k for k in KINDS if k not in ("input", "concat", *HEAD_KINDS)}


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    inputs: tuple = ()
    attrs: dict = field(default_factory=dict)

    def to_dict(self):
        return {"id": self.id, "kind": self.kind, "inputs": list(self.inputs), "attrs": dict(self.attrs)}


@dataclass(frozen=True)
class GraphSpec:
    nodes: tuple
    outputs: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @property
    def name(self):
        return self.meta.get("name", "graph")

    def node(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise GraphError("no such node", node_id)

    def validate(self):
        seen = set()
        inputs = [n for n in self.nodes if n.kind == "input"]
        if len(inputs) != 1:
            raise GraphError(f"graph must have exactly one input node, found {len(inputs)}")
        for n in self.nodes:
            if n.id in seen:
                raise GraphError("duplicate node id", n.id)
            if n.kind not in REQUIRED_ATTRS:
                raise GraphError(f"unknown kind {n.kind!r}", n.id)
            missing = [a for a in REQUIRED_ATTRS[n.kind] if a not in n.attrs]
            if missing:
                raise GraphError(f"kind {n.kind} requires attrs {missing}", n.id)
            for src in n.inputs:
                if src not in seen:
                    raise GraphError(f"input {src!r} is not an earlier node", n.id)
            if n.kind == "input" and n.inputs:
                raise GraphError("input node takes no inputs", n.id)
            if n.kind in SINGLE_INPUT and len(n.inputs) != 1:
                raise GraphError(f"kind {n.kind} takes exactly one input, got {len(n.inputs)}", n.id)
            if n.kind in ("concat", *HEAD_KINDS) and not n.inputs:
                raise GraphError(f"kind {n.kind} needs at least one input", n.id)
            seen.add(n.id)
        if not self.outputs:
            raise GraphError("graph declares no outputs")
        for out in self.outputs:
            if out not in seen:
                raise GraphError("output references an unknown node", out)
        end = self.meta.get("backbone_end")
        if end is not None and end not in seen:
            raise GraphError("meta.backbone_end references an unknown node", end)
        return self

    def backbone_ids(self):
        """Ids up to and including ``meta.backbone_end`` (empty if unset)."""
        end = self.meta.get("backbone_end")
        if end is None:
            return []
        ids = []
        for n in self.nodes:
            ids.append(n.id)
            if n.id == end:
                return ids
        return ids

    def to_dict(self):
        return {"format": FORMAT, "version": VERSION, "meta": dict(self.meta),
                "nodes": [n.to_dict() for n in self.nodes], "outputs": list(self.outputs)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        try:
            jsonschema.validate(data, _schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise FormatError(f"graph JSON invalid at {where}: {exc.message}") from None
        nodes = [NodeSpec(n["id"], n["kind"], tuple(n.get("inputs", ())), dict(n.get("attrs", {})))
                 for n in data["nodes"]]
        return cls(nodes, data["outputs"], data.get("meta", {})).validate()

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"graph file is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def load_graph(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read graph file {path}: {exc.strerror}") from None
    return GraphSpec.from_json(text)


def save_graph(graph, path):
    Path(path).write_text(graph.to_json())


def _schema():
    return json.loads(resources.files(__package__).joinpath("graph.schema.json").read_text())
