"""Parameter and multiply-accumulate ledgers over a layer graph.

Only convolutions cost MACs: a ``k x k`` convolution producing
``c_out x h_out x w_out`` from ``c_in`` channels costs
``c_out * h_out * w_out * k * k * c_in / groups``, and a partial convolution
over ``cp`` of ``c`` channels costs ``cp * h * w * k * k * cp``.
Normalization, activations, pooling, softmax, sampling and additions are
counted as zero. ``gflops = flops_factor * macs / 1e9``; the default factor 2
counts a multiply-add as two operations.

Parameters are learnable scalars only: conv weights and biases, batch-norm
and group-norm affine terms. Running statistics are excluded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ArgumentError
from .graph.shapes import block_for, shape_infer
from .graph.spec import HEAD_KINDS

FLOPS_FACTORS = (1, 2)


@dataclass(frozen=True)
class CostRow:
    id: str
    kind: str
    params: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    name: str
    rows: tuple
    input_shape: tuple | None = None
    flops_factor: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def gflops(self):
        return self.flops_factor * self.total_macs / 1e9

    def by_kind(self):
        out = {}
        for r in self.rows:
            p, m = out.get(r.kind, (0, 0))
            out[r.kind] = (p + r.params, m + r.macs)
        return out

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": None if self.input_shape is None else list(self.input_shape),
            "flops_factor": self.flops_factor,
            "rows": [{"id": r.id, "kind": r.kind, "params": r.params, "macs": r.macs} for r in self.rows],
            "total_params": self.total_params,
            "total_params_m": round(self.total_params / 1e6, 3),
            "total_macs": self.total_macs,
            "gflops": self.gflops,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self, macs=True):
        header = ["node", "kind", "params"] + (["MACs"] if macs else [])
        body = [[r.id, r.kind, f"{r.params:,}"] + ([f"{r.macs:,}"] if macs else []) for r in self.rows]
        lines = _table(header, body)
        lines.append(f"total params: {self.total_params:,} ({self.total_params / 1e6:.3f} M)")
        if macs and self.input_shape is not None:
            lines.append(f"total MACs:   {self.total_macs:,} at input {tuple(self.input_shape)}")
            lines.append(f"GFLOPs:       {self.gflops:.3f} (flops_factor {self.flops_factor})")
        return "\n".join(lines)


def _table(header, body, left=2):
    """Aligned text table; the first ``left`` columns are left-justified."""
    widths = [max(len(str(row[i])) for row in [header, *body]) for i in range(len(header))]
    fmt = lambda row: "  ".join(  # noqa: E731
        str(v).ljust(w) if i < left else str(v).rjust(w) for i, (v, w) in enumerate(zip(row, widths)))
    return [fmt(header), "  ".join("-" * w for w in widths), *map(fmt, body)]


def count_macs(graph, input_shape, flops_factor=2):
    """Full ledger (params and MACs) of ``graph`` at ``input_shape``."""
    if flops_factor not in FLOPS_FACTORS:
        raise ArgumentError(f"flops_factor must be 1 or 2, got {flops_factor}")
    report = shape_infer(graph, input_shape)
    rows = []
    for node in graph.nodes:
        if node.kind == "input":
            continue
        in_shapes = [report.shapes[s] for s in node.inputs]
        block = block_for(node, in_shapes)
        if block is None:
            rows.append(CostRow(node.id, node.kind, 0, 0))
            continue
        macs = block.macs(in_shapes if node.kind in HEAD_KINDS else in_shapes[0])
        rows.append(CostRow(node.id, node.kind, block.n_params(), macs))
    return CostReport(graph.name, tuple(rows), tuple(report.input_shape), flops_factor, dict(graph.meta))


def count_params(graph):
    """Parameter ledger; independent of input size, so MAC columns are zero."""
    # Parameter counts depend on channels only; any legal spatial size works.
    full = count_macs(graph, (1, graph.nodes[0].attrs["channels"], 64, 64))
    rows = tuple(CostRow(r.id, r.kind, r.params, 0) for r in full.rows)
    return CostReport(full.name, rows, None, full.flops_factor, full.meta)


@dataclass(frozen=True)
class CostDiff:
    """``a - b`` per node, per kind transition and in total.

    Kind keys are ``kind`` for nodes present in both reports with the same kind,
    ``"<b kind>-><a kind>"`` where a node changed kind, ``"+kind"`` for nodes
    only in ``a`` and ``"-kind"`` for nodes only in ``b``. Only changed
    entries are kept.
    """

    a: str
    b: str
    nodes: tuple
    kinds: dict
    params_a: int
    params_b: int
    macs_a: int
    macs_b: int
    flops_factor: int = 2

    @property
    def params(self):
        return self.params_a - self.params_b

    @property
    def macs(self):
        return self.macs_a - self.macs_b

    @property
    def params_pct(self):
        return 100.0 * self.params / self.params_b if self.params_b else 0.0

    @property
    def macs_pct(self):
        return 100.0 * self.macs / self.macs_b if self.macs_b else 0.0

    def to_dict(self):
        return {
            "a": self.a, "b": self.b,
            "nodes": [{"id": i, "kind": k, "params": p, "macs": m} for i, k, p, m in self.nodes],
            "kinds": {k: {"params": p, "macs": m} for k, (p, m) in self.kinds.items()},
            "params": self.params, "params_pct": self.params_pct,
            "macs": self.macs, "macs_pct": self.macs_pct,
            "gflops": self.flops_factor * self.macs / 1e9,
            "params_a": self.params_a, "params_b": self.params_b,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self):
        lines = [f"{self.a} vs {self.b} (a - b)"]
        body = [[k, f"{p:+,}", f"{m:+,}"] for k, (p, m) in self.kinds.items()]
        lines += _table(["kind", "params", "MACs"], body, left=1) if body else ["no node differs"]
        lines.append(f"params: {self.params_a:,} vs {self.params_b:,}  delta {self.params:+,} "
                     f"({self.params_pct:+.2f}%)")
        lines.append(f"MACs:   {self.macs_a:,} vs {self.macs_b:,}  delta {self.macs:+,} "
                     f"({self.macs_pct:+.2f}%)")
        if self.params < 0:
            lines.append(f"parameter reduction: {-self.params_pct:.2f}%")
        return "\n".join(lines)


def diff(a, b):
    """Signed difference ``a - b`` of two cost reports."""
    rows_b = {r.id: r for r in b.rows}
    ids_a = {r.id for r in a.rows}
    nodes, kinds = [], {}

    def record(node_id, key, dp, dm):
        if dp or dm or "->" in key or key[0] in "+-":
            nodes.append((node_id, key, dp, dm))
            p, m = kinds.get(key, (0, 0))
            kinds[key] = (p + dp, m + dm)

    for r in a.rows:
        other = rows_b.get(r.id)
        if other is None:
            record(r.id, f"+{r.kind}", r.params, r.macs)
        else:
            key = r.kind if r.kind == other.kind else f"{other.kind}->{r.kind}"
            record(r.id, key, r.params - other.params, r.macs - other.macs)
    for r in b.rows:
        if r.id not in ids_a:
            record(r.id, f"-{r.kind}", -r.params, -r.macs)
    return CostDiff(a.name, b.name, tuple(nodes), kinds, a.total_params, b.total_params,
                    a.total_macs, b.total_macs, a.flops_factor)
