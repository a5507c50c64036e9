"""Command-line entry point: ``lightdet <command> [flags]``.

Exit codes: 0 success, 1 failed expectation or gradient check, 2 usage or
input error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost, gradcheck, metrics, tensor
from .errors import ArgumentError, LightdetError
from .graph import WeightStore, build_preset, forward, load_graph, materialize, shape_infer
from .graph.spec import HEAD_KINDS

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _model_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model-id", type=int, choices=range(1, 7), metavar="{1..6}",
                     help="preset from the ablation ladder")
    src.add_argument("--graph", type=Path, metavar="FILE", help="graph JSON file")
    p.add_argument("--nc", type=int, default=10, help="number of classes (presets only)")
    p.add_argument("--imgsz", type=int, default=640, help="square input side, multiple of 32")


def _common_flags(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=42)
    p.add_argument("--format", choices=("text", "json"), default="text")


def _expect_flags(p, gflops):
    p.add_argument("--expect-params", type=int, metavar="N")
    if gflops:
        p.add_argument("--expect-gflops", type=float, metavar="G")
    p.add_argument("--tolerance", type=float, default=0.0, metavar="P",
                   help="allowed deviation from expectations, in percent (default 0)")


def build_parser():
    parser = _Parser(prog="lightdet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("describe", help="per-node kinds, attributes, shapes and strides")
    _model_flags(p)
    _common_flags(p)

    p = sub.add_parser("params", help="learnable-parameter ledger")
    _model_flags(p)
    _common_flags(p)
    _expect_flags(p, gflops=False)

    p = sub.add_parser("flops", help="parameter and MAC ledger with GFLOPs")
    _model_flags(p)
    _common_flags(p)
    p.add_argument("--flops-factor", type=int, choices=cost.FLOPS_FACTORS, default=2)
    _expect_flags(p, gflops=True)

    p = sub.add_parser("compare", help="cost difference of two graphs (model minus --against)")
    _model_flags(p)
    _common_flags(p)
    p.add_argument("--against", required=True, metavar="ID|FILE", help="preset id or graph file")
    p.add_argument("--flops-factor", type=int, choices=cost.FLOPS_FACTORS, default=2)

    p = sub.add_parser("forward", help="run the graph and write head tensors plus a manifest")
    _model_flags(p)
    _common_flags(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, metavar="FILE.fdmt")
    src.add_argument("--random", action="store_true", help="standard-normal input drawn from --seed")
    src.add_argument("--zeros", action="store_true", help="all-zero input")
    p.add_argument("--batch", type=int, default=1, help="batch size for --random/--zeros")
    p.add_argument("--weights", type=Path, metavar="DIR", help="weight directory (default: seeded init)")
    p.add_argument("--save-weights", type=Path, metavar="DIR", help="also write the weights used")
    p.add_argument("--out", type=Path, required=True, metavar="DIR")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic backward passes")
    p.add_argument("--op", default="all", help=f"one of {', '.join(gradcheck.CASES)}, or all")
    p.add_argument("--seeds", type=int, nargs="+", default=list(gradcheck.DEFAULT_SEEDS))
    _common_flags(p, seed=False)

    p = sub.add_parser("eval", help="precision, recall, AP and mAP of JSON-lines detections")
    p.add_argument("--det", type=Path, required=True, metavar="FILE")
    p.add_argument("--gt", type=Path, required=True, metavar="FILE")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--range", action="store_true", help="add mAP over IoU 0.50:0.95")
    p.add_argument("--include-empty-classes", action="store_true",
                   help="average over classes seen only in detections too (AP 0)")
    _common_flags(p, seed=False)
    return parser


def resolve_graph(args):
    if args.graph is not None:
        return load_graph(args.graph)
    return build_preset(args.model_id, args.nc, args.imgsz)


def _input_shape(args, graph, n=1):
    if args.imgsz <= 0 or args.imgsz % 32:
        raise ArgumentError(f"--imgsz must be a positive multiple of 32, got {args.imgsz}")
    return (n, graph.nodes[0].attrs["channels"], args.imgsz, args.imgsz)


def _fmt_attrs(attrs):
    return ",".join(f"{k}={v}" for k, v in attrs.items())


def cmd_describe(args):
    graph = resolve_graph(args)
    report = shape_infer(graph, _input_shape(args, graph))
    if args.format == "json":
        return EXIT_OK, json.dumps(report.to_dict(), indent=2)
    rows = []
    for node in graph.nodes:
        shape = report.shapes[node.id]
        if node.kind in HEAD_KINDS:
            for i, (src, s, stride) in enumerate(report.levels):
                rows.append([f"{node.id}/{i}", node.kind, src, _fmt_attrs(node.attrs), str(s), str(stride)])
        else:
            rows.append([node.id, node.kind, ",".join(node.inputs), _fmt_attrs(node.attrs), str(shape),
                         str(report.strides[node.id])])
    lines = [f"{graph.name}  input {report.input_shape}"]
    lines += cost._table(["node", "kind", "inputs", "attrs", "shape", "stride"], rows, left=5)
    return EXIT_OK, "\n".join(lines)


def _check(label, actual, expected, tolerance):
    dev = 100.0 * (actual - expected) / expected if expected else float("inf")
    ok = abs(dev) <= tolerance + 1e-12
    return ok, {"quantity": label, "actual": actual, "expected": expected,
                "deviation_pct": dev, "tolerance_pct": tolerance, "pass": ok}


def _expectations(args, report):
    checks = []
    if args.expect_params is not None:
        checks.append(_check("params", report.total_params, args.expect_params, args.tolerance))
    if getattr(args, "expect_gflops", None) is not None:
        checks.append(_check("gflops", report.gflops, args.expect_gflops, args.tolerance))
    return checks


def _render_ledger(args, report, show_macs):
    checks = _expectations(args, report)
    code = EXIT_OK if all(ok for ok, _ in checks) else EXIT_FAIL
    if args.format == "json":
        data = report.to_dict()
        if checks:
            data["expectations"] = [c for _, c in checks]
        return code, json.dumps(data, indent=2)
    lines = [report.name, report.to_text(macs=show_macs)]
    for ok, c in checks:
        num = "{:,}" if c["quantity"] == "params" else "{:.3f}"
        lines.append(f"expect {c['quantity']}: {'PASS' if ok else 'FAIL'}  {num.format(c['actual'])} vs "
                     f"{num.format(c['expected'])} ({c['deviation_pct']:+.3f}%, "
                     f"tolerance {c['tolerance_pct']:g}%)")
    return code, "\n".join(lines)


def cmd_params(args):
    return _render_ledger(args, cost.count_params(resolve_graph(args)), show_macs=False)


def cmd_flops(args):
    graph = resolve_graph(args)
    report = cost.count_macs(graph, _input_shape(args, graph), args.flops_factor)
    return _render_ledger(args, report, show_macs=True)


def cmd_compare(args):
    graph = resolve_graph(args)
    if args.against.isdigit():
        other = build_preset(int(args.against), args.nc, args.imgsz)
    else:
        other = load_graph(args.against)
    a = cost.count_macs(graph, _input_shape(args, graph), args.flops_factor)
    b = cost.count_macs(other, _input_shape(args, other), args.flops_factor)
    d = cost.diff(a, b)
    return EXIT_OK, d.to_json() if args.format == "json" else d.to_text()


def _forward_input(args, graph):
    if args.input is not None:
        x = tensor.load(args.input)
        tensor.as_nchw(x, str(args.input))
        n, c, h, w = x.shape
        if c != graph.nodes[0].attrs["channels"] or h != w or h % 32:
            raise ArgumentError(f"input must be (n, {graph.nodes[0].attrs['channels']}, s, s) with s a "
                                f"multiple of 32, got {x.shape}")
        return x
    if args.batch < 1:
        raise ArgumentError(f"--batch must be >= 1, got {args.batch}")
    shape = _input_shape(args, graph, args.batch)
    if args.zeros:
        return np.zeros(shape, np.float32)
    return np.random.default_rng(args.seed).standard_normal(shape).astype(np.float32)


def cmd_forward(args):
    graph = resolve_graph(args)
    x = _forward_input(args, graph)
    weights = WeightStore.load(args.weights) if args.weights else materialize(graph, args.seed)
    report = shape_infer(graph, x.shape)
    outs = forward(graph, weights, x)
    args.out.mkdir(parents=True, exist_ok=True)
    levels = []
    for i, ((src, _, stride), y) in enumerate(zip(report.levels, outs)):
        fname = f"level{i}_stride{stride}.fdmt"
        levels.append({"file": fname, "source": src, "shape": list(y.shape), "stride": stride,
                       "dtype": str(y.dtype), "finite": bool(np.isfinite(y).all()),
                       "sha256": tensor.save(args.out / fname, y)})
    manifest = {"graph": graph.name, "seed": None if args.weights else args.seed,
                "input_shape": list(x.shape), "input_sha256": tensor.checksum(x), "outputs": levels}
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if args.save_weights:
        weights.save(args.save_weights)
    if args.format == "json":
        return EXIT_OK, json.dumps(manifest, indent=2)
    lines = [f"{graph.name}: wrote {len(levels)} head tensors to {args.out}"]
    lines += [f"  {lv['file']}  {tuple(lv['shape'])}  sha256 {lv['sha256'][:16]}" for lv in levels]
    return EXIT_OK, "\n".join(lines)


def cmd_gradcheck(args):
    ops = list(gradcheck.CASES) if args.op == "all" else [args.op]
    if args.op != "all" and args.op not in gradcheck.CASES:
        raise ArgumentError(f"unknown op {args.op!r}; choose from {', '.join(gradcheck.CASES)}, all")
    reports = gradcheck.run_suite(ops, args.seeds)
    code = EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL
    if args.format == "json":
        return code, json.dumps([{"op": r.op_name, "seed": r.seed, "max_rel_error": r.max_rel_error,
                                  "max_abs_error": r.max_abs_error, "points_checked": r.points_checked,
                                  "pass": r.passed} for r in reports], indent=2)
    rows = [[r.op_name, str(r.seed), f"{r.max_rel_error:.3e}", f"{r.max_abs_error:.3e}",
             str(r.points_checked), "PASS" if r.passed else "FAIL"] for r in reports]
    lines = cost._table(["op", "seed", "max_rel", "max_abs", "points", "result"], rows, left=1)
    lines.append(f"tolerance {gradcheck.TOLERANCE:g}: {'all passed' if code == EXIT_OK else 'FAILED'}")
    return code, "\n".join(lines)


def cmd_eval(args):
    if not 0.0 < args.iou <= 1.0:
        raise ArgumentError(f"--iou must be in (0, 1], got {args.iou}")
    dets = metrics.read_boxes(args.det, detections=True)
    gts = metrics.read_boxes(args.gt, detections=False)
    result = metrics.evaluate(dets, gts, args.iou, args.range, args.include_empty_classes)
    return EXIT_OK, result.to_json() if args.format == "json" else result.to_text()


COMMANDS = {
    "describe": cmd_describe, "params": cmd_params, "flops": cmd_flops, "compare": cmd_compare,
    "forward": cmd_forward, "gradcheck": cmd_gradcheck, "eval": cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        code, text = COMMANDS[args.command](args)
    except LightdetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
