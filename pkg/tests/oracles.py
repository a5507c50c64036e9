"""Slow, independent reference implementations used only by the tests.

None of these import the code under test; they are written from the
definitions directly, with loops instead of vectorized tricks.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0, groups=1):
    n, ci, h, wd = x.shape
    co, cig, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    cog = co // groups
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for bi in range(n):
        for o in range(co):
            g = o // cog
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(cig):
                        for ky in range(k):
                            for kx in range(k):
                                iy = y * stride + ky - padding
                                ix = xx * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += float(x[bi, g * cig + c, iy, ix]) * float(w[o, c, ky, kx])
                    out[bi, o, y, xx] = acc
    return out


def matmul_loops(a, b):
    bs, m, k = a.shape
    n = b.shape[2]
    out = np.zeros((bs, m, n))
    for i in range(bs):
        for r in range(m):
            for c in range(n):
                out[i, r, c] = sum(float(a[i, r, t]) * float(b[i, t, c]) for t in range(k))
    return out


def bilinear_resize(x, scale):
    """Half-pixel-centre bilinear resize with edge clamping, one output pixel at a time."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * scale, w * scale), dtype=np.float64)

    def src(o, size):
        p = min(max((o + 0.5) / scale - 0.5, 0.0), size - 1)
        lo = int(math.floor(p))
        return lo, min(lo + 1, size - 1), p - lo

    for oy in range(h * scale):
        y0, y1, fy = src(oy, h)
        for ox in range(w * scale):
            x0, x1, fx = src(ox, w)
            top = x[:, :, y0, x0] * (1 - fx) + x[:, :, y0, x1] * fx
            bot = x[:, :, y1, x0] * (1 - fx) + x[:, :, y1, x1] * fx
            out[:, :, oy, ox] = top * (1 - fy) + bot * fy
    return out


def iou_exact(a, b):
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def score_order(dets):
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def greedy_by_enumeration(dets, gts, thr):
    """Match flags (input order) maximizing, in score order, the sequence of
    ``(iou of the chosen GT, -GT index)`` over every injective assignment.

    Enumerates all partial injective maps det -> eligible GT; the
    lexicographically largest key is the outcome of score-ordered greedy
    matching with highest-IoU choice and earliest-index tie-break.
    """
    thr = Fraction(str(thr))
    order = score_order(dets)
    options = []
    for i in order:
        d = dets[i]
        opts = [None]
        for j, g in enumerate(gts):
            if g.image_id == d.image_id and g.class_id == d.class_id and iou_exact(d.bbox, g.bbox) >= thr:
                opts.append(j)
        options.append(opts)
    best_key, best = None, None
    for choice in itertools.product(*options):
        used = [j for j in choice if j is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple((-1, 0) if j is None else (iou_exact(dets[i].bbox, gts[j].bbox), -j)
                    for i, j in zip(order, choice))
        if best_key is None or key > best_key:
            best_key, best = key, choice
    flags = [False] * len(dets)
    for i, j in zip(order, best):
        flags[i] = j is not None
    return flags


def ap_dense(curve, points=12_000):
    """Midpoint Riemann sum of the interpolated precision ``max{p : recall >= r}`` over r in [0, 1].

    12,000 divides evenly by every recall denominator up to 12, so for small
    instances each cell lies inside one step and the sum is exact up to
    roundoff.
    """
    total = 0.0
    for k in range(points):
        r = (k + 0.5) / points
        ps = [p for p, rec in curve if rec >= r]
        total += max(ps) if ps else 0.0
    return total / points


def ap_exact(flags, total_gt):
    """AP as a Fraction: mean over GT recall steps j/G of the best precision reaching that recall."""
    if total_gt == 0:
        return Fraction(0)
    precs, tp = [], 0
    for k, f in enumerate(flags, start=1):
        tp += f
        precs.append((Fraction(tp, k), tp))
    return sum((max((p for p, t in precs if t >= j), default=Fraction(0)) for j in range(1, total_gt + 1)),
               Fraction(0)) / total_gt


def map_exact(dets, gts, thr, include_empty=False):
    classes = {g.class_id for g in gts} | ({d.class_id for d in dets} if include_empty else set())
    aps = []
    for c in sorted(classes):
        cd = [d for d in dets if d.class_id == c]
        cg = [g for g in gts if g.class_id == c]
        flags = greedy_by_enumeration(cd, cg, thr)
        aps.append(ap_exact([flags[i] for i in score_order(cd)], len(cg)))
    return sum(aps, Fraction(0)) / len(aps)


def nms_quadratic(dets, thr, per_class=True):
    order = score_order(dets)
    m = len(order)
    suppressed = [False] * m
    keep = []
    for a in range(m):
        if suppressed[a]:
            continue
        da = dets[order[a]]
        keep.append(da)
        for b in range(a + 1, m):
            db = dets[order[b]]
            same = db.image_id == da.image_id and (not per_class or db.class_id == da.class_id)
            if same and float(iou_exact(da.bbox, db.bbox)) > thr:
                suppressed[b] = True
    return keep
