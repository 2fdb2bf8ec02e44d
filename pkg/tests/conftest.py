"""Shared oracles and fixtures for the test suite.

The reference implementations here are deliberately naive (nested loops,
brute-force search) and written directly from the mathematical definitions,
so they stay independent of the optimized library paths they check.
"""

import numpy as np
import pytest


def naive_conv2d(x, kernel, bias, groups, padding, stride=1):
    """Direct nested-loop cross-correlation with zero padding."""
    n, c, h, w = x.shape
    oc, icpg, kh, kw = kernel.shape
    ph, pw = padding
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    ocpg = oc // groups
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, oc, oh, ow), dtype=np.float64)
    for ni in range(n):
        for o in range(oc):
            gi = o // ocpg
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(icpg):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (
                                    kernel[o, ic, ki, kj]
                                    * xp[ni, gi * icpg + ic, stride * i + ki, stride * j + kj]
                                )
                    out[ni, o, i, j] = acc
            if bias is not None:
                out[ni, o] += bias[o]
    return out


def brute_force_best_matching(preds, gts, iou_fn, threshold):
    """Exhaustive search over one-to-one prediction-to-gt assignments,
    maximizing TP count; among equal-TP matchings prefers the one the
    greedy score-ordered rule would produce.  Only usable on tiny instances.
    Returns the maximum achievable TP count."""
    from itertools import permutations

    np_, ng = len(preds), len(gts)
    best = 0
    # assign each prediction either a distinct gt index or nothing
    indices = list(range(ng)) + [None] * np_
    seen = set()
    for perm in permutations(indices, np_):
        if perm in seen:
            continue
        seen.add(perm)
        used = [g for g in perm if g is not None]
        if len(used) != len(set(used)):
            continue
        tp = 0
        for p, g in zip(preds, perm):
            if g is None:
                continue
            if (
                p.image_id == gts[g].image_id
                and p.class_id == gts[g].class_id
                and iou_fn(p.bbox, gts[g].bbox) >= threshold
            ):
                tp += 1
        best = max(best, tp)
    return best


def scalar_average_precision(tp_flags, scores, gt_count):
    """All-points AP recomputed point by point from the PR definition."""
    if gt_count == 0:
        return 0.0
    order = sorted(range(len(tp_flags)), key=lambda i: -scores[i])
    ranked = [tp_flags[i] for i in order]
    ap = 0.0
    prev_recall = 0.0
    for rank in range(len(ranked)):
        if not ranked[rank]:
            continue
        tp = sum(ranked[: rank + 1])
        recall = tp / gt_count
        # precision envelope at this recall: best precision at any deeper cut
        # that reaches at least this recall
        best_p = 0.0
        for cut in range(rank, len(ranked)):
            tpc = sum(ranked[: cut + 1])
            if tpc / gt_count >= recall:
                best_p = max(best_p, tpc / (cut + 1))
        ap += (recall - prev_recall) * best_p
        prev_recall = recall
    return ap


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small deterministic dataset shared by detector/CLI tests."""
    from tinydet.synth import SynthConfig, generate_dataset

    root = tmp_path_factory.mktemp("data") / "tiny"
    cfg = SynthConfig(images={"train": 8, "val": 4, "test": 4}, seed=11)
    generate_dataset(cfg, root)
    return root
