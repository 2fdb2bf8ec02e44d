"""Gradient-oracle suite: every differentiable block checked against
central finite differences at float64, over fixed-seed instances.

Shared by the CLI `gradcheck` subcommand and the acceptance tests.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import BBox, NwdConfig, nwd_loss
from .detector import DetectorConfig, TinyDetector, compute_loss
from .eucb import EucbBlock
from .gradcheck import GradCheckReport, grad_check
from .layers import BatchNorm2d, Conv2d, Layer, ReLU, Upsample2x, uniform_conv_init
from .msfa import MsfaBlock

PURE_TOL = 1e-6
BN_TOL = 1e-5  # batch-statistic coupling widens the tolerance
NWD_TOL = 1e-8


class SigmoidLayer(Layer):
    def forward(self, x):
        self._x = x
        return T.activation(x, "sigmoid")

    def backward(self, g):
        return T.activation_backward(self._x, "sigmoid", g)


class EltwiseMulLayer(Layer):
    """x * b with b trainable, so both operand gradients get checked."""

    def __init__(self, b: np.ndarray):
        from .layers import Param

        self.b = Param("b", b)

    def params(self):
        return [self.b]

    def forward(self, x):
        self._x = x
        return T.eltwise(x, self.b.value, "mul")

    def backward(self, g):
        self.b.grad += g * self._x
        return g * self.b.value


class LossBlock(Layer):
    """Full detector + loss as a scalar-output block."""

    def __init__(self, cfg: DetectorConfig, targets):
        self.model = TinyDetector(cfg)
        self.cfg = cfg
        self.targets = targets

    def params(self):
        return self.model.params()

    def state_arrays(self):
        return self.model.state_arrays()

    def forward(self, x):
        y = self.model.forward(x)
        loss, _, self._ghead = compute_loss(y, self.targets, self.cfg)
        return np.array(loss)

    def backward(self, g):
        return self.model.backward(self._ghead * float(g))

    def _cast_state(self, dtype):
        self.model.astype(dtype)


def _away_from_zero(rng, shape, lo=0.1, hi=1.0):
    """Random values bounded away from 0 so ReLU kinks cannot corrupt
    finite differences."""
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _conv_case(rng, i):
    shapes = [
        ((1, 3, 6, 6), (4, 3, 3, 3), 1, (1, 1)),
        ((2, 4, 5, 7), (4, 1, 1, 11), 4, (0, 5)),
        ((2, 4, 7, 5), (4, 1, 11, 1), 4, (5, 0)),
        ((1, 2, 6, 6), (6, 2, 1, 1), 1, (0, 0)),
        ((2, 6, 6, 6), (6, 1, 3, 3), 6, (1, 1)),
    ]
    xs, ks, g, pad = shapes[i % len(shapes)]
    cp = T.ConvParams(
        kernel=rng.uniform(-0.5, 0.5, ks),
        bias=rng.uniform(-0.5, 0.5, ks[0]),
        groups=g,
        padding=pad,
    )
    return Conv2d("conv", cp), rng.uniform(-1, 1, xs)


@dataclass
class SuiteEntry:
    name: str
    tolerance: float
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.max_rel_err <= self.tolerance


def _worst(entries):
    return max(entries, key=lambda e: e.report.max_rel_err)


def gradcheck_suite(
    *, instances: int = 20, probe_limit: int = 400, base_seed: int = 2024
) -> list[SuiteEntry]:
    """One summary entry per block kind, each the worst case over
    `instances` fixed-seed random instances."""
    entries: list[SuiteEntry] = []

    def sweep(name, tol, make, step=1e-4):
        worst = []
        tag = zlib.crc32(name.encode())
        for i in range(instances):
            rng = np.random.default_rng([base_seed, tag, i])
            block, x = make(rng, i)
            rep = grad_check(block, x, step=step, seed=i, probe_limit=probe_limit)
            worst.append(SuiteEntry(name, tol, rep))
        entries.append(_worst(worst))

    sweep("conv2d", PURE_TOL, _conv_case)
    sweep(
        "batchnorm",
        BN_TOL,
        lambda rng, i: (
            BatchNorm2d(
                "bn",
                T.BatchNormState(
                    gamma=rng.uniform(0.5, 1.5, 3),
                    beta=rng.uniform(-0.5, 0.5, 3),
                    running_mean=np.zeros(3),
                    running_var=np.ones(3),
                    mode="train" if i % 2 == 0 else "eval",
                ),
            ),
            rng.uniform(-1, 1, (2, 3, 4, 5)),
        ),
    )
    sweep(
        "upsample2x",
        PURE_TOL,
        lambda rng, i: (
            Upsample2x("bilinear" if i % 2 == 0 else "nearest"),
            rng.uniform(-1, 1, (1, 2, 3 + i % 3, 4)),
        ),
    )
    sweep("relu", PURE_TOL, lambda rng, i: (ReLU(), _away_from_zero(rng, (2, 3, 4, 4))))
    sweep(
        "sigmoid", PURE_TOL, lambda rng, i: (SigmoidLayer(), rng.uniform(-2, 2, (2, 3, 4, 4)))
    )
    sweep(
        "eltwise_mul",
        PURE_TOL,
        lambda rng, i: (
            EltwiseMulLayer(rng.uniform(-1, 1, (1, 2, 3, 3))),
            rng.uniform(-1, 1, (1, 2, 3, 3)),
        ),
    )
    sweep(
        "msfa_block",
        PURE_TOL,
        lambda rng, i: (MsfaBlock(4, rng), rng.uniform(-1, 1, (1, 4, 6, 6))),
    )
    sweep(
        "eucb_block",
        BN_TOL,
        lambda rng, i: (
            EucbBlock(3, 2, rng, upsample_mode="bilinear" if i % 2 else "nearest"),
            rng.uniform(-1, 1, (2, 3, 4, 4)),
        ),
    )
    sweep("detector_loss", BN_TOL, _loss_case)
    entries.append(_nwd_entry(instances))
    return entries


def _loss_case(rng, i):
    cfg = DetectorConfig(
        input_size=32,
        width_stem=4,
        width=4,
        num_classes=3,
        deep_block="msfa" if i % 2 else "plain-conv",
        upsampler="eucb" if i % 2 else "plain",
        box_loss="nwd" if i % 3 else "iou",
        seed=int(rng.integers(0, 10_000)),
    )
    targets = [
        [
            (int(rng.integers(0, 3)), float(rng.uniform(6, 26)), float(rng.uniform(6, 26)),
             float(rng.uniform(3, 8)), float(rng.uniform(3, 8)))
            for _ in range(2)
        ]
    ]
    return LossBlock(cfg, targets), rng.uniform(-0.5, 0.5, (1, 1, 32, 32))


def nwd_grad_errors(instances: int = 20, step: float = 1e-5) -> float:
    """Worst relative error of the analytic box-loss gradient against
    scalar central differences, over both modes."""
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([77, i])
        bp = BBox(*rng.uniform(10, 50, 2), *rng.uniform(4, 20, 2))
        bg = BBox(*rng.uniform(10, 50, 2), *rng.uniform(4, 20, 2))
        for mode in ("canonical-exp", "paper-linear"):
            cfg = NwdConfig(c_norm=12.8, mode=mode)
            res = nwd_loss(bp, bg, cfg)
            vals = [bp.cx, bp.cy, bp.w, bp.h]
            for j in range(4):
                hi, lo = list(vals), list(vals)
                hi[j] += step
                lo[j] -= step
                fd = (nwd_loss(BBox(*hi), bg, cfg).loss - nwd_loss(BBox(*lo), bg, cfg).loss) / (
                    2 * step
                )
                a = res.grads[j]
                rel = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
                worst = max(worst, rel)
    return worst


def _nwd_entry(instances):
    err = nwd_grad_errors(instances)
    return SuiteEntry("nwd_loss", NWD_TOL, GradCheckReport(err, err, "box params"))


def suite_csv(entries: list[SuiteEntry]) -> str:
    lines = ["block,max_rel_err,max_abs_err,tolerance,pass"]
    for e in entries:
        lines.append(
            f"{e.name},{e.report.max_rel_err:.3e},{e.report.max_abs_err:.3e},"
            f"{e.tolerance:.0e},{'yes' if e.passed else 'no'}"
        )
    return "\n".join(lines) + "\n"
