"""Multi-scale focused attention block.

Three parallel depthwise separable branch paths over the input -- two
independently parameterized (1x11, 11x1) pairs plus an auxiliary
(1x9, 9x1) pair -- are concatenated with the raw input, mixed by a 1x1
convolution, and turned into a sigmoid gate that reweights the input
element-wise.  Spatial size is preserved throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, Layer, Sequential, uniform_conv_init

# (kh, kw) pairs per branch; dual branches share a config entry
DUAL_KERNEL = 11
AUX_KERNEL = 9
DEFAULT_BRANCH_TAPS = (DUAL_KERNEL, DUAL_KERNEL, AUX_KERNEL)


def _separable_pair(rng, channels: int, k: int, name: str) -> Sequential:
    # 1xk then kx1, depthwise, same padding, no nonlinearity between the pair
    row = uniform_conv_init(
        rng, channels, 1, 1, k, groups=channels, padding=(0, k // 2)
    )
    col = uniform_conv_init(
        rng, channels, 1, k, 1, groups=channels, padding=(k // 2, 0)
    )
    return Sequential(Conv2d(f"{name}.row", row), Conv2d(f"{name}.col", col))


class MsfaBlock(Layer):
    """Gated multi-branch block; output shape equals input shape."""

    def __init__(self, channels: int, rng: np.random.Generator, name: str = "msfa"):
        self.channels = channels
        self.name = name
        # dual branches draw from independent streams of the run seed
        self.branch_a = _separable_pair(rng, channels, DUAL_KERNEL, f"{name}.branch_a")
        self.branch_b = _separable_pair(rng, channels, DUAL_KERNEL, f"{name}.branch_b")
        self.branch_aux = _separable_pair(rng, channels, AUX_KERNEL, f"{name}.branch_aux")
        self.mix = Conv2d(
            f"{name}.mix", uniform_conv_init(rng, channels, 4 * channels, 1, 1)
        )
        self._cache = None

    def params(self):
        return (
            self.branch_a.params()
            + self.branch_b.params()
            + self.branch_aux.params()
            + self.mix.params()
        )

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise T.ShapeError(
                f"{self.name}: expected {self.channels} channels, got {x.shape[1]}"
            )
        f2 = self.branch_a.forward(x)
        f3 = self.branch_b.forward(x)
        f4 = self.branch_aux.forward(x)
        mixed = self.mix.forward(T.concat_channels([x, f2, f3, f4]))
        gate = T.sigmoid(mixed)
        self._cache = (x, gate)
        return x * gate

    def backward(self, grad_out):
        x, gate = self._cache
        g_mixed = grad_out * x * gate * (1 - gate)
        g_cat = self.mix.backward(g_mixed)
        c = self.channels
        grad_x = grad_out * gate + g_cat[:, :c]
        grad_x = grad_x + self.branch_a.backward(g_cat[:, c : 2 * c])
        grad_x = grad_x + self.branch_b.backward(g_cat[:, 2 * c : 3 * c])
        grad_x = grad_x + self.branch_aux.backward(g_cat[:, 3 * c :])
        return grad_x

    def _cast_state(self, dtype):
        pass


def msfa_flops(
    channels: int,
    h: int,
    w: int,
    branch_taps: tuple[int, ...] = DEFAULT_BRANCH_TAPS,
) -> int:
    """Exact multiply-accumulate count of the block for a given branch
    configuration.  Each separable pair of scale k contributes two depthwise
    k-tap passes; the 1x1 mix consumes (1 + len(branches)) * C channels."""
    if channels < 1 or h < 1 or w < 1:
        raise ValueError("dimensions must be positive")
    hw = h * w
    macs = 0
    for k in branch_taps:
        macs += channels * hw * k * 2  # 1xk pass then kx1 pass
    mix_in = (1 + len(branch_taps)) * channels
    macs += mix_in * channels * hw  # channel mixing 1x1
    macs += channels * hw  # sigmoid gate multiply
    return macs


def branch_divergence(block: MsfaBlock, probe: np.ndarray) -> float:
    """Mean absolute difference between the two dual-branch outputs on a
    fixed probe, normalized by mean absolute activation.  Zero iff the
    branches compute identically; a proxy for complementary features."""
    fa = block.branch_a.forward(probe)
    fb = block.branch_b.forward(probe)
    denom = 0.5 * (np.abs(fa).mean() + np.abs(fb).mean())
    if denom == 0:
        return 0.0
    return float(np.abs(fa - fb).mean() / denom)
