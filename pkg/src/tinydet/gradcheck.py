"""Central finite-difference gradient oracle for layer blocks.

The check projects the block output onto a fixed random direction so the
whole backward pass is exercised through a single scalar, then compares the
analytic gradient of that scalar against central differences entry by entry.
Run at float64; finite differences are unreliable at float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Layer
from .tensor import NumericError

# entries with both gradients below this magnitude are compared absolutely
REL_FLOOR = 1e-3
PROBE_LIMIT = 10_000


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    location: str

    def __str__(self):
        return (
            f"max_rel_err={self.max_rel_err:.3e} "
            f"max_abs_err={self.max_abs_err:.3e} at {self.location}"
        )


def grad_check(
    block: Layer,
    x: np.ndarray,
    step: float = 1e-4,
    *,
    seed: int = 0,
    probe_limit: int = PROBE_LIMIT,
) -> GradCheckReport:
    """Compare the block's analytic backward against central differences on
    every input and parameter entry (a fixed-seed subset above 10^4 entries)."""
    x = x.astype(np.float64)
    block.astype(np.float64)
    rng = np.random.default_rng(seed)

    state = [s.copy() for s in block.state_arrays()]

    def restore_state():
        for dst, src in zip(block.state_arrays(), state):
            dst[...] = src

    def run_forward(inp):
        restore_state()
        y = block.forward(inp)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite output during gradient probing")
        return y

    y = run_forward(x)
    proj = rng.uniform(-1.0, 1.0, size=y.shape)
    base = float(np.sum(y * proj))
    block.zero_grad()
    grad_x = block.backward(proj)
    analytic = [("input", x, grad_x)] + [
        (p.name, p.value, p.grad.copy()) for p in block.params()
    ]
    restore_state()

    total = sum(arr.size for _, arr, _ in analytic)
    worst_rel, worst_abs, where = 0.0, 0.0, "none"
    for name, arr, grad in analytic:
        flat = arr.reshape(-1)
        if total > probe_limit:
            quota = max(1, int(probe_limit * arr.size / total))
            idxs = rng.choice(arr.size, size=min(quota, arr.size), replace=False)
        else:
            idxs = range(arr.size)
        gflat = grad.reshape(-1)

        def probe(i, delta):
            orig = flat[i]
            flat[i] = orig + delta
            l = float(np.sum(run_forward(x) * proj))
            flat[i] = orig
            return l

        def central_diff(i, h):
            return (probe(i, h) - probe(i, -h)) / (2 * h)

        for i in idxs:
            fd = central_diff(i, step)
            a = float(gflat[i])
            abs_err = abs(a - fd)
            rel_err = abs_err / max(abs(a), abs(fd), REL_FLOOR)
            if rel_err > 1e-7:
                # kink guard: central differences converge quadratically on a
                # smooth function, so halving the step barely moves a valid
                # estimate.  A large shift means the probe straddled a kink
                # (ReLU, IoU edge switch, clamp) where no finite difference is
                # meaningful; a genuinely wrong analytic gradient keeps a
                # stable estimate and still fails.
                fd_half = central_diff(i, step / 2)
                if abs(fd_half - fd) > 0.25 * abs_err + 1e-9:
                    continue
                # a kink sitting exactly at the probe point gives a central
                # difference that is stable in the step size, so also require
                # the one-sided differences to agree; on a smooth function
                # they differ only at O(h), far below a real gradient bug.
                fwd = (probe(i, step) - base) / step
                bwd = (base - probe(i, -step)) / step
                if abs(fwd - bwd) > 0.25 * abs_err + 1e-9:
                    continue
                fd = fd_half
                abs_err = abs(a - fd)
                rel_err = abs_err / max(abs(a), abs(fd), REL_FLOOR)
            if rel_err > worst_rel:
                worst_rel, where = rel_err, f"{name}[{i}]"
            worst_abs = max(worst_abs, abs_err)
    restore_state()
    return GradCheckReport(worst_rel, worst_abs, where)
