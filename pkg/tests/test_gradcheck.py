"""The finite-difference oracle itself: exactness on linear blocks, bug
detection on a sabotaged backward, and the full per-block suite."""

import numpy as np
import pytest

from tinydet import tensor as T
from tinydet.gradcheck import grad_check
from tinydet.layers import Conv2d, Layer
from tinydet.verify import gradcheck_suite


class ScaleBlock(Layer):
    """y = 3x: the gradient check must agree to machine precision."""

    def forward(self, x):
        return 3.0 * x

    def backward(self, g):
        return 3.0 * g


class BrokenConv(Conv2d):
    """Deliberately wrong weight gradient; grad_check must flag it."""

    def backward(self, grad_out):
        gx = super().backward(grad_out)
        self.weight.grad *= 1.01
        return gx


def test_linear_block_exact():
    rng = np.random.default_rng(0)
    rep = grad_check(ScaleBlock(), rng.uniform(-1, 1, (1, 2, 4, 4)), seed=0)
    assert rep.max_rel_err < 1e-10


def test_broken_backward_is_caught():
    rng = np.random.default_rng(1)
    cp = T.ConvParams(
        kernel=rng.uniform(-0.5, 0.5, (4, 3, 3, 3)),
        bias=rng.uniform(-0.5, 0.5, 4),
        groups=1,
        padding=(1, 1),
    )
    rep = grad_check(BrokenConv("c", cp), rng.uniform(-1, 1, (1, 3, 6, 6)), seed=0)
    assert rep.max_rel_err > 1e-3
    assert "c.weight" in rep.location


def test_nonfinite_output_rejected():
    class NanBlock(Layer):
        def forward(self, x):
            with np.errstate(divide="ignore"):
                return x / 0.0

        def backward(self, g):
            return g

    with pytest.raises(T.NumericError):
        grad_check(NanBlock(), np.ones((1, 1, 2, 2)), seed=0)


def test_probe_limit_subsets_entries():
    # a large block still finishes because only a fixed-seed subset of
    # entries is probed
    rng = np.random.default_rng(2)
    cp = T.ConvParams(kernel=rng.uniform(-0.5, 0.5, (8, 8, 3, 3)), groups=1, padding=(1, 1))
    rep = grad_check(Conv2d("c", cp), rng.uniform(-1, 1, (1, 8, 12, 12)), seed=0, probe_limit=50)
    assert rep.max_rel_err < 1e-6


def test_report_formatting():
    rng = np.random.default_rng(3)
    rep = grad_check(ScaleBlock(), rng.uniform(-1, 1, (1, 1, 2, 2)), seed=0)
    text = str(rep)
    assert "max_rel_err" in text and "input" in text


@pytest.fixture(scope="module")
def suite():
    return gradcheck_suite(instances=20, probe_limit=400)


def test_suite_covers_every_block(suite):
    names = {e.name for e in suite}
    assert names == {
        "conv2d",
        "batchnorm",
        "upsample2x",
        "relu",
        "sigmoid",
        "eltwise_mul",
        "msfa_block",
        "eucb_block",
        "detector_loss",
        "nwd_loss",
    }


def test_suite_all_pass(suite):
    failures = [f"{e.name}: {e.report}" for e in suite if not e.passed]
    assert not failures, "\n".join(failures)


def test_suite_is_deterministic(suite):
    again = gradcheck_suite(instances=3, probe_limit=100)
    again2 = gradcheck_suite(instances=3, probe_limit=100)
    for a, b in zip(again, again2):
        assert a.name == b.name
        assert a.report.max_rel_err == b.report.max_rel_err
        assert a.report.location == b.report.location
