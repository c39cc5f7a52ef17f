"""The gradient-checking harness itself: op suite and end-to-end check."""

import numpy as np
import pytest

from xmodal import tensor as T
from xmodal.gradcheck import (
    FD_STEP,
    NETWORK_TOL,
    OP_TOL,
    check_network,
    check_scalar_fn,
    numerical_gradient,
    rel_error,
    run_op_suite,
)
from xmodal.tensor import Tensor


def test_numerical_gradient_quadratic():
    # f(x) = sum(x^2) -> grad 2x, exact up to O(step^2)
    x = np.array([1.0, -2.0, 0.5])
    g = numerical_gradient(lambda a: float((a * a).sum()), x.copy())
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)


def test_rel_error_metric():
    assert rel_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert rel_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
    # small absolute disagreements are measured absolutely (denominator >= 1)
    assert rel_error(np.array([1e-8]), np.array([0.0])) == pytest.approx(1e-8)


def test_check_scalar_fn_catches_wrong_gradient():
    def broken(x):
        # forward x^2 but gradient deliberately wrong (3x instead of 2x)
        def vjp(g):
            return (g * 3.0 * x.data,)

        return T.tsum(T._from_op(x.data**2, (x,), vjp))

    err = check_scalar_fn(broken, np.array([1.0, 2.0]))
    assert err > OP_TOL


def test_op_suite_passes_small():
    report = run_op_suite(seed=1, cases_per_op=2)
    failed = [r.op for r in report.ops if not r.passed]
    assert not failed, f"ops failed finite differences: {failed}"
    names = {r.op for r in report.ops}
    assert {"conv2d", "conv3d", "relu", "l2_normalize",
            "softmax_cross_entropy", "index_rows"} <= names


def test_network_check_passes():
    worst = check_network(seed=0, step=FD_STEP)
    assert set(worst) == {"modality_specific", "shared"}
    assert max(worst.values()) <= NETWORK_TOL


def test_relu_margin_trace():
    with T.trace_relu_margins() as margins:
        T.relu(Tensor(np.array([-0.5, 0.25, 3.0])))
    assert margins == [0.25]
