"""Analytic gradients vs central finite differences (double precision)."""

import numpy as np
import pytest

from stnet import ops
from stnet.gradcheck import OP_CHECKS, grad_check, run_op_checks
from stnet.tensor import Tensor

TOL = 1e-4


@pytest.mark.parametrize("op_name", sorted(OP_CHECKS))
def test_op_gradients(op_name):
    rng = np.random.default_rng(7)
    worst = max(OP_CHECKS[op_name](rng) for _ in range(5))
    assert worst < TOL, f"{op_name}: max relative error {worst:.3e}"


def test_relu_away_from_zero_is_nearly_exact():
    x = Tensor(np.array([2.0, -3.0, 0.5]), requires_grad=True, dtype=np.float64)
    assert grad_check(ops.relu, [x]) < 1e-8


def test_run_op_checks_filters_and_validates():
    res = run_op_checks(op="fc", instances=3)
    assert set(res) == {"fc"} and res["fc"] < TOL
    with pytest.raises(ValueError, match="unknown op"):
        run_op_checks(op="definitely_not_an_op")


def test_requires_float64_inputs():
    x = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError, match="float64"):
        grad_check(ops.relu, [x])
