import dataclasses

import pytest
import numpy as np

from src.logic.model import (
    LpvDelaySystem, JumpKernel, DelayLaw, InitialHistory, delta, epsilon, validate,
)
from src.logic.polymat import PolyMatrix, RHO
from src.utils.errors import ValidationError, UsageError
from src.utils.expression import parse_expression


def test_delta_for_constant_kernel(box):
    kernel = JumpKernel.constant(10.0, box)
    assert delta(kernel, 0.1).scalar({RHO: 0.3}) == pytest.approx(3.0)


def test_epsilon():
    assert epsilon(0.5, 10.005) == pytest.approx(0.25 + 10.005 * 0.125 / 2)


def test_lambda_bar_integrates_theta(box):
    kernel = JumpKernel(PolyMatrix({(1, 0): [[2.0]]}), box)
    assert kernel.intensity(0.7) == pytest.approx(1.0)
    assert kernel.lambda_bar_sup() == pytest.approx(1.0)
    assert kernel.lambda_max == pytest.approx(2.0)
    assert not kernel.is_constant


def test_kernel_must_be_scalar(box):
    with pytest.raises(UsageError):
        JumpKernel(PolyMatrix.identity(2), box)


def test_scaled_kernel_is_constant(box):
    kernel = JumpKernel.constant(3.0, box).scaled_to(12.0)
    assert kernel.is_constant
    assert kernel.intensity(0.0) == pytest.approx(12.0)


def test_from_constant_fills_zeros(box):
    sys = LpvDelaySystem.from_constant(box, 0.2, A=np.eye(2), B=[[1.0], [0.0]])
    assert (sys.n, sys.n_w, sys.n_u, sys.n_z) == (2, 1, 1, 1)
    assert sys.A_d.shape == (2, 2)
    assert sys.D.shape == (1, 1)
    assert sys.max_degree() == 0


def test_validate_accepts_consistent_system(box, scalar_system):
    report = validate(scalar_system, JumpKernel.constant(2.0, box),
                      DelayLaw.constant(1e-3, 1e-3), InitialHistory.constant([1.0]))
    assert report.ok
    assert report.lambda_bar_sup == pytest.approx(2.0)
    assert report.delta.scalar({RHO: 0.5}) == pytest.approx(1 + 2 * 2.0 * 1e-3)


def test_validate_reports_negative_kernel(box, scalar_system):
    kernel = JumpKernel(PolyMatrix({(0, 0): [[1.0]], (0, 1): [[-3.0]]}), box)
    report = validate(scalar_system, kernel)
    assert "kernel" in [field for field, _ in report.issues]
    with pytest.raises(ValidationError) as info:
        report.raise_if_failed()
    assert "kernel" in info.value.fields


def test_validate_reports_delay_outside_bound(box):
    sys = LpvDelaySystem.from_constant(box, 1.0, A=[[-1.0]])
    delay = DelayLaw(parse_expression("2*r", ("r",)), 1.0)
    report = validate(sys, JumpKernel.constant(0.0, box), delay)
    assert [field for field, _ in report.issues] == ["delay"]


def test_validate_reports_shape_mismatch(box, scalar_system):
    broken = dataclasses.replace(scalar_system, C=PolyMatrix.constant([[1.0, 0.0]]))
    report = validate(broken, JumpKernel.constant(0.0, box))
    assert "C" in [field for field, _ in report.issues]


def test_validate_rejects_theta_in_system_matrix(box, scalar_system):
    broken = dataclasses.replace(scalar_system, A=PolyMatrix({(1, 0): [[1.0]]}))
    report = validate(broken, JumpKernel.constant(0.0, box))
    assert "A" in [field for field, _ in report.issues]


def test_validate_reports_discontinuous_history(box):
    sys = LpvDelaySystem.from_constant(box, 0.5, A=[[-1.0]])
    phi = InitialHistory((parse_expression("H(t+0.25)", ("t",)),))
    report = validate(sys, JumpKernel.constant(0.0, box), phi=phi)
    assert [field for field, _ in report.issues] == ["initial"]


def test_validate_accepts_smooth_history(box):
    sys = LpvDelaySystem.from_constant(box, 0.5, A=[[-1.0]])
    phi = InitialHistory((parse_expression("sin(t)", ("t",)),))
    assert validate(sys, JumpKernel.constant(0.0, box), phi=phi).ok


def test_validate_reports_history_dimension(box):
    sys = LpvDelaySystem.from_constant(box, 0.5, A=np.eye(2))
    report = validate(sys, JumpKernel.constant(0.0, box), phi=InitialHistory.constant([1.0]))
    assert [field for field, _ in report.issues] == ["initial"]


def test_history_sample_broadcasts_constants():
    phi = InitialHistory.constant([1.0, -2.0])
    values = phi.sample(np.linspace(-1.0, 0.0, 5))
    assert values.shape == (5, 2)
    np.testing.assert_array_equal(values[:, 1], -2.0)
