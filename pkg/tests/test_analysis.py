from types import SimpleNamespace

import pytest

from src.logic.analysis import (
    build_thm1, build_thm2, min_gamma, check_feasible, default_lambda_hat, search_lambda_hat,
    save_certificate, load_certificate,
)
from src.logic.model import JumpKernel
from src.logic.polymat import PolyMatrix, ParamBox
from src.logic.sdp import OPTIMAL
from src.utils.errors import UsageError


def test_thm1_program_layout(scalar_system, zero_kernel, fast_settings):
    prog = build_thm1(scalar_system, zero_kernel, scalar_system.h, fast_settings)
    assert list(prog.variables) == ["P", "Z", "Q", "R", "g"]
    assert len(prog.constraints) == 4
    # ∫Z dθ ≡ 0: один свободный элемент, две степени по ρ
    assert len(prog.equalities) == 2
    assert prog.meta["theorem"] == 1


def test_scalar_hinf_gain_thm1(scalar_system, zero_kernel, fast_settings):
    cert, report = min_gamma(build_thm1(scalar_system, zero_kernel, scalar_system.h, fast_settings),
                             fast_settings)
    assert report.status == OPTIMAL
    assert 0.999 <= cert.gamma <= 1.05
    assert set(cert.values) == {"P", "Z", "Q", "R"}
    assert cert.residual <= fast_settings.residual_tol


def test_scalar_hinf_gain_thm2(scalar_system, zero_kernel, fast_settings):
    lam = default_lambda_hat(zero_kernel, fast_settings)
    cert, report = min_gamma(build_thm2(scalar_system, zero_kernel, scalar_system.h, lam, fast_settings),
                             fast_settings)
    assert report.status == OPTIMAL
    assert 0.999 <= cert.gamma <= 1.05
    assert cert.lambda_hat == pytest.approx(0.005)


def test_check_feasible(scalar_system, zero_kernel, fast_settings):
    above = check_feasible(build_thm1(scalar_system, zero_kernel, scalar_system.h, fast_settings),
                           2.0, fast_settings)
    assert above.status == OPTIMAL
    below = check_feasible(build_thm1(scalar_system, zero_kernel, scalar_system.h, fast_settings),
                           0.5, fast_settings)
    assert below.status != OPTIMAL


def test_certificate_yaml(tmp_path, scalar_system, zero_kernel, fast_settings):
    cert, _ = min_gamma(build_thm1(scalar_system, zero_kernel, scalar_system.h, fast_settings), fast_settings)
    path = tmp_path / "cert.yaml"
    save_certificate(cert, path)
    back = load_certificate(path)
    assert back.theorem == 1
    assert back.gamma == pytest.approx(cert.gamma)
    assert back.rho_points == fast_settings.rho_points
    assert back.values["Z"].vars == cert.values["Z"].vars
    assert back.values["P"].scalar({"rho": 0.4}) == pytest.approx(cert.values["P"].scalar({"rho": 0.4}))


def test_thm2_rejects_nonpositive_lambda_hat(scalar_system, zero_kernel, fast_settings):
    with pytest.raises(UsageError):
        build_thm2(scalar_system, zero_kernel, scalar_system.h, 0.0, fast_settings)


def test_kernel_box_must_match(scalar_system, fast_settings):
    kernel = JumpKernel.constant(1.0, ParamBox(0.0, 2.0))
    with pytest.raises(UsageError):
        build_thm1(scalar_system, kernel, scalar_system.h, fast_settings)


def test_degree_outside_cap(scalar_system, zero_kernel, fast_settings):
    with pytest.raises(UsageError):
        build_thm1(scalar_system, zero_kernel, scalar_system.h, fast_settings, degrees={"P": 9})


def test_default_lambda_hat(box, fast_settings):
    assert default_lambda_hat(JumpKernel.constant(10.0, box), fast_settings) == pytest.approx(10.005)
    kernel = JumpKernel(PolyMatrix({(1, 0): [[2.0]]}), box)
    assert default_lambda_hat(kernel, fast_settings) == pytest.approx(1.005)


def test_lambda_hat_search_minimises_gamma(scalar_system, zero_kernel, fast_settings):
    calls = []

    def builder(sys, kernel, h, lam_hat, settings):
        calls.append(lam_hat)
        return lam_hat

    def solve(prog, settings):
        gamma = None if prog > 8.0 else (prog - 3.0) ** 2 + 1.0
        return SimpleNamespace(gamma=gamma) if gamma is not None else None, None

    best, cert = search_lambda_hat(builder, scalar_system, zero_kernel, scalar_system.h, fast_settings,
                                   bounds=(1.0, 10.0), solve=solve)
    assert best == pytest.approx(3.0, abs=0.05)
    assert cert.gamma == pytest.approx(1.0, abs=1e-2)
    assert all(1.0 <= lam <= 10.0 for lam in calls)


def test_lambda_hat_search_bounds(scalar_system, zero_kernel, fast_settings):
    with pytest.raises(UsageError):
        search_lambda_hat(build_thm2, scalar_system, zero_kernel, scalar_system.h, fast_settings,
                          bounds=(2.0, 1.0))
