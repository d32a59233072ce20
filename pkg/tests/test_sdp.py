import logging
import dataclasses

import pytest
import numpy as np

from src.logic.analysis import build_thm1, min_gamma
from src.logic.model import LpvDelaySystem, JumpKernel
from src.logic.polymat import PolyMatrix, ParamBox, THETA, RHO
from src.logic.sdp import (
    Grid, LmiProgram, AffineBlockExpr, PSD, NSD, OPTIMAL, INFEASIBLE,
    lower, lower_and_solve, svec_indices, dump_triplets, single_block,
)
from src.utils.errors import UsageError
from src.utils.helpers import Settings


def test_grid_sizes_and_refinement(box):
    g = Grid.over_both(box, 5, 7)
    assert len(g) == 35
    assert g.vars == frozenset({THETA, RHO})
    fine = g.refined(4)
    assert (fine.theta, fine.rho) == (17, 25)
    assert len(Grid(box)) == 1
    assert Grid(box).points() == {}


def test_refined_grid_contains_training_points(box):
    coarse = Grid.over_rho(box, 6).points()[RHO]
    fine = Grid.over_rho(box, 6).refined(3).points()[RHO]
    assert np.all(np.isin(np.round(coarse, 12), np.round(fine, 12)))


def test_grid_rejects_single_point(box):
    with pytest.raises(UsageError):
        Grid.over_rho(box, 1)


def test_svec_preserves_frobenius_norm(rng):
    M = rng.normal(size=(4, 4))
    M = M + M.T
    ii, jj, scale = svec_indices(4)
    assert np.linalg.norm(M[ii, jj] * scale) == pytest.approx(np.linalg.norm(M))


def _lower_bound_program(box):
    """min g при [[g, 1], [1, 1]] ⪰ 0, т.е. g ≥ 1."""
    prog = LmiProgram(box, name="toy")
    g = prog.scalar("g", lower=0.0)
    expr = AffineBlockExpr([1, 1])
    expr[0, 0] = g.times(np.eye(1))
    expr[0, 1] = np.eye(1)
    expr[1, 1] = np.eye(1)
    prog.add_psd_on_grid(expr, PSD, Grid(box), label="schur")
    prog.minimize(g)
    return prog


def test_small_lmi_solves(box, fast_settings):
    report = lower_and_solve(_lower_bound_program(box), fast_settings)
    assert report.status == OPTIMAL
    assert report.values["g"] == pytest.approx(1.0, abs=1e-5)
    assert report.residual <= fast_settings.residual_tol


def test_infeasible_program(box, fast_settings):
    prog = LmiProgram(box, name="empty")
    g = prog.scalar("g", lower=0.0)
    # g + 1 ≤ 0 при g ≥ 0
    expr = AffineBlockExpr([1, 1])
    expr[0, 0] = g.times(np.eye(1)) + np.eye(1)
    expr[1, 1] = -np.eye(1)
    prog.add_psd_on_grid(expr, NSD, Grid(box))
    prog.minimize(g)
    assert lower_and_solve(prog, fast_settings).status == INFEASIBLE


def test_lowered_cone_layout(box):
    prog = LmiProgram(box)
    g = prog.scalar("g", lower=0.0)
    P = prog.matvar("P", 2, {RHO: 1})
    Z = prog.matvar("Z", 2, {THETA: 1, RHO: 1})
    expr = AffineBlockExpr([2])
    expr[0, 0] = P.ref() + Z.ref() - g.times(np.eye(2))
    prog.add_psd_on_grid(expr, PSD, Grid.over_both(box, 3, 5))
    equalities = prog.add_integral_zero(Z)
    prog.minimize(g)

    lowered = lower(prog)
    # Z: 3 свободных элемента × 2 степени по ρ
    assert equalities == 6
    assert (lowered.zero, lowered.nonneg) == (6, 1)
    assert lowered.psd == (2,) * 15
    assert lowered.shape == (6 + 1 + 15 * 3, prog.nx)
    assert prog.nx == 1 + 3 * 2 + 3 * 4


def test_integral_zero_coefficients(box):
    prog = LmiProgram(box)
    Z = prog.matvar("Z", 1, {THETA: 1, RHO: 1})
    prog.add_integral_zero(Z)
    assert sorted(prog.equalities[0].coeffs.values()) == [0.5, 1.0]


def test_integral_against_kernel(box):
    prog = LmiProgram(box)
    V = prog.matvar("V", 1, {RHO: 1})
    integral = V.integral_against(PolyMatrix.constant([[1.0]]), box)
    value = integral.value({"V": PolyMatrix.from_rho_coeffs({0: [[2.0]], 1: [[4.0]]}, (1, 1))})
    assert RHO not in integral.free_vars()
    # ∫ (2 + 4θ) dθ на [0, 1]
    assert value.eval({RHO: 0.3})[0, 0] == pytest.approx(4.0)


def test_renamed_variable_reads_theta(box):
    prog = LmiProgram(box)
    P = prog.matvar("P", 1, {RHO: 1})
    shifted = P.at(RHO, THETA)
    assert shifted.free_vars() == frozenset({THETA})
    value = shifted.value({"P": PolyMatrix.from_rho_coeffs({0: [[1.0]], 1: [[3.0]]}, (1, 1))})
    assert value.eval({THETA: 0.5})[0, 0] == pytest.approx(2.5)


def test_known_matrix_times_variable(box):
    prog = LmiProgram(box)
    X = prog.matvar("X", (2, 2), symmetric=False)
    A = PolyMatrix.constant([[1.0, 2.0], [0.0, 1.0]])
    expr = A @ X.ref()
    X_val = PolyMatrix.constant([[1.0, -1.0], [3.0, 0.5]])
    expected = A.eval({}) @ X_val.eval({})
    np.testing.assert_allclose(expr.value({"X": X_val}).eval({}), expected)
    np.testing.assert_allclose(expr.T.value({"X": X_val}).eval({}), expected.T)


def test_block_expression_guards(box):
    expr = AffineBlockExpr([1, 2])
    with pytest.raises(UsageError):
        expr[1, 0] = np.zeros((2, 1))
    with pytest.raises(UsageError):
        expr[0, 1] = np.zeros((2, 1))


def test_asymmetric_block_rejected(box):
    prog = LmiProgram(box)
    g = prog.scalar("g")
    expr = AffineBlockExpr([2])
    expr[0, 0] = g.times(np.array([[1.0, 1.0], [0.0, 1.0]]))
    prog.add_psd_on_grid(expr, PSD, Grid(box))
    with pytest.raises(UsageError):
        lower(prog)


def test_degree_cap(box):
    prog = LmiProgram(box, max_degree=1)
    P = prog.matvar("P", 1, {RHO: 1})
    expr = single_block(P.ref() * PolyMatrix.from_rho_coeffs({1: [[1.0]]}, (1, 1)))
    with pytest.raises(UsageError):
        prog.add_psd_on_grid(expr, PSD, Grid.over_rho(box, 3))


def test_grid_must_cover_free_variables(box):
    prog = LmiProgram(box)
    P = prog.matvar("P", 1, {RHO: 1})
    with pytest.raises(UsageError):
        prog.add_psd_on_grid(single_block(P.ref()), PSD, Grid(box))


def test_foreign_variable_rejected(box):
    other = LmiProgram(box, name="other")
    P = other.matvar("P", 1)
    prog = LmiProgram(box)
    with pytest.raises(UsageError):
        prog.add_psd_on_grid(single_block(P.ref()), PSD, Grid(box))


def test_grid_box_must_match(box):
    prog = LmiProgram(box)
    P = prog.matvar("P", 1)
    with pytest.raises(UsageError):
        prog.add_psd_on_grid(single_block(P.ref()), PSD, Grid(ParamBox(0.0, 2.0)))


def test_violation_between_grid_points_is_reported(box, fast_settings, caplog):
    prog = LmiProgram(box, name="gap")
    g = prog.scalar("g", lower=0.0)
    # 1 − 8ρ(1 − ρ): единица в узлах 0 и 1, −1 в середине
    q = PolyMatrix.from_rho_coeffs({0: [[1.0]], 1: [[-8.0]], 2: [[8.0]]}, (1, 1))
    expr = AffineBlockExpr([1, 1])
    expr[0, 0] = q
    expr[1, 1] = q
    prog.add_psd_on_grid(expr, PSD, Grid.over_rho(box, 2), label="gap")
    prog.minimize(g)
    with caplog.at_level(logging.WARNING):
        report = lower_and_solve(prog, fast_settings)
    assert report.status == OPTIMAL
    assert report.residual < 0
    assert report.verify_residual == pytest.approx(1.0, abs=1e-6)
    assert "between grid points" in caplog.text


def test_dump_triplets(box, tmp_path):
    path = tmp_path / "problem.txt"
    dump_triplets(lower(_lower_bound_program(box)), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "zero 0 nonneg 1 psd 2"
    assert lines[1] == "rows 4 cols 1"
    assert "c 0 1" in lines


def _scheduled_scalar(box) -> LpvDelaySystem:
    """ẋ = (−2 + 1.5ρ)x + 0.3x(t − τ) + w, z = x."""
    sys = LpvDelaySystem.from_constant(box, 0.1, name="scheduled", A=[[-2.0]], A_d=[[0.3]], E=[[1.0]], C=[[1.0]])
    return dataclasses.replace(sys, A=PolyMatrix.from_rho_coeffs({0: [[-2.0]], 1: [[1.5]]}, (1, 1)))


def _grid_settings(points: int) -> Settings:
    return Settings.from_preset("fast").update(rho_points=points, theta_points=points, workers=1, use_cache=False)


def test_denser_grid_never_lowers_objective(box):
    sys = _scheduled_scalar(box)
    kernel = JumpKernel.constant(1.0, box)
    coarse_settings, fine_settings = _grid_settings(5), _grid_settings(9)
    # сетка из 9 точек содержит все узлы сетки из 5
    coarse_pts = Grid.over_rho(box, 5).points()[RHO]
    assert np.all(np.isin(np.round(coarse_pts, 12), np.round(Grid.over_rho(box, 9).points()[RHO], 12)))

    coarse, _ = min_gamma(build_thm1(sys, kernel, sys.h, coarse_settings), coarse_settings)
    fine, _ = min_gamma(build_thm1(sys, kernel, sys.h, fine_settings), fine_settings)
    assert coarse is not None and fine is not None
    assert fine.gamma ** 2 >= coarse.gamma ** 2 - 1e-6


def test_solved_z_integrates_to_zero(box, fast_settings):
    sys = _scheduled_scalar(box)
    cert, _ = min_gamma(build_thm1(sys, JumpKernel.constant(1.0, box), sys.h, fast_settings), fast_settings)
    assert cert is not None
    integral = cert.values["Z"].integrate_theta(box)
    for rho0 in np.random.default_rng(5).uniform(box.lo, box.hi, 100):
        assert np.max(np.abs(integral.eval({RHO: rho0}))) <= 1e-7
