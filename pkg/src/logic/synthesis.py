import math
import yaml
import logging
import numpy as np
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Any, Mapping, Tuple

from src.logic.analysis import (
    resolve_degrees, new_program, grids, jump_term, require_pd, add_integral_bounds,
    poly_to_yaml, poly_from_yaml, check_lambda_hat,
)
from src.logic.model import LpvDelaySystem, JumpKernel, delta, epsilon
from src.logic.polymat import PolyMatrix, THETA, RHO
from src.logic.sdp import LmiProgram, AffineBlockExpr, SolveReport, NSD, PSD, single_block, lower_and_solve, OPTIMAL
from src.utils.constants import MAX_CONDITION
from src.utils.errors import UsageError, RecoveryError
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)


@dataclass
class SynthesisCertificate:
    theorem: int
    gamma: float
    values: Dict[str, PolyMatrix]
    h: float
    lambda_hat: float | None = None
    rho_points: int = 0
    theta_points: int = 0
    strict_margin: float = 0.0
    residual: float | None = None
    verify_residual: float | None = None
    system: str = ""

    @property
    def X(self) -> np.ndarray:
        return self.values["X"].coeff((0, 0))


@dataclass
class Controller:
    """u(t) = K(ρ) x(t) + K_d(ρ) x(t − τ(ρ))."""
    K: PolyMatrix
    K_d: PolyMatrix
    gamma: float
    condition: float
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_u(self) -> int:
        return self.K.rows

    def at(self, rho: float) -> Tuple[np.ndarray, np.ndarray]:
        point = {RHO: rho}
        return self.K.eval(point), self.K_d.eval(point)


# ------------------------------------------------------------------ builders

def _slack_analysis(sys: LpvDelaySystem,
                    kernel: JumpKernel,
                    h: float,
                    settings: Settings,
                    degrees: Mapping[str, int] | None,
                    lambda_hat: float | None,
                    ) -> LmiProgram:
    """
    Общая сборка условий с матрицей-связкой X. При lambda_hat = None
    Q, R постоянны и стоит δ(ρ)Q; иначе Q(ρ), R(ρ), 𝒬(ρ) и множитель √ε.
    """
    if h < 0:
        raise UsageError(f"h must be nonnegative, got {h}")
    dependent = lambda_hat is not None
    names = ("P", "Z", "Q", "R", "Qc") if dependent else ("P", "Z")
    deg = resolve_degrees(settings, degrees, names)
    n, n_w, n_z = sys.n, sys.n_w, sys.n_z
    prog = new_program(sys, kernel, settings, "Prop2" if dependent else "Prop1")

    P = prog.matvar("P", n, {RHO: deg["P"]})
    Z = prog.matvar("Z", n, {THETA: deg["Z"], RHO: deg["Z"]})
    if dependent:
        Q = prog.matvar("Q", n, {RHO: deg["Q"]})
        R = prog.matvar("R", n, {RHO: deg["R"]})
        Qc = prog.matvar("Qc", n, {RHO: deg["Qc"]})
    else:
        Q = prog.matvar("Q", n)
        R = prog.matvar("R", n)
    X = prog.matvar("X", (n, n), symmetric=False)
    g = prog.scalar("g", lower=0.0)

    Pr, Rr, Xr = P.ref(), R.ref(), X.ref()
    if dependent:
        scale = math.sqrt(epsilon(h, lambda_hat))
        memory = Q.ref() + Qc.ref().scale(h)
    else:
        scale = h
        memory = Q.ref().scale(delta(kernel, h))

    lmi = AffineBlockExpr([n, n, n, n_w, n_z, n, n])
    lmi[0, 0] = -Xr.sym()
    lmi[0, 1] = Pr + Xr.T @ sys.A
    lmi[0, 2] = Xr.T @ sys.A_d
    lmi[0, 3] = Xr.T @ sys.E
    lmi[0, 5] = Xr.T
    lmi[0, 6] = Rr.scale(scale)
    lmi[1, 1] = jump_term(kernel, P) - Pr + Z.ref() + memory - Rr
    lmi[1, 2] = Rr
    lmi[1, 4] = sys.C.T
    lmi[2, 2] = -Q.ref() - Rr
    lmi[2, 4] = sys.C_d.T
    lmi[3, 3] = -g.times(np.eye(n_w))
    lmi[3, 4] = sys.F.T
    lmi[4, 4] = -np.eye(n_z)
    lmi[5, 5] = -Pr
    lmi[5, 6] = -Rr.scale(scale)
    lmi[6, 6] = -Rr

    both, _, point = grids(sys.box, settings)
    prog.add_psd_on_grid(lmi, NSD, both, settings.strict_margin, label=f"{prog.name} LMI")
    prog.add_integral_zero(Z)
    if dependent:
        add_integral_bounds(prog, kernel, Q, R, Qc, lambda_hat, settings)
        for var in (P, Q, R, Qc):
            require_pd(prog, var, settings)
    else:
        require_pd(prog, P, settings)
        for var in (Q, R):
            prog.add_psd_on_grid(single_block(var.ref()), PSD, point, settings.pd_margin, label=f"{var.name} > 0")
    prog.minimize(g)
    prog.meta.update(theorem=0, h=float(h), lambda_hat=lambda_hat, system=sys.name)
    return prog


def build_prop1(sys: LpvDelaySystem, kernel: JumpKernel, h: float, settings: Settings,
                degrees: Mapping[str, int] | None = None) -> LmiProgram:
    return _slack_analysis(sys, kernel, h, settings, degrees, None)


def build_prop2(sys: LpvDelaySystem, kernel: JumpKernel, h: float, lambda_hat: float, settings: Settings,
                degrees: Mapping[str, int] | None = None) -> LmiProgram:
    check_lambda_hat(lambda_hat)
    return _slack_analysis(sys, kernel, h, settings, degrees, float(lambda_hat))


def _synthesis(sys: LpvDelaySystem,
               kernel: JumpKernel,
               h: float,
               settings: Settings,
               degrees: Mapping[str, int] | None,
               lambda_hat: float | None,
               ) -> LmiProgram:
    """
    Условия синтеза после линеаризующей замены: X̃ (постоянная, полная),
    P̃, Z̃, Q̃, R̃ и Y(ρ), Y_d(ρ) размера n_u×n.
    """
    if sys.n_u < 1:
        raise UsageError("synthesis needs at least one control input (n_u >= 1)")
    if h < 0:
        raise UsageError(f"h must be nonnegative, got {h}")
    dependent = lambda_hat is not None
    names = ("P", "Z", "Y", "Y_d") + (("Q", "R", "Qc") if dependent else ())
    deg = resolve_degrees(settings, degrees, names)
    n, n_u, n_w, n_z = sys.n, sys.n_u, sys.n_w, sys.n_z
    prog = new_program(sys, kernel, settings, "Thm4" if dependent else "Thm3")

    P = prog.matvar("P", n, {RHO: deg["P"]})
    Z = prog.matvar("Z", n, {THETA: deg["Z"], RHO: deg["Z"]})
    if dependent:
        Q = prog.matvar("Q", n, {RHO: deg["Q"]})
        R = prog.matvar("R", n, {RHO: deg["R"]})
        Qc = prog.matvar("Qc", n, {RHO: deg["Qc"]})
    else:
        Q = prog.matvar("Q", n)
        R = prog.matvar("R", n)
    X = prog.matvar("X", (n, n), symmetric=False)
    Y = prog.matvar("Y", (n_u, n), {RHO: deg["Y"]}, symmetric=False)
    Y_d = prog.matvar("Y_d", (n_u, n), {RHO: deg["Y_d"]}, symmetric=False)
    g = prog.scalar("g", lower=0.0)

    A, A_d, B, E, C, C_d, D, F = (getattr(sys, m) for m in ("A", "A_d", "B", "E", "C", "C_d", "D", "F"))
    Pr, Rr, Xr, Yr, Ydr = P.ref(), R.ref(), X.ref(), Y.ref(), Y_d.ref()
    if dependent:
        scale = math.sqrt(epsilon(h, lambda_hat))
        memory = Q.ref() + Qc.ref().scale(h)
    else:
        scale = h
        memory = Q.ref().scale(delta(kernel, h))

    lmi = AffineBlockExpr([n, n, n, n_w, n_z, n, n])
    lmi[0, 0] = -Xr.sym()
    lmi[0, 1] = Pr + A @ Xr + B @ Yr
    lmi[0, 2] = A_d @ Xr + B @ Ydr
    lmi[0, 3] = E
    lmi[0, 5] = Xr
    lmi[0, 6] = Rr.scale(scale)
    lmi[1, 1] = jump_term(kernel, P) - Pr + Z.ref() + memory - Rr
    lmi[1, 2] = Rr
    lmi[1, 4] = (C @ Xr + D @ Yr).T
    lmi[2, 2] = -Q.ref() - Rr
    lmi[2, 4] = (C_d @ Xr + D @ Ydr).T
    lmi[3, 3] = -g.times(np.eye(n_w))
    lmi[3, 4] = F.T
    lmi[4, 4] = -np.eye(n_z)
    lmi[5, 5] = -Pr
    lmi[5, 6] = -Rr.scale(scale)
    lmi[6, 6] = -Rr

    both, _, point = grids(sys.box, settings)
    prog.add_psd_on_grid(lmi, NSD, both, settings.strict_margin, label=f"{prog.name} LMI")
    prog.add_integral_zero(Z)
    if dependent:
        add_integral_bounds(prog, kernel, Q, R, Qc, lambda_hat, settings)
        for var in (P, Q, R, Qc):
            require_pd(prog, var, settings)
    else:
        require_pd(prog, P, settings)
        for var in (Q, R):
            prog.add_psd_on_grid(single_block(var.ref()), PSD, point, settings.pd_margin, label=f"{var.name} > 0")
    prog.minimize(g)
    prog.meta.update(theorem=4 if dependent else 3, h=float(h), lambda_hat=lambda_hat, system=sys.name)
    return prog


def build_thm3(sys: LpvDelaySystem, kernel: JumpKernel, h: float, settings: Settings,
               degrees: Mapping[str, int] | None = None) -> LmiProgram:
    return _synthesis(sys, kernel, h, settings, degrees, None)


def build_thm4(sys: LpvDelaySystem, kernel: JumpKernel, h: float, lambda_hat: float, settings: Settings,
               degrees: Mapping[str, int] | None = None) -> LmiProgram:
    check_lambda_hat(lambda_hat)
    return _synthesis(sys, kernel, h, settings, degrees, float(lambda_hat))


# -------------------------------------------------------------- extraction

def solve_synthesis(prog: LmiProgram, settings: Settings,
                    dump: str | Path | None = None) -> Tuple[SynthesisCertificate | None, SolveReport]:
    report = lower_and_solve(prog, settings, dump)
    if report.status != OPTIMAL:
        logger.info("%s: %s (%s)", prog.name, report.status, report.message)
        return None, report
    cert = SynthesisCertificate(
        theorem=int(prog.meta.get("theorem", 0)),
        gamma=math.sqrt(max(float(report.values["g"]), 0.0)),
        values={name: report.poly(name) for name in prog.variables if name != "g"},
        h=float(prog.meta.get("h", 0.0)),
        lambda_hat=prog.meta.get("lambda_hat"),
        rho_points=settings.rho_points,
        theta_points=settings.theta_points,
        strict_margin=settings.strict_margin,
        residual=report.residual,
        verify_residual=report.verify_residual,
        system=str(prog.meta.get("system", "")),
    )
    sym_x = cert.X + cert.X.T
    if np.linalg.eigvalsh(sym_x).min() <= 0:
        logger.warning("%s: Sym[X] is not positive definite at the returned point", prog.name)
    logger.info("%s: gamma = %.6g", prog.name, cert.gamma)
    return cert, report


def recover_controller(cert: SynthesisCertificate, cond_cap: float = MAX_CONDITION) -> Controller:
    """K(ρ) = Y(ρ) X̃⁻¹, K_d(ρ) = Y_d(ρ) X̃⁻¹ покоэффициентно."""
    X = cert.X
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] < 1e-8 * sv[0]:
        raise RecoveryError(f"X is numerically singular: singular values {sv[0]:.3g} .. {sv[-1]:.3g}")
    condition = float(sv[0] / sv[-1])
    if condition > cond_cap:
        raise RecoveryError(f"X condition number {condition:.3g} exceeds cap {cond_cap:.3g}")
    X_inv = PolyMatrix.constant(np.linalg.inv(X))
    K = cert.values["Y"] @ X_inv
    K_d = cert.values["Y_d"] @ X_inv
    if not (np.isfinite(K.max_abs_coeff()) and np.isfinite(K_d.max_abs_coeff())):
        raise RecoveryError("recovered gains are not finite")
    logger.info("Controller recovered from Thm%d (cond(X) = %.3g)", cert.theorem, condition)
    provenance = {
        "theorem": cert.theorem,
        "system": cert.system,
        "h": cert.h,
        "lambda_hat": cert.lambda_hat,
        "grids": {"rho": cert.rho_points, "theta": cert.theta_points},
        "strict_margin": cert.strict_margin,
    }
    return Controller(K, K_d, cert.gamma, condition, provenance)


def close_loop(sys: LpvDelaySystem, ctrl: Controller) -> LpvDelaySystem:
    """Подстановка u = K x + K_d x(t − τ); канал управления после этого пуст."""
    expected = (sys.n_u, sys.n)
    if ctrl.K.shape != expected or ctrl.K_d.shape != expected:
        raise UsageError(f"controller gains must be {expected}, got {ctrl.K.shape} and {ctrl.K_d.shape}")
    return replace(
        sys,
        A=sys.A + sys.B @ ctrl.K,
        A_d=sys.A_d + sys.B @ ctrl.K_d,
        C=sys.C + sys.D @ ctrl.K,
        C_d=sys.C_d + sys.D @ ctrl.K_d,
        B=PolyMatrix.zeros(sys.n, 0),
        D=PolyMatrix.zeros(sys.n_z, 0),
        n_u=0,
        name=f"{sys.name}-closed",
    )


def save_controller(ctrl: Controller, path: str | Path) -> None:
    data = {
        "gamma": float(ctrl.gamma),
        "condition": float(ctrl.condition),
        "K": poly_to_yaml(ctrl.K),
        "K_d": poly_to_yaml(ctrl.K_d),
        "provenance": ctrl.provenance,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(data, f, allow_unicode=True, sort_keys=False)


def load_controller(path: str | Path) -> Controller:
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return Controller(
        K=poly_from_yaml(data["K"]),
        K_d=poly_from_yaml(data["K_d"]),
        gamma=float(data["gamma"]),
        condition=float(data.get("condition", 1.0)),
        provenance=dict(data.get("provenance") or {}),
    )
