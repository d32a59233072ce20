import math
import yaml
import logging
import numpy as np
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Any, Callable, Mapping, Tuple
from scipy.optimize import minimize_scalar

from src.logic.model import LpvDelaySystem, JumpKernel, delta, epsilon
from src.logic.polymat import PolyMatrix, ParamBox, THETA, RHO
from src.logic.sdp import (
    LmiProgram, AffineBlockExpr, Affine, Grid, MatVar, SolveReport,
    NSD, PSD, single_block, lower_and_solve, OPTIMAL,
)
from src.utils.errors import UsageError
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)

_INFEASIBLE_PENALTY = 1e12


@dataclass
class AnalysisCertificate:
    """Сертификат 𝓛₂-усиления: γ и значения всех переменных программы."""
    theorem: int
    gamma: float
    values: Dict[str, PolyMatrix]
    h: float
    lambda_hat: float | None = None
    rho_points: int = 0
    theta_points: int = 0
    strict_margin: float = 0.0
    pd_margin: float = 0.0
    residual: float | None = None
    verify_residual: float | None = None
    system: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "system": self.system,
            "gamma": float(self.gamma),
            "h": float(self.h),
            "lambda_hat": None if self.lambda_hat is None else float(self.lambda_hat),
            "grids": {"rho": self.rho_points, "theta": self.theta_points},
            "margins": {"strict": self.strict_margin, "pd": self.pd_margin},
            "residual": _maybe_float(self.residual),
            "verify_residual": _maybe_float(self.verify_residual),
            "variables": {name: poly_to_yaml(p) for name, p in self.values.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AnalysisCertificate":
        return cls(
            theorem=int(data["theorem"]),
            gamma=float(data["gamma"]),
            values={name: poly_from_yaml(v) for name, v in data.get("variables", {}).items()},
            h=float(data["h"]),
            lambda_hat=data.get("lambda_hat"),
            rho_points=int(data.get("grids", {}).get("rho", 0)),
            theta_points=int(data.get("grids", {}).get("theta", 0)),
            strict_margin=float(data.get("margins", {}).get("strict", 0.0)),
            pd_margin=float(data.get("margins", {}).get("pd", 0.0)),
            residual=data.get("residual"),
            verify_residual=data.get("verify_residual"),
            system=str(data.get("system", "")),
        )


def _maybe_float(value: float | None) -> float | None:
    return None if value is None else float(value)


def poly_to_yaml(p: PolyMatrix) -> Dict[str, Any]:
    return {"shape": list(p.shape), "vars": sorted(p.vars), "coeffs": p.to_dict()}


def poly_from_yaml(data: Mapping[str, Any]) -> PolyMatrix:
    return PolyMatrix.from_dict(data["coeffs"], shape=tuple(data["shape"]), variables=data.get("vars"))


def save_certificate(cert: AnalysisCertificate, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(cert.to_dict(), f, allow_unicode=True, sort_keys=False)


def load_certificate(path: str | Path) -> AnalysisCertificate:
    with open(path, encoding="utf-8") as f:
        return AnalysisCertificate.from_dict(yaml.safe_load(f))


# ------------------------------------------------------------------ builders

def resolve_degrees(settings: Settings, degrees: Mapping[str, int] | None, names) -> Dict[str, int]:
    """Степени полиномиальных переменных: по умолчанию settings.degree."""
    out = {name: settings.degree for name in names}
    out.update(degrees or {})
    for name, d in out.items():
        if d < 0 or d > settings.max_degree:
            raise UsageError(f"degree of {name} must lie in [0, {settings.max_degree}], got {d}")
    return out


def new_program(sys: LpvDelaySystem, kernel: JumpKernel, settings: Settings, name: str) -> LmiProgram:
    if kernel.box != sys.box:
        raise UsageError("kernel box differs from the system box")
    return LmiProgram(sys.box, max_degree=settings.max_degree, name=name)


def grids(box: ParamBox, settings: Settings) -> Tuple[Grid, Grid, Grid]:
    """Сетки: по (θ, ρ), по ρ и одноточечная для постоянных ограничений."""
    return (
        Grid.over_both(box, settings.theta_points, settings.rho_points),
        Grid.over_rho(box, settings.rho_points),
        Grid(box),
    )


def jump_term(kernel: JumpKernel, P: MatVar) -> Affine:
    """μ(𝓑) λ(θ, ρ) [P(θ) − P(ρ)]."""
    weight = kernel.lam.scale(kernel.mu_B)
    return (P.at(RHO, THETA) - P.ref()).scale(weight)


def require_pd(prog: LmiProgram, var: MatVar, settings: Settings) -> None:
    rho_grid = Grid.over_rho(prog.box, settings.rho_points) if RHO in var.vars else Grid(prog.box)
    prog.add_psd_on_grid(single_block(var.ref()), PSD, rho_grid, settings.pd_margin, label=f"{var.name} > 0")


def add_integral_bounds(prog: LmiProgram, kernel: JumpKernel, Q: MatVar, R: MatVar, Qc: MatVar,
                        lambda_hat: float, settings: Settings) -> None:
    """
    ∫ λ(θ, ρ) Q(θ) dθ ⪯ 𝒬(ρ) и ∫ λ(θ, ρ) R(θ) dθ ⪯ λ̂ R(ρ) на ρ-сетке.
    """
    rho_grid = Grid.over_rho(prog.box, settings.rho_points)
    prog.add_psd_on_grid(
        single_block(Qc.ref() - Q.integral_against(kernel.lam, kernel.box)),
        PSD, rho_grid, 0.0, label="integral bound on Q",
    )
    prog.add_psd_on_grid(
        single_block(R.ref().scale(lambda_hat) - R.integral_against(kernel.lam, kernel.box)),
        PSD, rho_grid, 0.0, label="integral bound on R",
    )


def check_lambda_hat(lambda_hat: float) -> None:
    if not lambda_hat > 0:
        raise UsageError(f"lambda_hat must be positive, got {lambda_hat}")


def build_thm1(sys: LpvDelaySystem,
               kernel: JumpKernel,
               h: float,
               settings: Settings,
               degrees: Mapping[str, int] | None = None,
               ) -> LmiProgram:
    """
    Условие с постоянными Q, R и δ(ρ) = 1 + 2λ̄(ρ)h. Блоки размеров
    (n, n, n_w, n_z, n); ограничение ≺ 0 на сетке по (θ, ρ).
    """
    if h < 0:
        raise UsageError(f"h must be nonnegative, got {h}")
    deg = resolve_degrees(settings, degrees, ("P", "Z"))
    n, n_w, n_z = sys.n, sys.n_w, sys.n_z
    prog = new_program(sys, kernel, settings, "Thm1")

    P = prog.matvar("P", n, {RHO: deg["P"]})
    Z = prog.matvar("Z", n, {THETA: deg["Z"], RHO: deg["Z"]})
    Q = prog.matvar("Q", n)
    R = prog.matvar("R", n)
    g = prog.scalar("g", lower=0.0)

    A, A_d, E, C, C_d, F = sys.A, sys.A_d, sys.E, sys.C, sys.C_d, sys.F
    Pr, Rr = P.ref(), R.ref()

    lmi = AffineBlockExpr([n, n, n_w, n_z, n])
    lmi[0, 0] = (Pr @ A).sym() + jump_term(kernel, P) + Z.ref() + Q.ref().scale(delta(kernel, h)) - Rr
    lmi[0, 1] = Pr @ A_d + Rr
    lmi[0, 2] = Pr @ E
    lmi[0, 3] = C.T
    lmi[0, 4] = A.T.scale(h) @ Rr
    lmi[1, 1] = -Q.ref() - Rr
    lmi[1, 3] = C_d.T
    lmi[1, 4] = A_d.T.scale(h) @ Rr
    lmi[2, 2] = -g.times(np.eye(n_w))
    lmi[2, 3] = F.T
    lmi[2, 4] = E.T.scale(h) @ Rr
    lmi[3, 3] = -np.eye(n_z)
    lmi[4, 4] = -Rr

    both, _, point = grids(sys.box, settings)
    prog.add_psd_on_grid(lmi, NSD, both, settings.strict_margin, label="Thm1 LMI")
    prog.add_integral_zero(Z)
    require_pd(prog, P, settings)
    for var in (Q, R):
        prog.add_psd_on_grid(single_block(var.ref()), PSD, point, settings.pd_margin, label=f"{var.name} > 0")
    prog.minimize(g)
    prog.meta.update(theorem=1, h=float(h), lambda_hat=None, system=sys.name)
    return prog


def build_thm2(sys: LpvDelaySystem,
               kernel: JumpKernel,
               h: float,
               lambda_hat: float,
               settings: Settings,
               degrees: Mapping[str, int] | None = None,
               ) -> LmiProgram:
    """
    Условие с Q(ρ), R(ρ), 𝒬(ρ) и ε = h² + λ̂h³/2; столбец 5 масштабирован √ε.
    """
    check_lambda_hat(lambda_hat)
    if h < 0:
        raise UsageError(f"h must be nonnegative, got {h}")
    deg = resolve_degrees(settings, degrees, ("P", "Q", "R", "Qc", "Z"))
    n, n_w, n_z = sys.n, sys.n_w, sys.n_z
    prog = new_program(sys, kernel, settings, "Thm2")

    P = prog.matvar("P", n, {RHO: deg["P"]})
    Q = prog.matvar("Q", n, {RHO: deg["Q"]})
    R = prog.matvar("R", n, {RHO: deg["R"]})
    Qc = prog.matvar("Qc", n, {RHO: deg["Qc"]})
    Z = prog.matvar("Z", n, {THETA: deg["Z"], RHO: deg["Z"]})
    g = prog.scalar("g", lower=0.0)

    A, A_d, E, C, C_d, F = sys.A, sys.A_d, sys.E, sys.C, sys.C_d, sys.F
    Pr, Rr = P.ref(), R.ref()
    s = math.sqrt(epsilon(h, lambda_hat))

    lmi = AffineBlockExpr([n, n, n_w, n_z, n])
    lmi[0, 0] = (Pr @ A).sym() + jump_term(kernel, P) + Z.ref() + Q.ref() + Qc.ref().scale(h) - Rr
    lmi[0, 1] = Pr @ A_d + Rr
    lmi[0, 2] = Pr @ E
    lmi[0, 3] = C.T
    lmi[0, 4] = A.T.scale(s) @ Rr
    lmi[1, 1] = -Q.ref() - Rr
    lmi[1, 3] = C_d.T
    lmi[1, 4] = A_d.T.scale(s) @ Rr
    lmi[2, 2] = -g.times(np.eye(n_w))
    lmi[2, 3] = F.T
    lmi[2, 4] = E.T.scale(s) @ Rr
    lmi[3, 3] = -np.eye(n_z)
    lmi[4, 4] = -Rr

    both, _, _ = grids(sys.box, settings)
    prog.add_psd_on_grid(lmi, NSD, both, settings.strict_margin, label="Thm2 LMI")
    prog.add_integral_zero(Z)
    add_integral_bounds(prog, kernel, Q, R, Qc, lambda_hat, settings)
    for var in (P, Q, R, Qc):
        require_pd(prog, var, settings)
    prog.minimize(g)
    prog.meta.update(theorem=2, h=float(h), lambda_hat=float(lambda_hat), system=sys.name)
    return prog


# ----------------------------------------------------------------- solving

def min_gamma(prog: LmiProgram, settings: Settings,
              dump: str | Path | None = None) -> Tuple[AnalysisCertificate | None, SolveReport]:
    """
    Минимизирует g = γ² и возвращает сертификат с γ = √g. При недопустимости
    или сбое решателя сертификата нет, отчёт объясняет причину.
    """
    report = lower_and_solve(prog, settings, dump)
    if report.status != OPTIMAL:
        logger.info("%s: %s (%s)", prog.name, report.status, report.message)
        return None, report
    g = max(float(report.values["g"]), 0.0)
    cert = AnalysisCertificate(
        theorem=int(prog.meta.get("theorem", 0)),
        gamma=math.sqrt(g),
        values={name: report.poly(name) for name in prog.variables if name != "g"},
        h=float(prog.meta.get("h", 0.0)),
        lambda_hat=prog.meta.get("lambda_hat"),
        rho_points=settings.rho_points,
        theta_points=settings.theta_points,
        strict_margin=settings.strict_margin,
        pd_margin=settings.pd_margin,
        residual=report.residual,
        verify_residual=report.verify_residual,
        system=str(prog.meta.get("system", "")),
    )
    logger.info("%s: gamma = %.6g (residual %.3g, verification %.3g)",
                prog.name, cert.gamma, report.residual, report.verify_residual)
    return cert, report


def check_feasible(prog: LmiProgram, gamma: float, settings: Settings) -> SolveReport:
    """Фиксирует g = γ² (на месте) и решает задачу допустимости."""
    prog.fix_scalar("g", gamma ** 2)
    return lower_and_solve(prog, settings)


def default_lambda_hat(kernel: JumpKernel, settings: Settings) -> float:
    """λ̂ = sup λ̄ + δ_λ; для непостоянных ядер это лишь допустимая стартовая точка."""
    if not kernel.is_constant:
        logger.warning("Kernel is not constant; lambda_hat defaults to sup lambda_bar + %g",
                       settings.lambda_hat_delta)
    return max(kernel.lambda_bar_sup(), 0.0) + settings.lambda_hat_delta


Builder = Callable[..., LmiProgram]


def search_lambda_hat(builder: Builder,
                      sys: LpvDelaySystem,
                      kernel: JumpKernel,
                      h: float,
                      settings: Settings,
                      bounds: Tuple[float, float] | None = None,
                      solve: Callable[[LmiProgram, Settings], Tuple[Any, SolveReport]] = min_gamma,
                      xatol: float = 1e-2,
                      ) -> Tuple[float, Any]:
    """
    Внешний поиск λ̂ (метод Брента на отрезке), минимизирующий γ. Недопустимые
    точки получают штраф. Возвращает лучший λ̂ и его сертификат (или None).
    """
    if bounds is None:
        lo = max(kernel.lambda_bar_sup(), 0.0) + settings.lambda_hat_delta
        bounds = (lo, 4.0 * lo + 1.0)
    if not 0 < bounds[0] < bounds[1]:
        raise UsageError(f"lambda_hat bounds must satisfy 0 < lo < hi, got {bounds}")

    results: Dict[float, Any] = {}

    def objective(lam_hat: float) -> float:
        cert, _ = solve(builder(sys, kernel, h, lam_hat, settings), settings)
        results[lam_hat] = cert
        gamma = getattr(cert, "gamma", None)
        logger.debug("lambda_hat=%.6g -> gamma=%s", lam_hat, gamma)
        return _INFEASIBLE_PENALTY if gamma is None else gamma

    res = minimize_scalar(objective, bounds=bounds, method="bounded", options={"xatol": xatol})
    best = min(results, key=lambda k: objective_value(results[k]))
    logger.info("lambda_hat search: best %.6g after %d evaluations", best, res.nfev)
    return best, results[best]


def objective_value(cert: Any) -> float:
    gamma = getattr(cert, "gamma", None)
    return _INFEASIBLE_PENALTY if gamma is None else gamma
