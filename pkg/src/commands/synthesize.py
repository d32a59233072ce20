import argparse
import logging
from dataclasses import replace
from pathlib import Path

from src.commands.analyze import load_description, resolve_lambda_hat, exit_code
from src.logic.analysis import (
    AnalysisCertificate, build_thm1, build_thm2, min_gamma, search_lambda_hat, save_certificate,
)
from src.logic.model import LpvDelaySystem, JumpKernel
from src.logic.synthesis import (
    build_thm3, build_thm4, solve_synthesis, recover_controller, close_loop, save_controller,
)
from src.ui.components import render_header, render_summary
from src.ui.widgets import add_numeric_args, settings_from_args, float_input, lambda_hat_input, theorem_label
from src.utils.constants import OUTPUT_DIR, EXIT_OK, EXIT_SOLVER
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    p = subparsers.add_parser("synthesize", help="state-feedback controller with memory")
    p.add_argument("description", type=Path)
    p.add_argument("--theorem", type=int, choices=(3, 4), default=3)
    p.add_argument("--h", type=float_input(0.0))
    p.add_argument("--lambda0", type=float_input(0.0))
    p.add_argument("--lambda-hat", type=lambda_hat_input, dest="lambda_hat")
    p.add_argument("--out", type=Path, help="controller file (YAML)")
    p.add_argument("--certificate", type=Path, help="closed-loop certificate file (YAML)")
    p.add_argument("--dump", type=Path)
    add_numeric_args(p)
    p.set_defaults(handler=run)


def recertify(closed: LpvDelaySystem, kernel: JumpKernel, settings: Settings,
              lambda_hat: float | None) -> AnalysisCertificate | None:
    """
    Независимая проверка замкнутой системы: Thm1 и, если задан λ̂, Thm2.
    Из допустимых берётся меньшее γ (при равенстве Thm1).
    """
    # степень A + BK выше степени исходных матриц
    settings = replace(settings, max_degree=max(settings.max_degree, closed.max_degree() + settings.degree))
    candidates = []
    cert, report = min_gamma(build_thm1(closed, kernel, closed.h, settings), settings)
    if cert is not None:
        candidates.append(cert)
    if lambda_hat is not None:
        cert, _ = min_gamma(build_thm2(closed, kernel, closed.h, lambda_hat, settings), settings)
        if cert is not None:
            candidates.append(cert)
    if not candidates:
        logger.warning("Closed loop %s could not be certified (%s)", closed.name, report.status)
        return None
    return min(candidates, key=lambda c: (c.gamma, c.theorem))


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    desc = load_description(args)
    sys, kernel, h = desc.system, desc.kernel, desc.system.h
    label = theorem_label(args.theorem)

    lambda_hat, note = None, None
    if args.theorem == 3:
        cert, report = solve_synthesis(build_thm3(sys, kernel, h, settings), settings, args.dump)
    else:
        lambda_hat, note = resolve_lambda_hat(args.lambda_hat, kernel, settings)
        if lambda_hat == "auto":
            lambda_hat, _ = search_lambda_hat(build_thm4, sys, kernel, h, settings, solve=solve_synthesis)
        cert, report = solve_synthesis(build_thm4(sys, kernel, h, lambda_hat, settings), settings, args.dump)

    render_header(f"{label} synthesis for {sys.name}")
    rows = [
        ("h", h),
        ("lambda_hat", lambda_hat),
        ("lambda_hat source", note),
        ("grid (rho x theta)", f"{settings.rho_points} x {settings.theta_points}"),
        ("status", report.status),
        ("gamma (synthesis)", cert.gamma if cert else None),
        ("residual", report.residual),
        ("solve time [s]", report.solve_time),
    ]
    if cert is None:
        render_summary(rows)
        return exit_code(report)

    ctrl = recover_controller(cert, settings.cond_cap)
    closed = close_loop(sys, ctrl)
    closed_cert = recertify(closed, kernel, settings, lambda_hat)
    rows.append(("cond(X)", ctrl.condition))
    if closed_cert is None:
        rows.append(("closed loop", "not certified, controller not written"))
        render_summary(rows)
        return EXIT_SOLVER

    rows.append(("gamma (closed loop)", closed_cert.gamma))
    rows.append(("certified by", theorem_label(closed_cert.theorem)))
    ctrl.provenance["closed_loop_gamma"] = float(closed_cert.gamma)

    out = args.out or OUTPUT_DIR / f"{sys.name}-{label.lower()}-controller.yaml"
    cert_out = args.certificate or OUTPUT_DIR / f"{sys.name}-{label.lower()}-closed-certificate.yaml"
    for path in (out, cert_out):
        path.parent.mkdir(parents=True, exist_ok=True)
    save_controller(ctrl, out)
    save_certificate(closed_cert, cert_out)
    rows += [("controller", str(out)), ("certificate", str(cert_out))]
    render_summary(rows)
    return EXIT_OK
