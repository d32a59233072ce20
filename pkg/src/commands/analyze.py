import argparse
import logging
from pathlib import Path
from typing import Tuple

from src.logic.analysis import (
    build_thm1, build_thm2, min_gamma, default_lambda_hat, search_lambda_hat, save_certificate,
)
from src.logic.data_loader import SystemLoader, SystemDescription
from src.logic.model import JumpKernel
from src.logic.sdp import OPTIMAL, INFEASIBLE, SolveReport
from src.ui.components import render_header, render_summary
from src.ui.widgets import add_numeric_args, settings_from_args, float_input, lambda_hat_input, theorem_label
from src.utils.constants import OUTPUT_DIR, EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    p = subparsers.add_parser("analyze", help="minimum L2 gain of the open-loop system")
    p.add_argument("description", type=Path)
    p.add_argument("--theorem", type=int, choices=(1, 2), default=1)
    p.add_argument("--h", type=float_input(0.0), help="override the delay bound from the file")
    p.add_argument("--lambda0", type=float_input(0.0), help="replace the kernel by a constant intensity")
    p.add_argument("--lambda-hat", type=lambda_hat_input, dest="lambda_hat",
                   help="number or 'auto'; default sup lambda_bar + 0.005")
    p.add_argument("--out", type=Path, help="certificate file (YAML)")
    p.add_argument("--dump", type=Path, help="write the lowered conic problem as sparse triplets")
    add_numeric_args(p)
    p.set_defaults(handler=run)


def load_description(args: argparse.Namespace) -> SystemDescription:
    desc = SystemLoader(args.description).load()
    if getattr(args, "h", None) is not None:
        desc = desc.with_h(args.h)
    if getattr(args, "lambda0", None) is not None:
        if not desc.kernel.is_constant:
            logger.warning("Kernel of %s is not constant; --lambda0 replaces it by a constant", desc.system.name)
        desc = desc.with_lambda0(args.lambda0)
    return desc


def resolve_lambda_hat(value, kernel: JumpKernel, settings: Settings) -> Tuple[float | str, str]:
    """Возвращает λ̂ (или 'auto') и пометку для сводки."""
    if value is None:
        lam = default_lambda_hat(kernel, settings)
        return lam, f"default sup lambda_bar + {settings.lambda_hat_delta:g}"
    if value == "auto":
        return "auto", "bounded search"
    return float(value), "given"


def exit_code(report: SolveReport) -> int:
    if report.status == OPTIMAL:
        return EXIT_OK
    if report.status == INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    desc = load_description(args)
    sys, kernel, h = desc.system, desc.kernel, desc.system.h
    label = theorem_label(args.theorem)

    note = None
    lambda_hat = None
    if args.theorem == 1:
        cert, report = min_gamma(build_thm1(sys, kernel, h, settings), settings, args.dump)
    else:
        lambda_hat, note = resolve_lambda_hat(args.lambda_hat, kernel, settings)
        if lambda_hat == "auto":
            lambda_hat, cert = search_lambda_hat(build_thm2, sys, kernel, h, settings)
            # повторное решение в лучшей точке даёт полный отчёт
            cert, report = min_gamma(build_thm2(sys, kernel, h, lambda_hat, settings), settings, args.dump)
        else:
            cert, report = min_gamma(build_thm2(sys, kernel, h, lambda_hat, settings), settings, args.dump)

    render_header(f"{label} analysis of {sys.name}")
    rows = [
        ("h", h),
        ("lambda_hat", lambda_hat),
        ("lambda_hat source", note),
        ("grid (rho x theta)", f"{settings.rho_points} x {settings.theta_points}"),
        ("status", report.status),
        ("gamma", cert.gamma if cert else None),
        ("residual", report.residual),
        ("verification residual", report.verify_residual),
        ("solve time [s]", report.solve_time),
    ]
    if report.message:
        rows.append(("note", report.message))

    if cert is not None:
        out = args.out or OUTPUT_DIR / f"{sys.name}-{label.lower()}-certificate.yaml"
        out.parent.mkdir(parents=True, exist_ok=True)
        save_certificate(cert, out)
        rows.append(("certificate", str(out)))
    render_summary(rows)
    return exit_code(report)
