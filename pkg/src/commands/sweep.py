import argparse
import logging
import numpy as np
import pandas as pd
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

from src.commands.analyze import load_description
from src.logic.analysis import build_thm1, build_thm2, min_gamma, default_lambda_hat, search_lambda_hat
from src.logic.data_loader import SystemDescription
from src.logic.exporter import sweep_frame, write_csv, SweepExporter
from src.logic.model import LpvDelaySystem, JumpKernel
from src.logic.synthesis import build_thm3, build_thm4, solve_synthesis
from src.ui.components import render_header, render_table
from src.ui.widgets import (
    add_numeric_args, settings_from_args, int_input, range_input, theorem_list, lambda_hat_input,
)
from src.utils.cache_utils import (
    generate_sweep_hash, get_or_compute_point, load_memory_point, load_disk_point,
    save_memory_point, save_disk_point,
)
from src.utils.constants import OUTPUT_DIR, EXIT_OK
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)

VARY_CHOICES = ("h", "lambda0")


def add_parser(subparsers) -> None:
    p = subparsers.add_parser("sweep", help="minimum gamma against h or lambda0")
    p.add_argument("description", type=Path)
    p.add_argument("--vary", choices=VARY_CHOICES, required=True)
    p.add_argument("--range", type=range_input, required=True, dest="span", help="lo:hi")
    p.add_argument("--points", type=int_input(1), default=10)
    p.add_argument("--theorems", type=theorem_list((1, 2, 3, 4)), default=[1, 2])
    p.add_argument("--lambda-hat", type=lambda_hat_input, dest="lambda_hat",
                   help="fixed lambda_hat for theorems 2 and 4; default per point")
    p.add_argument("--out", type=Path, help="CSV output")
    p.add_argument("--xlsx", type=Path, help="additional XLSX report")
    p.add_argument("--no-cache", action="store_true", dest="no_cache")
    add_numeric_args(p)
    p.set_defaults(handler=run)


def sweep_values(span: Tuple[float, float], points: int) -> np.ndarray:
    lo, hi = span
    if hi == lo or points == 1:
        return np.array([lo])
    return np.linspace(lo, hi, points)


def apply_value(desc: SystemDescription, vary: str, value: float) -> SystemDescription:
    return desc.with_h(value) if vary == "h" else desc.with_lambda0(value)


def solve_point(task: Tuple[int, LpvDelaySystem, JumpKernel, Settings, Any]) -> Dict[str, Any]:
    """
    Решает одну точку перебора. Выполняется в рабочем процессе, поэтому
    возвращает только сериализуемый словарь.
    """
    theorem, sys, kernel, settings, lambda_hat = task
    h = sys.h
    solve = min_gamma if theorem in (1, 2) else solve_synthesis
    if theorem in (1, 3):
        builder = build_thm1 if theorem == 1 else build_thm3
        cert, report = solve(builder(sys, kernel, h, settings), settings)
        lam = None
    else:
        builder = build_thm2 if theorem == 2 else build_thm4
        lam = default_lambda_hat(kernel, settings) if lambda_hat is None else lambda_hat
        if lam == "auto":
            lam, cert = search_lambda_hat(builder, sys, kernel, h, settings, solve=solve)
            report = None
        else:
            cert, report = solve(builder(sys, kernel, h, lam, settings), settings)
    status = report.status if report is not None else ("optimal" if cert else "infeasible")
    return {
        "status": status,
        "gamma": None if cert is None else float(cert.gamma),
        "lambda_hat": None if lam is None else float(lam),
    }


def run_sweep(desc: SystemDescription,
              vary: str,
              values: Sequence[float],
              theorems: Sequence[int],
              settings: Settings,
              lambda_hat: Any = None,
              ) -> pd.DataFrame:
    """
    Перебирает точки (значение, теорема). Решённые точки берутся из кэша,
    остальные раздаются пулу процессов; строки собираются в порядке перебора.
    """
    results: Dict[int, List[Dict[str, Any] | None]] = {thm: [None] * len(values) for thm in theorems}
    pending: List[Tuple[int, int, str, tuple]] = []
    cache_settings = settings.as_dict()
    for i, value in enumerate(values):
        point = apply_value(desc, vary, float(value))
        for thm in theorems:
            extra = {"lambda_hat": lambda_hat, "h": point.system.h, "kernel": point.kernel.lam.to_dict()}
            key = generate_sweep_hash(desc.source, thm, vary, value, cache_settings, extra)
            pending.append((thm, i, key, (thm, point.system, point.kernel, settings, lambda_hat)))

    if settings.workers <= 1 or len(pending) == 1:
        for thm, i, key, task in pending:
            results[thm][i] = get_or_compute_point(key, lambda: solve_point(task), settings.use_cache)
            _log_done(vary, values[i], thm, results[thm][i])
    else:
        submit = []
        for thm, i, key, task in pending:
            cached = (load_memory_point(key) or load_disk_point(key)) if settings.use_cache else None
            if cached is not None:
                results[thm][i] = cached
            else:
                submit.append((thm, i, key, task))
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            futures = {}
            for thm, i, key, task in submit:
                logger.info("[SUBMIT] %s=%.6g Thm%d", vary, values[i], thm)
                futures[pool.submit(solve_point, task)] = (thm, i, key)
            for fut in as_completed(futures):
                thm, i, key = futures[fut]
                result = fut.result()
                results[thm][i] = result
                if settings.use_cache and result["status"] in ("optimal", "infeasible"):
                    save_memory_point(key, result)
                    save_disk_point(key, result)
                _log_done(vary, values[i], thm, result)

    return sweep_frame(vary, values, theorems, results)


def _log_done(vary: str, value: float, thm: int, result: Dict[str, Any]) -> None:
    gamma = result.get("gamma")
    logger.info("[DONE] %s=%.6g Thm%d: %s%s", vary, value, thm, result["status"],
                "" if gamma is None else f", gamma={gamma:.6g}")


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    desc = load_description(args)
    if args.vary == "lambda0" and not desc.kernel.is_constant:
        logger.warning("Kernel of %s is not constant; lambda0 sweep replaces it by constants", desc.system.name)
    values = sweep_values(args.span, args.points)

    frame = run_sweep(desc, args.vary, values, args.theorems, settings, args.lambda_hat)
    out = args.out or OUTPUT_DIR / f"{desc.system.name}-sweep-{args.vary}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(frame, out)
    if args.xlsx:
        SweepExporter(args.vary, args.theorems).write(frame, args.xlsx, settings.as_dict())

    render_header(f"Sweep of {args.vary} for {desc.system.name}")
    render_table(frame)
    return EXIT_OK
