"""
Воспроизведение численных примеров: перебор γ по h и по λ₀ для анализа,
перебор λ₀ для синтеза, моделирование без управления и с регулятором.

    python -m src.utils.experiments gamma_h synthesis_lambda0 --preset fast
"""
import sys
import argparse
import logging
import numpy as np
from pathlib import Path
from typing import Callable, Dict, Sequence

from src.commands.sweep import run_sweep
from src.commands.synthesize import recertify
from src.logic.data_loader import SystemLoader, SystemDescription
from src.logic.exporter import write_csv
from src.logic.model import InitialHistory
from src.logic.sim import SimConfig, integrate, trajectory_frame, mc_mean_square, mean_square_frame
from src.logic.synthesis import build_thm3, solve_synthesis, recover_controller, close_loop, save_controller
from src.utils.constants import SYSTEMS_DIR, OUTPUT_DIR, preset_map
from src.utils.errors import LpvJumpError
from src.utils.helpers import Settings

logger = logging.getLogger(__name__)

ANALYSIS_FILE = SYSTEMS_DIR / "example_analysis.yaml"
SYNTHESIS_FILE = SYSTEMS_DIR / "example_synthesis.yaml"

MC_RUNS = 100
HORIZON = 20.0
SEED = 7


def _load(path: Path) -> SystemDescription:
    return SystemLoader(path).load()


def gamma_h(settings: Settings, out_dir: Path) -> Path:
    """γ от h при λ₀ = 10, Thm1 и Thm2."""
    desc = _load(ANALYSIS_FILE).with_lambda0(10.0)
    frame = run_sweep(desc, "h", np.linspace(0.01, 0.25, 10), [1, 2], settings)
    out = out_dir / "analysis_gamma_vs_h.csv"
    write_csv(frame, out)
    return out


def gamma_lambda0(settings: Settings, out_dir: Path) -> Path:
    """γ от λ₀ при h = 0.15, Thm1 и Thm2."""
    desc = _load(ANALYSIS_FILE).with_h(0.15)
    frame = run_sweep(desc, "lambda0", np.linspace(1.0, 30.0, 30), [1, 2], settings)
    out = out_dir / "analysis_gamma_vs_lambda0.csv"
    write_csv(frame, out)
    return out


def synthesis_lambda0(settings: Settings, out_dir: Path) -> Path:
    """γ от λ₀ при h = 0.5, Thm3 и Thm4; Thm4 теряет допустимость при больших λ₀."""
    desc = _load(SYNTHESIS_FILE)
    frame = run_sweep(desc, "lambda0", np.arange(1.0, 31.0), [3, 4], settings)
    out = out_dir / "synthesis_gamma_vs_lambda0.csv"
    write_csv(frame, out)
    return out


def _sim_config(desc: SystemDescription, settings: Settings) -> SimConfig:
    return SimConfig(dt=desc.system.h / 20, horizon=HORIZON, seed=SEED, runs=MC_RUNS,
                     w_signal=desc.w_signal, workers=settings.workers)


def openloop(settings: Settings, out_dir: Path) -> Path:
    """Одна траектория и среднеквадратичная оценка без управления."""
    desc = _load(SYNTHESIS_FILE)
    cfg = _sim_config(desc, settings)
    phi = desc.initial or InitialHistory.zeros(desc.system.n)
    traj = integrate(desc.system, desc.delay, phi, desc.kernel, cfg, run=0)
    write_csv(trajectory_frame(traj), out_dir / "openloop_trajectory.csv")
    result = mc_mean_square(desc.system, desc.delay, phi, desc.kernel, cfg)
    out = out_dir / "openloop_mean_square.csv"
    write_csv(mean_square_frame(result), out)
    logger.info("[DONE] open loop: %d of %d runs diverged", result.diverged_runs, result.runs)
    return out


def closedloop(settings: Settings, out_dir: Path) -> Path:
    """Thm3 → регулятор → проверка Thm1 → моделирование замкнутой системы."""
    desc = _load(SYNTHESIS_FILE)
    sys_, kernel = desc.system, desc.kernel
    cert, report = solve_synthesis(build_thm3(sys_, kernel, sys_.h, settings), settings)
    if cert is None:
        raise LpvJumpError(f"Thm3 synthesis failed: {report.status}")
    ctrl = recover_controller(cert, settings.cond_cap)
    save_controller(ctrl, out_dir / "closedloop_controller.yaml")
    analysis = recertify(close_loop(sys_, ctrl), kernel, settings, None)
    logger.info("[DONE] synthesis gamma %.6g, closed-loop analysis gamma %s",
                cert.gamma, "n/a" if analysis is None else f"{analysis.gamma:.6g}")

    cfg = _sim_config(desc, settings)
    phi = desc.initial or InitialHistory.zeros(sys_.n)
    traj = integrate(sys_, desc.delay, phi, kernel, cfg, ctrl, run=0)
    write_csv(trajectory_frame(traj), out_dir / "closedloop_trajectory.csv")
    result = mc_mean_square(sys_, desc.delay, phi, kernel, cfg, ctrl)
    out = out_dir / "closedloop_mean_square.csv"
    write_csv(mean_square_frame(result), out)
    logger.info("[DONE] closed loop: mean-square decay %s", "yes" if result.decayed else "no")
    return out


EXPERIMENTS: Dict[str, Callable[[Settings, Path], Path]] = {
    "gamma_h": gamma_h,
    "gamma_lambda0": gamma_lambda0,
    "synthesis_lambda0": synthesis_lambda0,
    "openloop": openloop,
    "closedloop": closedloop,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="experiments")
    parser.add_argument("experiments", nargs="*", help=f"any of {', '.join(EXPERIMENTS)}; default all")
    parser.add_argument("--preset", choices=sorted(preset_map), default="full")
    parser.add_argument("--out", type=Path, default=OUTPUT_DIR / "experiments")
    parser.add_argument("--workers", type=int)
    args = parser.parse_args(argv)
    unknown = sorted(set(args.experiments) - set(EXPERIMENTS))
    if unknown:
        parser.error(f"unknown experiments: {', '.join(unknown)}")
    experiments = args.experiments or list(EXPERIMENTS)
    logging.basicConfig(level=logging.INFO, format="[%(levelname)s] %(name)s: %(message)s")

    settings = Settings.from_preset(args.preset).update(workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)

    failed = 0
    total = len(experiments)
    for idx, name in enumerate(experiments, start=1):
        logger.info("[SUBMIT] %d/%d -> %s", idx, total, name)
        try:
            out = EXPERIMENTS[name](settings, args.out)
            logger.info("[DONE] %d/%d -> %s written to %s", idx, total, name, out)
        except LpvJumpError as exc:
            failed += 1
            logger.error("[FAIL] %s failed: %s", name, exc)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
