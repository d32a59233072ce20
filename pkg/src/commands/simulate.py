import argparse
import logging
from pathlib import Path

from src.commands.analyze import load_description
from src.logic.exporter import write_csv
from src.logic.model import InitialHistory
from src.logic.sim import (
    SimConfig, integrate, trajectory_frame, mc_mean_square, mean_square_frame, empirical_l2_gain,
)
from src.logic.synthesis import load_controller
from src.ui.components import render_header, render_summary
from src.ui.widgets import int_input, float_input
from src.utils.constants import OUTPUT_DIR, EXIT_OK
from src.utils.errors import UsageError
from src.utils.expression import parse_expression

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    p = subparsers.add_parser("simulate", help="Monte-Carlo simulation with random parameter jumps")
    p.add_argument("description", type=Path)
    p.add_argument("--controller", type=Path, help="controller file; default: 'controller' key of the description")
    p.add_argument("--open-loop", action="store_true", dest="open_loop", help="ignore any controller")
    p.add_argument("--runs", type=int_input(1), default=1)
    p.add_argument("--dt", type=float_input(0.0, strict=True))
    p.add_argument("--horizon", type=float_input(0.0, strict=True), default=20.0)
    p.add_argument("--seed", type=int_input(0), default=0)
    p.add_argument("--w", help="input signal w(t); overrides the description")
    p.add_argument("--rho0", type=float, help="initial parameter; default uniform on the box")
    p.add_argument("--h", type=float_input(0.0))
    p.add_argument("--lambda0", type=float_input(0.0))
    p.add_argument("--gain", action="store_true", help="estimate the empirical L2 gain instead")
    p.add_argument("--workers", type=int_input(1), default=1)
    p.add_argument("--out", type=Path, help="CSV output")
    p.set_defaults(handler=run)


def default_dt(h: float, horizon: float) -> float:
    return h / 20 if h > 0 else horizon / 2000


def run(args: argparse.Namespace) -> int:
    desc = load_description(args)
    sys = desc.system
    if args.rho0 is not None and not sys.box.lo <= args.rho0 <= sys.box.hi:
        raise UsageError(f"rho0={args.rho0} is outside [{sys.box.lo}, {sys.box.hi}]")

    ctrl = None
    ctrl_path = args.controller or (Path(desc.controller) if desc.controller else None)
    if ctrl_path is not None and not args.open_loop:
        if not ctrl_path.is_absolute() and args.controller is None:
            ctrl_path = desc.path.parent / ctrl_path
        ctrl = load_controller(ctrl_path)

    w_signal = parse_expression(args.w, ("t",)) if args.w else desc.w_signal
    cfg = SimConfig(
        dt=args.dt or default_dt(sys.h, args.horizon),
        horizon=args.horizon,
        seed=args.seed,
        runs=args.runs,
        w_signal=w_signal,
        rho0=args.rho0,
        workers=args.workers,
    )
    cfg.check(sys.h)
    phi = desc.initial or InitialHistory.zeros(sys.n)
    mode = "closed loop" if ctrl is not None else "open loop"
    render_header(f"Simulation of {sys.name} ({mode})")
    rows = [("runs", cfg.runs), ("dt", cfg.dt), ("horizon", cfg.horizon), ("seed", cfg.seed)]

    if args.gain:
        gain = empirical_l2_gain(sys, desc.delay, desc.kernel, cfg, ctrl)
        rows.append(("empirical L2 gain", gain))
        if ctrl is not None:
            rows.append(("certified gamma", ctrl.gamma))
        render_summary(rows)
        return EXIT_OK

    out = args.out or OUTPUT_DIR / f"{sys.name}-{'closed' if ctrl else 'open'}-sim.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.runs == 1:
        traj = integrate(sys, desc.delay, phi, desc.kernel, cfg, ctrl, run=0)
        write_csv(trajectory_frame(traj), out)
        rows += [("jumps", len(traj.jumps)), ("diverged", traj.diverged),
                 ("final |x|^2", float(traj.square_norm[-1]))]
    else:
        result = mc_mean_square(sys, desc.delay, phi, desc.kernel, cfg, ctrl)
        write_csv(mean_square_frame(result), out)
        rows += [("diverged runs", result.diverged_runs), ("E|x(0)|^2", result.initial),
                 ("E|x(T)|^2", result.final), ("mean-square decay", result.decayed)]
    rows.append(("output", str(out)))
    render_summary(rows)
    return EXIT_OK
