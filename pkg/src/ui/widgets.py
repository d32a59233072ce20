import argparse
from typing import List, Tuple

from src.utils.constants import preset_map, THEOREM_LABELS
from src.utils.helpers import Settings, validate_all
from src.utils.errors import UsageError


def int_input(min_value: int = 0, max_value: int | None = None):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
        if value < min_value or (max_value is not None and value > max_value):
            raise argparse.ArgumentTypeError(f"{value} is outside [{min_value}, {max_value}]")
        return value
    return parse


def float_input(min_value: float | None = None, strict: bool = False):
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
        if min_value is not None and (value < min_value or (strict and value == min_value)):
            op = ">" if strict else ">="
            raise argparse.ArgumentTypeError(f"expected a number {op} {min_value}, got {value}")
        return value
    return parse


def lambda_hat_input(text: str) -> float | str:
    """Число или 'auto' (внешний поиск λ̂)."""
    if text.strip().lower() == "auto":
        return "auto"
    return float_input(0.0, strict=True)(text)


def range_input(text: str) -> Tuple[float, float]:
    """'lo:hi' или 'lo,hi'."""
    sep = ":" if ":" in text else ","
    parts = text.split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo:hi', got {text!r}")
    lo, hi = (float_input()(p) for p in parts)
    if hi < lo:
        raise argparse.ArgumentTypeError(f"range end {hi} is below its start {lo}")
    return lo, hi


def theorem_list(allowed: Tuple[int, ...]):
    def parse(text: str) -> List[int]:
        try:
            items = [int(s) for s in text.replace(" ", "").split(",") if s]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list of theorems, got {text!r}")
        bad = [t for t in items if t not in allowed]
        if not items or bad:
            raise argparse.ArgumentTypeError(f"theorems must be chosen from {list(allowed)}")
        return sorted(set(items))
    return parse


def add_numeric_args(parser: argparse.ArgumentParser) -> None:
    """Общие численные флаги: пресет, сетка, степень, допуск."""
    group = parser.add_argument_group("numerics")
    group.add_argument("--preset", choices=sorted(preset_map), default="full",
                       help="; ".join(f"{k}: {v['descr']}" for k, v in preset_map.items()))
    group.add_argument("--grid", type=int_input(2), help="grid points per axis (rho and theta)")
    group.add_argument("--deg", type=int_input(0), help="polynomial degree of the decision variables")
    group.add_argument("--solver-tol", type=float_input(0.0, strict=True), dest="solver_tol")
    group.add_argument("--workers", type=int_input(1))


def settings_from_args(args: argparse.Namespace) -> Settings:
    """Пресет, затем флаги CLI поверх него; проверка сводится в UsageError."""
    settings = Settings.from_preset(args.preset)
    settings.update(
        rho_points=args.grid,
        theta_points=args.grid,
        degree=args.deg,
        solver_tol=getattr(args, "solver_tol", None),
        workers=getattr(args, "workers", None),
    )
    if getattr(args, "no_cache", False):
        settings.use_cache = False
    errors = validate_all(settings)
    if errors:
        raise UsageError("; ".join(errors))
    return settings


def theorem_label(theorem: int) -> str:
    return THEOREM_LABELS.get(theorem, f"Prop{theorem}")
