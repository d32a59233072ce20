import os
import yaml
import logging
from dataclasses import dataclass, field, fields, asdict
from typing import List, Dict, Any

from src.utils.constants import PRESETS_DIR, SOLVER_TOL_ENV, preset_map

logger = logging.getLogger(__name__)


@dataclass
class Settings:
    """
    Глобальные численные настройки: сетки, запасы строгости, допуски решателя.
    Значения по умолчанию соответствуют численным примерам (50 точек, полиномы
    первой степени); пресеты и флаги CLI переопределяют их.
    """
    rho_points: int = 50
    theta_points: int = 50
    verify_factor: int = 4
    strict_margin: float = 1e-7
    pd_margin: float = 1e-6
    solver_tol: float = 1e-7
    residual_tol: float = 1e-6
    max_iter: int = 200
    max_degree: int = 4
    degree: int = 1
    lambda_hat_delta: float = 0.005
    cond_cap: float = 1e8
    workers: int = field(default_factory=lambda: os.cpu_count() or 4)
    use_cache: bool = True
    preset: str = "full"

    def update(self, **overrides: Any) -> "Settings":
        """Удобный сеттер: применяет непустые переопределения."""
        known = {f.name for f in fields(self)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise KeyError(f"Unknown setting '{key}'")
            setattr(self, key, value)
        return self

    @classmethod
    def from_preset(cls, name: str) -> "Settings":
        if name not in preset_map:
            raise KeyError(f"Unknown preset '{name}', choose from {sorted(preset_map)}")
        path = PRESETS_DIR / preset_map[name]["file"]
        with open(path, encoding="utf-8") as f:
            data: Dict[str, Any] = yaml.safe_load(f) or {}
        data["preset"] = name
        data.update(_environment_overrides())
        return cls(**data)

    def as_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("workers", None)
        data.pop("use_cache", None)
        return data


def _environment_overrides() -> Dict[str, Any]:
    """
    Допуск решателя из LPVJUMP_SOLVER_TOL. Применяется поверх пресета,
    но до флагов CLI: явный --solver-tol сильнее окружения.
    """
    env_tol = os.environ.get(SOLVER_TOL_ENV)
    if not env_tol:
        return {}
    try:
        return {"solver_tol": float(env_tol)}
    except ValueError:
        logger.warning("Ignoring %s=%r: not a number", SOLVER_TOL_ENV, env_tol)
        return {}


def validate_grid_settings(settings: Settings) -> List[str]:
    errors: List[str] = []
    if settings.rho_points < 2 or settings.theta_points < 2:
        errors.append("grid sizes must be at least 2 points per axis")
    if settings.verify_factor < 1:
        errors.append("verify_factor must be >= 1")
    if settings.strict_margin < 0 or settings.pd_margin < 0:
        errors.append("margins must be nonnegative")
    return errors


def validate_degree_settings(settings: Settings) -> List[str]:
    errors: List[str] = []
    if settings.degree < 0:
        errors.append("polynomial degree must be nonnegative")
    if settings.degree > settings.max_degree:
        errors.append(f"degree {settings.degree} exceeds max_degree {settings.max_degree}")
    return errors


def validate_sim_settings(dt: float, horizon: float, runs: int, h: float) -> List[str]:
    """
    Проверяет шаг и горизонт моделирования: dt ≤ h/10 при h > 0,
    иначе dt ≤ horizon/1000.
    """
    errors: List[str] = []
    if horizon <= 0:
        errors.append("horizon must be positive")
    if runs < 1:
        errors.append("runs must be >= 1")
    if dt <= 0:
        errors.append("dt must be positive")
    elif h > 0 and dt > h / 10:
        errors.append(f"dt={dt:g} exceeds h/10={h / 10:g}")
    elif h == 0 and horizon > 0 and dt > horizon / 1000:
        errors.append(f"dt={dt:g} exceeds horizon/1000={horizon / 1000:g}")
    return errors


def validate_all(settings: Settings) -> List[str]:
    errors: List[str] = []
    errors += validate_grid_settings(settings)
    errors += validate_degree_settings(settings)
    return errors
