from pathlib import Path
from typing import Dict, Any


def find_project_root(marker: str = 'requirements.txt') -> Path:
    current = Path(__file__).resolve()
    for parent in current.parents:
        if (parent / marker).exists():
            return parent
    raise RuntimeError(f"Project root marker '{marker}' not found.")


BASE_DIR = find_project_root()
DATA_DIR = BASE_DIR / 'data'
SWEEP_CACHE_DIR = DATA_DIR / 'sweep_cache'
PRESETS_DIR = BASE_DIR / 'presets'
SYSTEMS_DIR = BASE_DIR / 'systems'
OUTPUT_DIR = BASE_DIR / 'out'

SOLVER_TOL_ENV = "LPVJUMP_SOLVER_TOL"

# Код возврата CLI
EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

# Формат чисел во всех CSV: 9 значащих цифр
FLOAT_FORMAT = "%.9g"

VALIDATION_POINTS = 1001
ENVELOPE_FACTOR = 1.05
MAX_REJECTIONS = 1_000_000
DIVERGENCE_NORM = 1e12
MAX_CONDITION = 1e8

preset_map: Dict[str, Dict[str, Any]] = {
    "fast": {"file": "fast.yaml", "descr": "Грубые сетки 15×15 для тестов и быстрых прогонов"},
    "full": {"file": "full.yaml", "descr": "Сетки 50×50, как в численных примерах"},
}

THEOREM_LABELS: Dict[int, str] = {
    1: "Thm1",
    2: "Thm2",
    3: "Thm3",
    4: "Thm4",
}
