import json
import hashlib
import logging

from src.utils.constants import SWEEP_CACHE_DIR
from typing import Dict, Any, Callable, Optional

logger = logging.getLogger(__name__)

# Кэш процесса: повторные точки в одном запуске не читают диск
_memory_cache: Dict[str, Dict[str, Any]] = {}


def generate_sweep_hash(description: str,
                        theorem: int,
                        vary: str,
                        value: float,
                        settings: Dict[str, Any],
                        extra: Optional[Dict[str, Any]] = None,
                        ) -> str:
    """
    Строит SHA-256 хеш точки перебора для поиска в кэше:
    текст описания системы, теорема, варьируемый параметр, его значение
    и численные настройки (сетки, запасы, допуски).
    """
    payload = {
        'description': description,
        'theorem': theorem,
        'vary': vary,
        'value': repr(float(value)),
        'settings': settings,
        'extra': extra or {},
    }
    serialized = json.dumps(payload, ensure_ascii=False, sort_keys=True, default=str)
    return hashlib.sha256(serialized.encode('utf-8')).hexdigest()


def load_memory_point(hash_key: str) -> Optional[Dict[str, Any]]:
    return _memory_cache.get(hash_key)


def save_memory_point(hash_key: str, data: Dict[str, Any]) -> None:
    _memory_cache[hash_key] = data


def load_disk_point(hash_key: str) -> Optional[Dict[str, Any]]:
    """
    Ищет решённую точку в JSON-файле data/sweep_cache/<hash>.json.
    """
    file_path = SWEEP_CACHE_DIR / f'{hash_key}.json'
    if not file_path.exists():
        return None
    try:
        with file_path.open(encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        logger.warning("Ignoring unreadable cache entry %s: %s", file_path.name, exc)
        return None


def save_disk_point(hash_key: str, data: Dict[str, Any]) -> None:
    SWEEP_CACHE_DIR.mkdir(parents=True, exist_ok=True)
    file_path = SWEEP_CACHE_DIR / f'{hash_key}.json'
    tmp = file_path.with_suffix('.tmp')
    with tmp.open('w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, sort_keys=True)
    tmp.replace(file_path)


def clear_memory_cache() -> None:
    _memory_cache.clear()


def get_or_compute_point(hash_key: str,
                         compute_fn: Callable[[], Dict[str, Any]],
                         use_cache: bool = True,
                         ) -> Dict[str, Any]:
    """
    Три шага поиска (память -> диск -> расчёт). Сохраняются только
    окончательные исходы: optimal и infeasible; сбой решателя не кэшируется.
    """
    if use_cache:
        result = load_memory_point(hash_key)
        if result is not None:
            return result
        result = load_disk_point(hash_key)
        if result is not None:
            logger.debug("Sweep cache hit %s", hash_key[:12])
            save_memory_point(hash_key, result)
            return result

    result = compute_fn()
    if use_cache and result.get("status") in ("optimal", "infeasible"):
        save_memory_point(hash_key, result)
        save_disk_point(hash_key, result)
    return result
