import sys
import pandas as pd
from typing import Any, Iterable, Tuple, TextIO


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_header(title: str, stream: TextIO | None = None) -> None:
    out = stream or sys.stdout
    out.write(f"{title}\n{'=' * len(title)}\n")


def render_summary(rows: Iterable[Tuple[str, Any]], stream: TextIO | None = None) -> None:
    """Сводка 'ключ: значение' с выравниванием по самому длинному ключу."""
    out = stream or sys.stdout
    rows = list(rows)
    width = max((len(k) for k, _ in rows), default=0)
    for key, value in rows:
        out.write(f"  {key.ljust(width)} : {_fmt(value)}\n")
    out.flush()


def render_table(df: pd.DataFrame, stream: TextIO | None = None) -> None:
    out = stream or sys.stdout
    out.write(df.to_string(index=False, float_format=lambda v: f"{v:.6g}", na_rep="-"))
    out.write("\n")
    out.flush()
