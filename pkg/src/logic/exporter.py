import pandas as pd
from io import BytesIO, StringIO
from pathlib import Path
from typing import Dict, List, Any, Sequence

from src.logic.sdp import OPTIMAL, INFEASIBLE
from src.utils.constants import FLOAT_FORMAT, THEOREM_LABELS


def write_csv(df: pd.DataFrame, path: str | Path) -> None:
    """CSV с заголовком, LF-окончаниями и 9 значащими цифрами: одинаковые входы дают одинаковые байты."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(csv_text(df))


def csv_text(df: pd.DataFrame) -> str:
    buf = StringIO()
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
    return buf.getvalue()


def gamma_column(theorem: int) -> str:
    return f"gamma_{THEOREM_LABELS[theorem].lower()}"


def feasible_column(theorem: int) -> str:
    return f"feasible_{THEOREM_LABELS[theorem].lower()}"


def status_column(theorem: int) -> str:
    return f"status_{THEOREM_LABELS[theorem].lower()}"


def sweep_frame(vary: str, values: Sequence[float], theorems: Sequence[int],
                results: Dict[int, List[Dict[str, Any]]]) -> pd.DataFrame:
    """
    Таблица перебора: значение параметра, затем γ, признак допустимости
    и статус решателя по каждой теореме. results[thm][i]: словарь
    {"gamma": float | None, "status": str}.

    Пустая ячейка γ означает недопустимость или сбой решателя. При сбое
    (numerical-failure) признак допустимости тоже пуст: о допустимости
    точки ничего не известно.
    """
    data: Dict[str, List[Any]] = {vary: [float(v) for v in values]}
    for thm in theorems:
        rows = results[thm]
        statuses = [r.get("status") or (OPTIMAL if r.get("gamma") is not None else INFEASIBLE) for r in rows]
        data[gamma_column(thm)] = [float("nan") if r.get("gamma") is None else float(r["gamma"]) for r in rows]
        data[feasible_column(thm)] = [
            float(s == OPTIMAL) if s in (OPTIMAL, INFEASIBLE) else float("nan") for s in statuses
        ]
        data[status_column(thm)] = statuses
    return pd.DataFrame(data)


class SweepExporter:
    """Создаёт и оформляет Excel-отчёт по результатам перебора.
    """

    def __init__(self, vary: str, theorems: Sequence[int]) -> None:
        self.vary = vary
        self.theorems = list(theorems)
        self.col_map = {
            "h": "Верхняя граница задержки h",
            "lambda0": "Интенсивность λ₀",
        }
        for thm in self.theorems:
            label = THEOREM_LABELS[thm]
            self.col_map[gamma_column(thm)] = f"γ ({label})"
            self.col_map[feasible_column(thm)] = f"Допустимо ({label})"
            self.col_map[status_column(thm)] = f"Статус ({label})"

    def build_bytes(self, frame: pd.DataFrame, settings: Dict[str, Any] | None = None) -> bytes:
        buf = BytesIO()

        with pd.ExcelWriter(buf, engine="xlsxwriter") as writer:
            df = frame.rename(columns=self.col_map)
            df.to_excel(writer, sheet_name="Перебор", index=False)
            ws = writer.sheets["Перебор"]
            ws.autofilter(0, 0, len(df), len(df.columns) - 1)

            for idx, col in enumerate(frame.columns):
                width = 14 if col.startswith(("feasible_", "status_")) else 22
                ws.set_column(idx, idx, width)

            # меньшее γ лучше: шкала перевёрнута относительно обычной
            last_row = len(df)
            for thm in self.theorems:
                idx = frame.columns.get_loc(gamma_column(thm))
                ws.conditional_format(
                    1, idx, last_row, idx,
                    {
                        "type": "3_color_scale",
                        "min_color": "#00FF00",
                        "mid_color": "#FFFF00",
                        "max_color": "#FF0000",
                    }
                )

            if settings:
                cfg_df = pd.DataFrame(sorted(settings.items()), columns=["Параметр", "Значение"])
                cfg_df.to_excel(writer, sheet_name="Настройки", index=False)
                ws_cfg = writer.sheets["Настройки"]
                ws_cfg.set_column(0, 0, 20)
                ws_cfg.set_column(1, 1, 14)

        buf.seek(0)
        return buf.read()

    def write(self, frame: pd.DataFrame, path: str | Path, settings: Dict[str, Any] | None = None) -> None:
        Path(path).write_bytes(self.build_bytes(frame, settings))
