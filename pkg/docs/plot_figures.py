"""
Рисует графики по CSV из src.utils.experiments. Результат задают CSV,
графики только для просмотра.

    python docs/plot_figures.py out/experiments
"""
import sys
import pandas as pd
import matplotlib
from pathlib import Path

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SWEEPS = {
    "analysis_gamma_vs_h.csv": ("h", "Верхняя граница задержки h"),
    "analysis_gamma_vs_lambda0.csv": ("lambda0", "Интенсивность λ₀"),
    "synthesis_gamma_vs_lambda0.csv": ("lambda0", "Интенсивность λ₀"),
}


def plot_sweep(csv: Path, x: str, xlabel: str) -> Path:
    df = pd.read_csv(csv)
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in df.columns:
        if col.startswith("gamma_"):
            ax.plot(df[x], df[col], marker="o", label=col.removeprefix("gamma_").capitalize())
    ax.set_xlabel(xlabel)
    ax.set_ylabel("минимальное γ")
    ax.grid(True, alpha=0.3)
    ax.legend()
    out = csv.with_suffix(".png")
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out


def plot_trajectory(csv: Path) -> Path:
    df = pd.read_csv(csv)
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    for col in df.columns:
        if col.startswith("x"):
            top.plot(df["t"], df[col], label=col)
    top.set_ylabel("состояние")
    top.legend()
    bottom.step(df["t"], df["rho"], where="post")
    bottom.set_xlabel("t")
    bottom.set_ylabel("ρ")
    out = csv.with_suffix(".png")
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out


def main(folder: str) -> None:
    root = Path(folder)
    for name, (x, label) in SWEEPS.items():
        if (root / name).exists():
            print(f"[FILE] {plot_sweep(root / name, x, label)}")
    for csv in sorted(root.glob("*_trajectory.csv")):
        print(f"[FILE] {plot_trajectory(csv)}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "out/experiments")
