"""Output writers: delimited result tables, run metadata, and figures.

CSV conventions: RFC-4180 style, ``\n`` line endings, mandatory header
row, floats at 17 significant digits so re-runs byte-reproduce.  The
standard curve table is ``k,mean_gap,std_gap,bound,oracle`` with empty
strings where a column does not apply.  Each report directory also gets a
rendered matplotlib figure per panel next to its tables.
"""

from __future__ import annotations

import json
import subprocess
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "fmt",
    "write_result_table",
    "write_constants_table",
    "write_basin_table",
    "write_timing_table",
    "write_resolved_config",
    "write_metadata",
    "build_identifier",
    "plot_curves",
    "plot_basin",
]


def fmt(x: float) -> str:
    """One float at 17 significant digits."""
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def write_result_table(
    path: str | Path,
    ks: np.ndarray,
    mean_gap: np.ndarray,
    std_gap: np.ndarray,
    bound: np.ndarray | None = None,
    oracle: np.ndarray | None = None,
) -> None:
    """Curve table ``k,mean_gap,std_gap,bound,oracle``, rows sorted by k."""
    order = np.argsort(ks)
    rows = []
    for i in order:
        rows.append(
            [
                str(int(ks[i])),
                fmt(mean_gap[i]),
                fmt(std_gap[i]),
                fmt(bound[i]) if bound is not None else "",
                fmt(oracle[i]) if oracle is not None else "",
            ]
        )
    _write_csv(Path(path), ["k", "mean_gap", "std_gap", "bound", "oracle"], rows)


def write_constants_table(path: str | Path, rows: list[dict[str, Any]]) -> None:
    """Per-preconditioner constants: label,l_hat,c_hat,k_noise,kappa_eff,floor."""
    header = ["label", "l_hat", "c_hat", "k_noise", "kappa_eff", "floor"]
    out = [
        [str(r["label"])] + [fmt(r[h]) for h in header[1:]]
        for r in rows
    ]
    _write_csv(Path(path), header, out)


def write_basin_table(path: str | Path, rows: list[tuple[float, float, float, float]]) -> None:
    _write_csv(
        Path(path),
        ["r", "alpha", "stay_fraction", "bound"],
        [[fmt(r), fmt(a), fmt(s), fmt(b)] for r, a, s, b in rows],
    )


def write_timing_table(path: str | Path, elapsed: np.ndarray, loss: np.ndarray) -> None:
    _write_csv(
        Path(path),
        ["elapsed_seconds", "mean_loss"],
        [[fmt(t), fmt(v)] for t, v in zip(elapsed, loss)],
    )


def write_resolved_config(out_dir: str | Path, text: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(text, encoding="utf-8")


def write_metadata(out_dir: str | Path, payload: dict[str, Any]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def build_identifier() -> str:
    """git-describe-style identifier of the running code, or the package version."""
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).parent,
            timeout=10,
        )
        if described.returncode == 0 and described.stdout.strip():
            return described.stdout.strip()
    except OSError:
        pass
    try:
        return f"precondlab-{version('precondlab')}"
    except PackageNotFoundError:
        return "precondlab-unknown"


def plot_curves(
    path: str | Path,
    curves: dict[str, tuple[np.ndarray, np.ndarray]],
    title: str,
    xlabel: str = "iteration k",
    ylabel: str = "mean optimality gap",
    logy: bool = True,
) -> None:
    """One panel of labeled curves, log-scale loss axis by default."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, (xs, ys) in curves.items():
        ax.plot(xs, ys, label=label, linewidth=1.4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_basin(
    path: str | Path,
    rows: list[tuple[float, float, float, float]],
    title: str,
) -> None:
    """Stay fraction and theoretical bound against basin radius."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    alphas = sorted({a for _, a, _, _ in rows})
    for a in alphas:
        sub = [(r, s, b) for r, aa, s, b in rows if aa == a]
        rs = [r for r, _, _ in sub]
        ax.plot(rs, [s for _, s, _ in sub], "o-", label=f"stay fraction (alpha={a:.3g})")
        ax.plot(rs, [b for _, _, b in sub], "s--", label=f"bound (alpha={a:.3g})")
    ax.set_xlabel("basin radius r")
    ax.set_ylabel("probability")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
