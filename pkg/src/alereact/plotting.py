"""Post-processing figures from a diagnostics CSV (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import read_csv  # noqa: E402


def _rel_drift(v: np.ndarray) -> np.ndarray:
    return np.abs(v - v[0]) / max(abs(v[0]), 1e-300)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def conservation_figure(cols: dict, path: Path) -> Path:
    t = cols["t"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in cols:
        if k.startswith("area_") or k.startswith("mass_"):
            ax.semilogy(t[1:], np.maximum(_rel_drift(cols[k])[1:], 1e-18), label=k)
    ax.set_xlabel("t")
    ax.set_ylabel("relative drift")
    ax.legend(fontsize=8)
    return _save(fig, path)


def energy_figure(cols: dict, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    e = cols["energy"]
    ax.plot(cols["t"], e / e[0])
    ax.set_xlabel("t")
    ax.set_ylabel("E(t) / E(0)")
    return _save(fig, path)


def species_figure(cols: dict, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in cols:
        if k.startswith("species_"):
            ax.plot(cols["t"], cols[k], label=k[len("species_"):])
    ax.set_xlabel("t")
    ax.set_ylabel("species mass")
    ax.legend(fontsize=8)
    return _save(fig, path)


def shape_figure(cols: dict, path: Path) -> Path:
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    t = cols["t"]
    for ax, key, label in zip(axes.ravel(), ("perimeter_1", "C_d", "x_c", "V_c"),
                              ("perimeter", "circularity", "x_c", "rise velocity")):
        if key in cols and np.any(np.isfinite(cols[key])):
            ax.plot(t, cols[key])
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("t")
    return _save(fig, path)


def gate_figure(cols: dict, path: Path) -> Path | None:
    if "k_gate_max" not in cols or not np.any(np.isfinite(cols["k_gate_max"])):
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(cols["t"], cols["k_gate_min"], label="min k")
    ax.plot(cols["t"], cols["k_gate_max"], label="max k")
    ax.set_xlabel("t")
    ax.set_ylabel("gated permeability")
    ax.legend()
    return _save(fig, path)


def report(csv_path, out_dir=None) -> list:
    """Render every applicable figure next to the CSV (or in ``out_dir``); returns the paths."""
    csv_path = Path(csv_path)
    out = Path(out_dir) if out_dir is not None else csv_path.parent
    out.mkdir(parents=True, exist_ok=True)
    cols = read_csv(csv_path)
    if not cols:
        return []
    paths = [conservation_figure(cols, out / "conservation.png"),
             energy_figure(cols, out / "energy.png"),
             species_figure(cols, out / "species.png"),
             shape_figure(cols, out / "shape.png")]
    g = gate_figure(cols, out / "gate.png")
    if g is not None:
        paths.append(g)
    return paths
