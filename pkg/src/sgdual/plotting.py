"""Figures for run reports (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "figure.dpi": 150,
    "figure.figsize": (4.2, 2.8),
    "figure.constrained_layout.use": True,
}

# no timestamps so repeated renders are byte-stable
_META = {"Software": None}


def _save(fig, path) -> Path:
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return Path(path)


def _series(records, key):
    t = np.array([r["t"] for r in records], float)
    y = np.array([r.get(key, np.nan) for r in records], float)
    return t, y


def plot_report(records: list, outdir) -> list[Path]:
    """Energy drift, invariant margins and monitors against time."""
    outdir = Path(outdir)
    out = []
    if not records:
        return out
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key, lab in (("transport_energy", "transport"), ("geostrophic_energy", "geostrophic")):
            t, e = _series(records, key)
            ax.plot(t, np.abs(e - e[0]), label=lab)
        ax.set_xlabel("t")
        ax.set_ylabel("|E(t) - E(0)|")
        ax.set_yscale("symlog", linthresh=1e-16)
        ax.legend()
        out.append(_save(fig, outdir / "energy_drift.png"))

        fig, ax = plt.subplots()
        for key in ("bound_margin", "vertical_drift", "ot_residual", "min_volume"):
            t, y = _series(records, key)
            ax.plot(t, y, label=key)
        ax.set_xlabel("t")
        ax.set_yscale("symlog", linthresh=1e-16)
        ax.legend()
        out.append(_save(fig, outdir / "invariants.png"))

        if "identity_lhs" in records[0]:
            fig, ax = plt.subplots()
            for key in ("identity_lhs", "identity_rhs"):
                t, y = _series(records, key)
                ax.plot(t, y, marker="o", label=key)
            ax.set_xlabel("t")
            ax.legend()
            out.append(_save(fig, outdir / "energy_identity.png"))
    return out


def plot_cloud(positions, outdir, name: str = "cloud.png", masses=None) -> Path:
    """Horizontal projection of a particle cloud."""
    y = np.asarray(positions)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        s = 4.0 if masses is None else 4.0 * np.asarray(masses) / np.mean(masses)
        ax.scatter(y[:, 0], y[:, 1], s=s, c=y[:, 2], cmap="viridis")
        ax.set_aspect("equal")
        ax.set_xlabel("y1")
        ax.set_ylabel("y2")
        return _save(fig, Path(outdir) / name)


def plot_bounds(rows: list, outdir) -> Path:
    """Maximum relative violation per bound and time (negative means slack)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for b in sorted({r["bound"] for r in rows}):
            sel = [r for r in rows if r["bound"] == b]
            ax.plot([float(r["time"]) for r in sel], [float(r["max_violation"]) for r in sel], marker="o", label=b)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xlabel("t")
        ax.set_ylabel("max relative violation")
        ax.legend()
        return _save(fig, Path(outdir) / "bounds.png")
