"""Optional SVG figures (needs matplotlib)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("--plots needs matplotlib: pip install 'artifact[plots]'") from exc
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "driftfb"
    import matplotlib.pyplot as plt
    return plt


def write_plots(report, out: Path) -> list[str]:
    """Profile or contact map plus log-log growth fits for each solved member."""
    from .experiments import growth_samples

    plt = _pyplot()
    files = []
    for k, m in enumerate(report.members):
        if m.solution is None:
            continue
        g = m.problem.grid
        fig, ax = plt.subplots(figsize=(5, 4))
        if g.dimension == 1:
            x = g.axis
            reach = 1.5 * m.problem.metadata.get("support_radius", 1.0)
            sel = np.abs(x) <= reach
            ax.plot(x[sel], m.problem.obstacle[sel], "k--", lw=1, label="phi")
            ax.plot(x[sel], m.solution.u[sel], "C0", lw=1.2, label="u")
            c = m.solution.contact_mask & sel
            ax.plot(x[c], m.solution.u[c], "C3.", ms=1.5, label="contact")
            ax.set_xlabel("x")
            ax.legend(frameon=False)
        else:
            ext = [-g.R, g.R, -g.R, g.R]
            ax.imshow(m.solution.contact_mask.T, origin="lower", extent=ext, cmap="Greys")
            r = m.problem.metadata.get("support_radius", 1.0) * 1.2
            ax.set_xlim(-r, r)
            ax.set_ylim(-r, r)
            for p in m.points:
                ax.plot(*p.location, "C3.", ms=3)
            ax.set_xlabel("x")
            ax.set_ylabel("y")
        ax.set_title(m.label, fontsize=8)
        name = f"profile_{k:02d}.svg"
        fig.savefig(out / name, metadata={"Date": None})
        plt.close(fig)
        files.append(name)
        if not m.points:
            continue
        fig, ax = plt.subplots(figsize=(5, 4))
        for p, fit in growth_samples(m):
            line, = ax.loglog(fit.radii, fit.sups, "o", ms=3)
            rr = np.geomspace(fit.radii[0], fit.radii[-1], 20)
            ax.loglog(rr, fit.c0 * rr ** fit.exponent, "-", lw=0.8, color=line.get_color())
        ax.set_xlabel("r")
        ax.set_ylabel("sup over B_r of u - phi")
        ax.set_title(m.label, fontsize=8)
        name = f"growth_{k:02d}.svg"
        fig.savefig(out / name, metadata={"Date": None})
        plt.close(fig)
        files.append(name)
    return files
