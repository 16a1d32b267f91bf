"""Deterministic matplotlib rendering of the simulator's CSV tables.

Bar charts show the meta-initialized arm as one bar per entry (the meta-
training entry first, then one per task) with the no-transfer arm overlaid as
flat markers, so the bar count stays exactly 1 + number of tasks. The
tradeoff chart draws, per efficiency setting, the meta-training cost (diamond
markers), the summed adaptation cost (squares) and the dashed total with a
star on the minimizing budget.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .spec import FigureSpec, SchemaError, read_table

_SERIES_COLORS = ("black", "tab:red", "tab:blue", "tab:green")

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "svg.hashsalt": "metafed-figures",
}


def render(spec: FigureSpec):
    """Draw the spec'd figure and return the matplotlib Figure."""
    rows = read_table(spec.csv_path, spec.kind)
    with plt.rc_context(_STYLE):
        if spec.kind == "tradeoff-lines":
            fig = _tradeoff_lines(rows, spec)
        elif spec.kind == "bars-energy":
            fig = _bars(rows, spec, "energy_with_meta_kj", "energy_no_meta_kj",
                        "energy [kJ]")
        else:
            fig = _bars(rows, spec, "rounds_with_meta", "rounds_no_meta",
                        "rounds")
    return fig


def render_to_file(spec: FigureSpec) -> None:
    fig = render(spec)
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    # strip writer metadata so identical inputs give identical files
    fig.savefig(spec.out_path, metadata={"Software": None}
                if spec.out_path.suffix == ".png" else None)
    plt.close(fig)


def _tradeoff_lines(rows, spec: FigureSpec):
    settings = spec.settings or tuple(dict.fromkeys(r["setting"] for r in rows))
    missing = set(spec.settings) - {r["setting"] for r in rows}
    if missing:
        raise SchemaError(f"settings not present in table: {sorted(missing)}")
    fig, ax = plt.subplots()
    for color, name in zip(_SERIES_COLORS, settings):
        series = sorted((r for r in rows if r["setting"] == name),
                        key=lambda r: float(r["t0"]))
        t0 = [float(r["t0"]) for r in series]
        ax.plot(t0, [float(r["maml_kj"]) for r in series], color=color,
                marker="D", linestyle="-", label=f"{name}: meta-training")
        ax.plot(t0, [float(r["fl_sum_kj"]) for r in series], color=color,
                marker="s", linestyle="-", label=f"{name}: task adaptations")
        ax.plot(t0, [float(r["total_kj"]) for r in series], color=color,
                marker="", linestyle="--", label=f"{name}: total")
        best = [r for r in series if int(r["is_argmin"])]
        if best:
            ax.plot([float(r["t0"]) for r in best],
                    [float(r["total_kj"]) for r in best], color=color,
                    marker="*", markersize=14, linestyle="none",
                    label=f"{name}: optimum")
    ax.set_xlabel("meta-training rounds")
    ax.set_ylabel("energy [kJ]")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=7)
    return fig


def _bars(rows, spec: FigureSpec, with_col: str, without_col: str, ylabel: str):
    entries = [r["entry"] for r in rows]
    with_values = [float(r[with_col]) for r in rows]
    without_values = [float(r[without_col]) for r in rows]
    fig, ax = plt.subplots()
    positions = range(len(entries))
    ax.bar(positions, with_values, color="tab:orange", width=0.6,
           label="with meta-initialization")
    ax.plot(positions, without_values, color="tab:blue", marker="_",
            markersize=22, markeredgewidth=3, linestyle="none",
            label="random initialization")
    ax.set_xticks(list(positions), entries, rotation=30)
    ax.set_ylabel(ylabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=7)
    return fig
