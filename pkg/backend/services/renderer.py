# backend/services/renderer.py
import io
from typing import Optional

import matplotlib
matplotlib.use('Agg')
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle
import pandas as pd

from models import Schedule, Scenario

PALETTE = ('#4C72B0', '#DD8452', '#55A868', '#C44E52', '#8172B3',
           '#937860', '#DA8BC3', '#8C8C8C', '#CCB974', '#64B5CD')


def product_colors(products):
    return {p: PALETTE[n % len(PALETTE)] for n, p in enumerate(products)}


def _fmt(value):
    return f"{value:.2f}"


def _segments(sch: Schedule, step: int):
    """(display id, product, lower, upper) for every batch holding volume after `step` runs"""
    segments = []
    for t in sch.trajectories:
        if step >= len(t.snapshots):
            continue
        upper, volume = t.snapshots[step]
        if volume > 1e-9:
            segments.append((t.display_id, t.product, upper - volume, upper))
    return sorted(segments, key=lambda seg: seg[2])


def run_table(sch: Schedule) -> pd.DataFrame:
    display = {t.batch: t.display_id for t in sch.trajectories}
    rows = []
    for n, run in enumerate(sch.runs, start=1):
        rows.append({
            'Run': f"k{run.index}",
            'Start': _fmt(run.start),
            'End': _fmt(run.end),
            'Duration': _fmt(run.duration),
            'Injections': '; '.join(f"{i.source} {_fmt(i.volume)} {i.product}->{display.get(i.batch, i.batch)}"
                                    for i in run.injections),
            'Deliveries': '; '.join(f"{d.depot}<-{display.get(d.batch, d.batch)} {_fmt(d.volume)} {d.product}"
                                    for d in run.deliveries),
            'Pipeline (origin first)': ' '.join(f"{bid}:{p}[{lo:.0f}-{hi:.0f}]"
                                                for bid, p, lo, hi in _segments(sch, n)),
        })
    return pd.DataFrame(rows, columns=['Run', 'Start', 'End', 'Duration', 'Injections', 'Deliveries',
                                       'Pipeline (origin first)'])


def render_text(sch: Schedule) -> str:
    """Plain-text Gantt: one row per pumping run"""
    lines = [f"Schedule for {sch.scenario}"]
    initial = ' '.join(f"{bid}:{p}[{lo:.0f}-{hi:.0f}]" for bid, p, lo, hi in _segments(sch, 0))
    lines.append(f"Initial pipeline (origin first): {initial}")
    if sch.runs:
        lines.append(run_table(sch).to_string(index=False))
        lines.append(f"Makespan: {_fmt(max(r.end for r in sch.runs))} h over {len(sch.runs)} runs")
    else:
        lines.append("No pumping runs")
    if sch.cost is not None:
        lines.append(f"Cost: interface {_fmt(sch.cost.interface)}, pumping {_fmt(sch.cost.pumping)}, "
                     f"backorder {_fmt(sch.cost.backorder)}, total {_fmt(sch.cost.total)}")
    for (p, j), volume in sorted(sch.backorders.items()):
        lines.append(f"Backorder: {_fmt(volume)} of {p} at {j}")
    return '\n'.join(lines) + '\n'


def render_state(state) -> str:
    """One-line pipeline picture at an instant, origin first"""
    parts = []
    lower = 0.0
    for batch, product, volume in state.segments:
        parts.append(f"{batch}:{product}[{lower:.2f}-{lower + volume:.2f}]")
        lower += volume
    return f"t={_fmt(state.time)} h  " + ' '.join(parts)


def render_svg(sch: Schedule, s: Optional[Scenario] = None) -> str:
    """SVG Gantt: one pipeline bar per run with terminals marked; identical input gives identical bytes"""
    products = list(s.product_ids) if s is not None else sorted({t.product for t in sch.trajectories if t.product})
    colors = product_colors(products)
    pv = s.pipeline_volume if s is not None else max(
        (snap[0] for t in sch.trajectories for snap in t.snapshots), default=1.0)
    rows = len(sch.runs) + 1
    display = {t.batch: t.display_id for t in sch.trajectories}

    with matplotlib.rc_context({'svg.hashsalt': 'pipesched', 'svg.fonttype': 'none'}):
        fig = Figure(figsize=(10, 1.0 + 0.55 * rows))
        ax = fig.add_subplot(111)
        for row in range(rows):
            y = rows - 1 - row
            for bid, product, lo, hi in _segments(sch, row):
                ax.add_patch(Rectangle((lo, y - 0.3), hi - lo, 0.6, facecolor=colors.get(product, '#DDDDDD'),
                                       edgecolor='black', linewidth=0.6))
                ax.text((lo + hi) / 2, y, bid, ha='center', va='center', fontsize=7)
            if row == 0:
                label = 't = 0'
            else:
                run = sch.runs[row - 1]
                label = f"k{run.index}  {_fmt(run.start)}-{_fmt(run.end)} ({_fmt(run.duration)} h)"
                for inj in run.injections:
                    tau = s.source(inj.source).tau if s is not None else 0.0
                    ax.annotate(f"{inj.source} {_fmt(inj.volume)}", xy=(tau, y + 0.3), xytext=(tau, y + 0.48),
                                ha='center', fontsize=6, arrowprops={'arrowstyle': '->', 'lw': 0.6})
                for d in run.deliveries:
                    sigma = s.depot(d.depot).sigma if s is not None else pv
                    ax.annotate(f"{d.depot} {_fmt(d.volume)} ({display.get(d.batch, d.batch)})",
                                xy=(sigma, y - 0.48), xytext=(sigma, y - 0.3), ha='center', va='top',
                                fontsize=6, arrowprops={'arrowstyle': '->', 'lw': 0.6})
            ax.text(-0.02 * pv, y, label, ha='right', va='center', fontsize=7)

        ax.set_xlim(0, pv)
        ax.set_ylim(-0.8, rows - 0.2)
        ax.set_yticks([])
        ax.set_xlabel('volumetric coordinate (origin at 0)')
        ax.set_title(f"Pipeline schedule: {sch.scenario}")
        handles = [Rectangle((0, 0), 1, 1, facecolor=colors[p], edgecolor='black') for p in products]
        ax.legend(handles, products, loc='upper right', bbox_to_anchor=(1.0, 1.12), ncol=len(products),
                  fontsize=7, frameon=False)
        fig.subplots_adjust(left=0.28, right=0.98)

        buffer = io.StringIO()
        fig.savefig(buffer, format='svg', metadata={'Date': None})
    return buffer.getvalue()
