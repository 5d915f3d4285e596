"""Deterministic SVG rendering of a run: walls, trajectory, decision
markers, recognized-sign labels."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .explorer import TrajectoryLog
from .venue import VenueMap
from .world import WorldSpec

__all__ = ["export_trajectory_svg"]

_SCALE = 12.0  # px per meter
_PAD = 12.0


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def export_trajectory_svg(
    world: WorldSpec,
    log: TrajectoryLog,
    out_path: str | Path,
    vm: VenueMap | None = None,
) -> Path:
    """Render the run to an SVG file; identical inputs produce identical
    bytes."""
    events = list(log)
    if not events:
        raise ValueError("trajectory log is empty")
    h_cells, w_cells = world.shape
    res = world.resolution
    width_m, height_m = w_cells * res, h_cells * res

    def sx(x: float) -> str:
        return _fmt(_PAD + x * _SCALE)

    def sy(y: float) -> str:
        return _fmt(_PAD + (height_m - y) * _SCALE)

    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width_m * _SCALE + 2 * _PAD)}" '
        f'height="{_fmt(height_m * _SCALE + 2 * _PAD)}" version="1.1">'
    )
    parts.append('<rect width="100%" height="100%" fill="white"/>')

    # walls: horizontal runs of wall cells merged into single rects
    for r in range(h_cells):
        c = 0
        while c < w_cells:
            if not world.walls[r, c]:
                c += 1
                continue
            c1 = c
            while c1 < w_cells and world.walls[r, c1]:
                c1 += 1
            x0, y1 = c * res, (r + 1) * res
            parts.append(
                f'<rect x="{sx(x0)}" y="{sy(y1)}" width="{_fmt((c1 - c) * res * _SCALE)}" '
                f'height="{_fmt(res * _SCALE)}" fill="#444444"/>'
            )
            c = c1

    poses = [e["payload"] for e in events if e["type"] == "pose"]
    decisions = [e["payload"] for e in events if e["type"] == "decision"]
    recognitions = [
        e["payload"] for e in events if e["type"] == "recognition" and e["payload"]["label"] is not None
    ]

    if poses:
        pts = " ".join(f"{sx(p['x'])},{sy(p['y'])}" for p in poses)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#cc2222" stroke-width="1.5"/>'
        )

    for d in decisions:
        if d["kind"] == "frontier":
            parts.append(
                f'<circle cx="{sx(d["x"])}" cy="{sy(d["y"])}" r="2.5" fill="none" '
                f'stroke="#2255cc" stroke-width="1"/>'
            )
        else:
            x, y = d["x"], d["y"]
            pts = (
                f"{sx(x)},{_fmt(float(sy(y)) - 3.5)} "
                f"{_fmt(float(sx(x)) - 3.0)},{_fmt(float(sy(y)) + 2.5)} "
                f"{_fmt(float(sx(x)) + 3.0)},{_fmt(float(sy(y)) + 2.5)}"
            )
            parts.append(f'<polygon points="{pts}" fill="none" stroke="#dd8800" stroke-width="1"/>')

    # label each correctly recognized sign once, at its anchor
    labeled: set[int] = set()
    for rec in recognitions:
        for sid in rec["sources"]:
            if sid in labeled or sid >= len(world.signage):
                continue
            sign = world.signage[sid]
            if sign.is_distractor:
                continue
            if vm is not None and vm.index_of(sign.label) != rec["label"]:
                continue
            labeled.add(sid)
            ax, ay = sign.anchor
            name = escape(sign.label)
            parts.append(
                f'<text x="{sx(ax)}" y="{sy(ay)}" font-size="9" fill="#117711">{name}</text>'
            )

    if poses:
        p0 = poses[0]
        parts.append(
            f'<circle cx="{sx(p0["x"])}" cy="{sy(p0["y"])}" r="4" fill="#22aa22"/>'
        )
    parts.append("</svg>")
    out = Path(out_path)
    out.write_bytes("\n".join(parts).encode("utf-8"))
    return out
