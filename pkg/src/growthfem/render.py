"""SVG drawings of deformed annulus meshes."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import Mesh, Region

GROWING_FILL = "#f2b134"
NON_GROWING_FILL = "#9cc3e6"
EDGE_COLOR = "#333333"


def render_svg(
    mesh: Mesh,
    coords: np.ndarray | None = None,
    path: str | Path | None = None,
    saddle: bool = False,
    crease_nodes=(),
    size: int = 600,
    title: str | None = None,
) -> str:
    """Deformed triangulation coloured by region.

    Each node is drawn as a ``circle`` with class ``node``; crease vertices get
    an extra red marker (class ``crease``) and a saddle state is tagged with an
    ``s`` at the centre.
    """
    x = mesh.nodes if coords is None else np.asarray(coords, dtype=float)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 0.05 * span
    scale = size / (span + 2 * pad)

    def xy(p):
        # flip y so the picture has the usual orientation
        return (p[0] - lo[0] + pad) * scale, (hi[1] - p[1] + pad) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">'
    ]
    if title:
        out.append(f"<title>{title}</title>")
    out.append('<g class="triangles" stroke="%s" stroke-width="0.4">' % EDGE_COLOR)
    for tri, reg in zip(mesh.triangles, mesh.region):
        fill = GROWING_FILL if reg == Region.GROWING else NON_GROWING_FILL
        pts = " ".join("%.3f,%.3f" % xy(x[k]) for k in tri)
        out.append(f'<polygon points="{pts}" fill="{fill}"/>')
    out.append("</g>")
    out.append('<g class="nodes" fill="%s">' % EDGE_COLOR)
    for p in x:
        cx, cy = xy(p)
        out.append(f'<circle class="node" cx="{cx:.3f}" cy="{cy:.3f}" r="0.8"/>')
    out.append("</g>")
    if len(crease_nodes):
        out.append('<g class="creases" fill="none" stroke="#d62728" stroke-width="1.5">')
        for k in crease_nodes:
            cx, cy = xy(x[k])
            out.append(f'<circle class="crease" cx="{cx:.3f}" cy="{cy:.3f}" r="5"/>')
        out.append("</g>")
    if saddle:
        cx, cy = xy(x.mean(axis=0))
        out.append(
            f'<text class="saddle" x="{cx:.3f}" y="{cy:.3f}" font-size="{size // 10}" '
            'text-anchor="middle" dominant-baseline="middle">s</text>'
        )
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(svg)
    return svg
