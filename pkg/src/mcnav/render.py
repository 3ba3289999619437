"""Episode pictures: occupancy, trajectory, frontiers, map nodes and events.

``render`` works from the files an episode leaves behind (trace, map
snapshot, cognitive-map snapshot), so a picture can be drawn long after the
run. The output format follows the file extension: ``.pgm`` gives a
grayscale raster, ``.svg`` a vector drawing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

# decision reasons and blacklist events that get a marker on the picture
EVENT_REASONS = ("revalidation", "reexploration")

# grayscale shades for the raster output
SHADE_TRAJECTORY = 60
SHADE_NODE = 180
SHADE_BLACKLIST = 20
SHADE_FRONTIER = 220
SHADE_EVENT = 100

SVG_COLORS = {
    "free": "#ffffff", "unknown": "#9e9e9e", "occupied": "#000000",
    "trajectory": "#1f5fbf", "node": "#2ca02c", "blacklist": "#d62728",
    "frontier": "#17becf", "event": "#ff7f0e",
}


@dataclass
class GridSnapshot:
    """Occupancy image (row 0 = top) plus the sidecar describing its frame."""

    image: np.ndarray
    sidecar: dict

    @property
    def size(self) -> int:
        return int(self.sidecar["size"])

    @property
    def resolution(self) -> float:
        return float(self.sidecar["resolution_m"])

    def pixel(self, x: float, y: float) -> tuple[float, float]:
        """Continuous (column, row) image coordinates of a world point."""
        ox, oy = self.sidecar["origin"]
        col = (x - ox) / self.resolution
        row = self.size - (y - oy) / self.resolution
        return col, row


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a binary (P5) 8-bit graymap."""
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM is not supported")
    pos += 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).copy()


def load_grid_snapshot(pgm_path, sidecar_path=None) -> GridSnapshot:
    """Read ``<prefix>.pgm`` and its sidecar (``<prefix>.map.json`` by default)."""
    pgm_path = Path(pgm_path)
    if sidecar_path is None:
        sidecar_path = pgm_path.with_suffix(".map.json")
    image = parse_pgm(pgm_path.read_bytes())
    sidecar = json.loads(Path(sidecar_path).read_text())
    return GridSnapshot(image, sidecar)


def trace_events(trace) -> list[dict]:
    """Positions where a memory strategy fired or a blacklist changed."""
    out = []
    for rec in trace:
        kinds = [d["reason"] for d in rec.get("decisions", []) if d["reason"] in EVENT_REASONS]
        kinds += [e["event"] for e in rec.get("blacklist_events", [])]
        for kind in kinds:
            out.append({"step": rec["step"], "kind": kind, "xy": rec["pose"][:2]})
    return out


def _scale_for(size: int) -> int:
    return max(1, 512 // max(size, 1))


def _stamp(img, col, row, offsets, shade) -> None:
    h, w = img.shape
    for dr, dc in offsets:
        r, c = row + dr, col + dc
        if 0 <= r < h and 0 <= c < w:
            img[r, c] = shade


def _disc(radius: int):
    return [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1)
            if dr * dr + dc * dc <= radius * radius]


def _cross(radius: int):
    out = []
    for k in range(-radius, radius + 1):
        out += [(k, k), (k, -k), (k, k + 1), (k, -k + 1)]
    return out


def _ring(radius: int):
    return [(dr, dc) for dr, dc in _disc(radius + 1) if dr * dr + dc * dc > (radius - 1) ** 2]


def _diamond(radius: int):
    return [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1)
            if abs(dr) + abs(dc) == radius]


def render_pgm(trace, grid: GridSnapshot, cogmap: dict | None) -> bytes:
    s = _scale_for(grid.size)
    img = np.kron(grid.image, np.ones((s, s), dtype=np.uint8))

    def px(xy):
        col, row = grid.pixel(*xy)
        return int(np.floor(col * s)), int(np.floor(row * s))

    for f in grid.sidecar.get("frontiers", []):
        _stamp(img, *px(f["centroid"]), _diamond(2 * s), SHADE_FRONTIER)
    poses = [rec["pose"][:2] for rec in trace]
    for a, b in zip(poses, poses[1:]):
        (c0, r0), (c1, r1) = px(a), px(b)
        n = max(abs(c1 - c0), abs(r1 - r0), 1)
        for k in range(n + 1):
            _stamp(img, round(c0 + (c1 - c0) * k / n), round(r0 + (r1 - r0) * k / n), [(0, 0)],
                   SHADE_TRAJECTORY)
    if len(poses) == 1:
        _stamp(img, *px(poses[0]), [(0, 0)], SHADE_TRAJECTORY)
    for node in (cogmap or {}).get("nodes", []):
        if node["blacklist"] == "none":
            _stamp(img, *px(node["center"]), _disc(s + 1), SHADE_NODE)
        else:
            _stamp(img, *px(node["center"]), _cross(2 * s), SHADE_BLACKLIST)
    for ev in trace_events(trace):
        _stamp(img, *px(ev["xy"]), _ring(2 * s), SHADE_EVENT)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(trace, grid: GridSnapshot, cogmap: dict | None) -> bytes:
    n = grid.size
    s = _scale_for(n)
    col = SVG_COLORS
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{n * s}" height="{n * s}" '
             f'viewBox="0 0 {n} {n}">',
             f'<rect width="{n}" height="{n}" fill="{col["unknown"]}"/>']
    # one rectangle per horizontal run of equal known cells
    for value, name in ((255, "free"), (0, "occupied")):
        parts.append(f'<g class="{name}" fill="{col[name]}" shape-rendering="crispEdges">')
        for r in range(n):
            row = grid.image[r] == value
            edges = np.flatnonzero(np.diff(np.concatenate(([0], row.astype(np.int8), [0]))))
            for a, b in zip(edges[::2], edges[1::2]):
                parts.append(f'<rect x="{a}" y="{r}" width="{b - a}" height="1"/>')
        parts.append("</g>")
    parts.append(f'<g class="frontiers" fill="{col["frontier"]}">')
    for f in grid.sidecar.get("frontiers", []):
        cx, cy = grid.pixel(*f["centroid"])
        parts.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="1.5"/>')
    parts.append("</g>")
    if trace:
        pts = " ".join(f"{_f(c)},{_f(r)}" for c, r in (grid.pixel(*rec["pose"][:2]) for rec in trace))
        parts.append(f'<polyline class="trajectory" points="{pts}" fill="none" '
                     f'stroke="{col["trajectory"]}" stroke-width="0.6"/>')
    parts.append('<g class="nodes">')
    for node in (cogmap or {}).get("nodes", []):
        cx, cy = grid.pixel(*node["center"])
        label = escape(f'{node["category"]} #{node["id"]} ({node["blacklist"]})')
        if node["blacklist"] == "none":
            parts.append(f'<circle class="node" cx="{_f(cx)}" cy="{_f(cy)}" r="1.5" '
                         f'fill="{col["node"]}"><title>{label}</title></circle>')
        else:
            d = 2.0
            parts.append(f'<path class="blacklisted" d="M{_f(cx - d)},{_f(cy - d)}L{_f(cx + d)},{_f(cy + d)}'
                         f'M{_f(cx - d)},{_f(cy + d)}L{_f(cx + d)},{_f(cy - d)}" '
                         f'stroke="{col["blacklist"]}" stroke-width="0.8"><title>{label}</title></path>')
    parts.append("</g>")
    parts.append('<g class="events">')
    for ev in trace_events(trace):
        cx, cy = grid.pixel(*ev["xy"])
        parts.append(f'<circle class="event {escape(ev["kind"])}" cx="{_f(cx)}" cy="{_f(cy)}" r="2.5" '
                     f'fill="none" stroke="{col["event"]}" stroke-width="0.6">'
                     f'<title>step {ev["step"]}: {escape(ev["kind"])}</title></circle>')
    parts.append("</g>")
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode()


def render(trace, grid: GridSnapshot, cogmap: dict | None, out_path) -> Path:
    """Draw an episode to ``out_path``; the extension picks PGM or SVG."""
    out_path = Path(out_path)
    ext = out_path.suffix.lower()
    if ext == ".pgm":
        data = render_pgm(trace, grid, cogmap)
    elif ext == ".svg":
        data = render_svg(trace, grid, cogmap)
    else:
        raise ValueError(f"unsupported render format {ext!r}; use .pgm or .svg")
    out_path.write_bytes(data)
    return out_path
