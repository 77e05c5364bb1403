"""Overlay predicted and annotated pixels on frames as coloured dots.

Pixel ``(col, row)`` covers ``[col - 0.5, col + 0.5) x [row - 0.5, row + 0.5)``,
the same convention the depth z-buffer uses. Dots are anti-aliased by
supersampling so their intensity centroid sits on the recorded coordinate.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image

ANNOTATION = "annotation"

PALETTES = {
    "default": {ANNOTATION: (0, 0, 255), "mocap": (255, 0, 0), "onboard": (0, 200, 0)},
    # Okabe-Ito colours, distinguishable under common colour-vision deficiencies
    "colorblind": {ANNOTATION: (0, 114, 178), "mocap": (213, 94, 0), "onboard": (240, 228, 66)},
}
_EXTRA = [(204, 121, 167), (86, 180, 233), (230, 159, 0), (0, 0, 0)]
_SUPERSAMPLE = 4


def colours(sources, palette: str = "default") -> dict:
    """Source -> RGB, falling back to spare colours for unknown sources."""
    if palette not in PALETTES:
        raise ValueError(f"unknown palette {palette!r}; choose from {sorted(PALETTES)}")
    table = PALETTES[palette]
    spare = iter(_EXTRA)
    out = {}
    for s in sources:
        out[s] = table.get(s) or next(spare, (128, 128, 128))
    return out


def dot_coverage(u: float, v: float, radius: float, width: int, height: int):
    """``(rows, cols, alpha)`` of pixels covered by a disc at ``(u, v)``."""
    c0, c1 = max(int(np.floor(u - radius)) - 1, 0), min(int(np.ceil(u + radius)) + 2, width)
    r0, r1 = max(int(np.floor(v - radius)) - 1, 0), min(int(np.ceil(v + radius)) + 2, height)
    if c0 >= c1 or r0 >= r1:
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    n = _SUPERSAMPLE
    offs = (np.arange(n) + 0.5) / n - 0.5
    cols = np.arange(c0, c1)
    rows = np.arange(r0, r1)
    x = (cols[:, None] + offs[None, :]).ravel()
    y = (rows[:, None] + offs[None, :]).ravel()
    inside = ((x[None, :] - u) ** 2 + (y[:, None] - v) ** 2) <= radius * radius
    alpha = inside.reshape(len(rows), n, len(cols), n).mean(axis=(1, 3))
    rr, cc = np.nonzero(alpha)
    return rr + r0, cc + c0, alpha[rr, cc]


def draw_dots(image: np.ndarray, points: Mapping, colour_map: Mapping, radius: float = 3.0) -> np.ndarray:
    """RGB copy of ``image`` with one dot per source; ``None`` points are skipped."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    out = img[:, :, :3].astype(np.float64)
    h, w = out.shape[:2]
    for source, p in points.items():
        if p is None:
            continue
        u, v = float(p[0]), float(p[1])
        if not (-0.5 <= u < w - 0.5 and -0.5 <= v < h - 0.5):
            continue  # out of view
        rr, cc, a = dot_coverage(u, v, radius, w, h)
        colour = np.asarray(colour_map[source], dtype=np.float64)
        out[rr, cc] = (1.0 - a[:, None]) * out[rr, cc] + a[:, None] * colour
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _background(path: Optional[str], width: int, height: int) -> np.ndarray:
    if path and Path(path).exists():
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    return np.full((height, width, 3), 96, dtype=np.uint8)


def render_sequence(frames, tracks_by_source: Mapping, annotations=None, out_dir=".",
                    palette: str = "default", radius: float = 3.0, frame_range=None) -> list:
    """Write ``<frame>.png`` overlays; returns the written paths.

    ``tracks_by_source`` maps a source name to ``{track_id: KeypointTrack}``.
    Each (source, track) pair gets its own dot; annotation dots come first
    so predictions are drawn on top.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = ([ANNOTATION] if annotations is not None else []) + sorted(tracks_by_source)
    cmap = colours(sources, palette)
    predicted = {s: {tid: t.predicted() for tid, t in tracks.items()} for s, tracks in tracks_by_source.items()}
    annotated = {t.id: t.by_frame() for t in annotations.tracks} if annotations is not None else {}
    frames_to_draw = range(len(frames)) if frame_range is None else frame_range
    written = []
    for k in frames_to_draw:
        img = _background(frames.images[k] if k < len(frames.images) else None, frames.width, frames.height)
        for tid, pts in sorted(annotated.items()):
            p = pts.get(k)
            img = draw_dots(img, {ANNOTATION: None if p is None else (p.u, p.v)}, cmap, radius)
        for s in sorted(predicted):
            for tid in sorted(predicted[s]):
                img = draw_dots(img, {s: predicted[s][tid].get(k)}, cmap, radius)
        path = out_dir / f"{k:06d}.png"
        Image.fromarray(img).save(path, format="PNG", optimize=False)
        written.append(path)
    return written
