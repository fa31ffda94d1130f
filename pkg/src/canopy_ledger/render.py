"""Minimal PNG output: heatmaps and labelled bar charts.

Images are RGB, 8-bit, written with a fixed zlib level so identical inputs
give identical bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

WHITE = (255, 255, 255)
BLACK = (0, 0, 0)
BAR = (70, 120, 60)
BAR_CURRENT = (120, 120, 120)

# viridis-like anchors
_ANCHORS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=np.float64)

# 3x5 glyphs, rows top to bottom, 3 bits per row
_FONT = {
    "0": (7, 5, 5, 5, 7), "1": (2, 6, 2, 2, 7), "2": (7, 1, 7, 4, 7), "3": (7, 1, 7, 1, 7),
    "4": (5, 5, 7, 1, 1), "5": (7, 4, 7, 1, 7), "6": (7, 4, 7, 5, 7), "7": (7, 1, 1, 1, 1),
    "8": (7, 5, 7, 5, 7), "9": (7, 5, 7, 1, 7), "+": (0, 2, 7, 2, 0), "-": (0, 0, 7, 0, 0),
    ".": (0, 0, 0, 0, 2), "%": (5, 1, 2, 4, 5), " ": (0, 0, 0, 0, 0),
    "C": (7, 4, 4, 4, 7), "N": (5, 7, 7, 7, 5), "O": (7, 5, 5, 5, 7), "W": (5, 5, 7, 7, 5),
    "M": (5, 7, 7, 5, 5), "T": (7, 2, 2, 2, 2),
}


def encode_png(rgb: np.ndarray) -> bytes:
    """(h, w, 3) uint8 array to PNG bytes."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {rgb.shape}")
    h, w, _ = rgb.shape
    raw = np.concatenate([np.zeros((h, 1), np.uint8), rgb.reshape(h, w * 3)], axis=1).tobytes()

    def chunk(tag, body):
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def write_png(path, rgb) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_png(rgb))
    return path


def colormap(t) -> np.ndarray:
    """Values in [0, 1] to uint8 RGB by piecewise-linear interpolation of the anchors."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * (len(_ANCHORS) - 1)
    i = np.minimum(np.floor(t).astype(np.int64), len(_ANCHORS) - 2)
    f = (t - i)[..., None]
    return np.round(_ANCHORS[i] * (1 - f) + _ANCHORS[i + 1] * f).astype(np.uint8)


def heatmap(values, valid=None, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Colour image of a 2-D array; invalid cells are white."""
    v = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(v) if valid is None else (np.asarray(valid, dtype=bool) & np.isfinite(v))
    lo = vmin if vmin is not None else (float(v[ok].min()) if ok.any() else 0.0)
    hi = vmax if vmax is not None else (float(v[ok].max()) if ok.any() else 1.0)
    span = hi - lo if hi > lo else 1.0
    img = colormap((np.where(ok, v, lo) - lo) / span)
    img[~ok] = WHITE
    return img


def draw_text(img: np.ndarray, x: int, y: int, text: str, scale: int = 2, color=BLACK):
    """Stamp ``text`` with its top-left corner at (x, y); unknown characters are skipped."""
    h, w, _ = img.shape
    for ch in text.upper():
        glyph = _FONT.get(ch)
        if glyph is not None:
            for gr, bits in enumerate(glyph):
                for gc in range(3):
                    if bits >> (2 - gc) & 1:
                        y0, x0 = y + gr * scale, x + gc * scale
                        img[max(y0, 0) : max(min(y0 + scale, h), 0), max(x0, 0) : max(min(x0 + scale, w), 0)] = color
        x += 4 * scale


def text_width(text: str, scale: int = 2) -> int:
    return 4 * scale * len(text) - scale if text else 0


def bar_chart(values, labels=None, annotations=None, colors=None, width: int = 480, height: int = 300,
              margin: int = 24) -> np.ndarray:
    """Vertical bars from a zero baseline; labels below, annotations above each bar."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    if n == 0:
        return img
    top = max(float(np.nanmax(v)), 0.0)
    bot = min(float(np.nanmin(v)), 0.0)
    span = top - bot if top > bot else 1.0
    plot_h = height - 2 * margin
    y_of = lambda val: int(round(margin + (top - val) / span * plot_h))
    base = y_of(0.0)
    slot = (width - 2 * margin) / n
    bw = max(1, int(slot * 0.7))
    img[base, margin : width - margin] = BLACK
    for i in range(n):
        x0 = int(round(margin + i * slot + (slot - bw) / 2))
        y1 = y_of(v[i]) if np.isfinite(v[i]) else base
        ya, yb = sorted((y1, base))
        img[ya:yb, x0 : x0 + bw] = (colors[i] if colors is not None else BAR)
        if labels is not None:
            s = str(labels[i])
            draw_text(img, x0 + (bw - text_width(s)) // 2, height - margin + 6, s)
        if annotations is not None and annotations[i]:
            s = str(annotations[i])
            draw_text(img, x0 + (bw - text_width(s)) // 2, max(ya - 14, 0), s)
    return img


def histogram_image(counts, width: int = 600, height: int = 240) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    return bar_chart(c, width=max(width, 2 * c.size + 48), height=height, margin=24)
