"""Tiny dependency-free PNG/PPM emitters for report figures.

Figures are companions to CSVs that carry the exact values and labels;
the rasters are for eyeballing block structure, so there is no text
rendering, just colored cells and points on a fixed canvas.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P6 {w} {h} 255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    """Minimal truecolor PNG writer (filter 0 on every scanline)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, channels = pixels.shape
    if channels != 3:
        raise ValueError("expected an (H, W, 3) uint8 array")
    raw = b"".join(b"\x00" + pixels[row].tobytes() for row in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF
        )

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    data = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )
    Path(path).write_bytes(data)


def _colormap(values: np.ndarray) -> np.ndarray:
    """White-to-blue ramp over [0, 1]."""
    t = np.clip(values, 0.0, 1.0)[..., None]
    white = np.array([255.0, 255.0, 255.0])
    blue = np.array([21.0, 80.0, 166.0])
    return ((1 - t) * white + t * blue).astype(np.uint8)


def heatmap_png(
    values: np.ndarray,
    path: str | Path,
    cell: int = 24,
    vmax: float | None = None,
) -> None:
    """Render an m-by-m matrix as colored cells with 1px grid lines."""
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    scale = vmax if vmax else max(float(values.max()), 1e-12)
    colors = _colormap(values / scale)
    size = m * cell + (m + 1)
    canvas = np.full((size, size, 3), 210, dtype=np.uint8)
    for i in range(m):
        for j in range(m):
            y = 1 + i * (cell + 1)
            x = 1 + j * (cell + 1)
            canvas[y : y + cell, x : x + cell] = colors[i, j]
    write_png(path, canvas)


def scatter_png(
    x: np.ndarray,
    y: np.ndarray,
    path: str | Path,
    size: int = 320,
    point: int = 3,
    groups: np.ndarray | None = None,
) -> None:
    """Scatter of points in [0, 1] x [0, 1]; optional binary group colors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    canvas = np.full((size, size, 3), 255, dtype=np.uint8)
    canvas[:, 0] = canvas[-1, :] = (80, 80, 80)
    palette = [np.array([21, 80, 166]), np.array([189, 66, 28])]
    for idx in range(len(x)):
        px = int(round(x[idx] * (size - 2 * point - 2))) + point + 1
        py = size - 2 - point - int(round(y[idx] * (size - 2 * point - 2)))
        color = palette[0]
        if groups is not None:
            color = palette[int(groups[idx]) % len(palette)]
        canvas[py - point : py + point + 1, px - point : px + point + 1] = color
    write_png(path, canvas)
