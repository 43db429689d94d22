"""Binary PGM (P5) writer and the 5x5 review montage.

Montages are what a human reviewer looks at when hunting for the features
shared by low-scoring samples: up to 25 tiles in row-major order, 2-pixel
white separators, unused tiles left white. Output bytes are deterministic.
"""

from __future__ import annotations

import numpy as np

GRID = 5
SEPARATOR = 2
TILE = 28
CANVAS = GRID * TILE + (GRID - 1) * SEPARATOR  # 148


def write_pgm(image: np.ndarray, path) -> None:
    """Write a 2-D uint8 array as binary PGM with maxval 255."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    height, width = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def montage_grid(images) -> np.ndarray:
    """Compose 1-25 28x28 tiles into one 148x148 canvas."""
    tiles = [np.asarray(im, dtype=np.uint8) for im in images]
    if not tiles:
        raise ValueError("montage needs at least one image")
    if len(tiles) > GRID * GRID:
        raise ValueError(f"montage holds at most {GRID * GRID} images, got {len(tiles)}")
    for t in tiles:
        if t.shape != (TILE, TILE):
            raise ValueError(f"montage tiles must be {TILE}x{TILE}, got {t.shape}")
    canvas = np.full((CANVAS, CANVAS), 255, dtype=np.uint8)
    for idx, tile in enumerate(tiles):
        row, col = divmod(idx, GRID)
        top = row * (TILE + SEPARATOR)
        left = col * (TILE + SEPARATOR)
        canvas[top:top + TILE, left:left + TILE] = tile
    return canvas


def emit_montage(images, path) -> None:
    """Write the montage of the given images (list order = grid order)."""
    write_pgm(montage_grid(images), path)
