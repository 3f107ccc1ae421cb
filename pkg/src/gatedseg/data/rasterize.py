"""Even-odd polygon rasterization on the pixel-center grid."""

from __future__ import annotations

import numpy as np


def polygon_fill(poly_xy: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Fill one closed polygon; a pixel is inside iff its center (integer
    coordinates, x=column, y=row) has an odd crossing count along the +x ray.

    poly_xy: (N, 2) vertices as (x, y) in pixel coordinates.
    """
    h, w = shape
    poly = np.asarray(poly_xy, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        return np.zeros(shape, dtype=bool)
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    inside = np.zeros(shape, dtype=bool)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for i in range(poly.shape[0]):
        if y0[i] == y1[i]:
            continue  # horizontal edge never crosses a scanline half-open in y
        crosses = (y0[i] > ys) != (y1[i] > ys)
        x_at = x0[i] + (ys - y0[i]) * (x1[i] - x0[i]) / (y1[i] - y0[i])
        inside ^= crosses & (xs < x_at)
    return inside


def contours_to_mask(contours: list[np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    """Combine several contours on one slice by even-odd parity (XOR), which
    lets an inner contour carve a hole out of an outer one."""
    mask = np.zeros(shape, dtype=bool)
    for poly in contours:
        mask ^= polygon_fill(poly, shape)
    return mask
