"""Independent oracles and small builders shared by the tests.

None of these call into the package's geometry or labelling code, so they can
serve as reference implementations.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from qpmseg.core import PhaseImage


def disk_mask(radius: float, shape=None, center=None) -> np.ndarray:
    """Pixels whose centres lie within ``radius`` of ``center``."""
    if shape is None:
        n = int(2 * math.ceil(radius) + 5)
        shape = (n, n)
    if center is None:
        center = ((shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0)
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius ** 2


def mask_pixels(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    return np.column_stack([xs, ys])


def image(phase, pixel_size_um=1.0, wavelength_nm=528.0, image_id="img") -> PhaseImage:
    return PhaseImage(image_id, np.asarray(phase, dtype=float), pixel_size_um, wavelength_nm)


def flood_fill_partition(mask: np.ndarray) -> set[frozenset[tuple[int, int]]]:
    """8-connected components by explicit stack-based flood fill."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    parts = set()
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            comp = []
            stack = [(y, x)]
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                comp.append((cx, cy))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            parts.add(frozenset(comp))
    return parts


def brute_force_enclosing_radius(points: np.ndarray) -> float:
    """Smallest radius over all 2- and 3-point circles that contain every point."""
    pts = [tuple(map(float, p)) for p in np.unique(np.asarray(points, float), axis=0)]
    if len(pts) == 1:
        return 0.0
    arr = np.asarray(pts)

    def covers(cx, cy, r):
        return bool(np.all(np.hypot(arr[:, 0] - cx, arr[:, 1] - cy) <= r * (1 + 1e-12) + 1e-9))

    best = math.inf
    for a, b in itertools.combinations(pts, 2):
        cx, cy = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
        r = math.hypot(a[0] - b[0], a[1] - b[1]) / 2
        if r < best and covers(cx, cy, r):
            best = r
    for a, b, c in itertools.combinations(pts, 3):
        d = 2 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
        if abs(d) < 1e-12:
            continue
        ux = ((a[0] ** 2 + a[1] ** 2) * (b[1] - c[1]) + (b[0] ** 2 + b[1] ** 2) * (c[1] - a[1])
              + (c[0] ** 2 + c[1] ** 2) * (a[1] - b[1])) / d
        uy = ((a[0] ** 2 + a[1] ** 2) * (c[0] - b[0]) + (b[0] ** 2 + b[1] ** 2) * (a[0] - c[0])
              + (c[0] ** 2 + c[1] ** 2) * (b[0] - a[0])) / d
        r = math.hypot(a[0] - ux, a[1] - uy)
        if r < best and covers(ux, uy, r):
            best = r
    return best


def four_boundary(mask: np.ndarray) -> set[tuple[int, int]]:
    """Foreground pixels (x, y) with a 4-neighbour outside the mask."""
    padded = np.pad(mask, 1)
    core = padded[1:-1, 1:-1]
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    ys, xs = np.nonzero(core & ~interior)
    return set(zip(xs.tolist(), ys.tolist()))


def sobel_oracle(phase: np.ndarray) -> np.ndarray:
    """Sobel magnitude / 8 with edge replication, by explicit loops."""
    h, w = phase.shape
    p = np.pad(phase, 1, mode="edge")
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    out = np.zeros_like(phase, dtype=float)
    for y in range(h):
        for x in range(w):
            gx = sum(kx[i][j] * p[y + i, x + j] for i in range(3) for j in range(3))
            gy = sum(kx[j][i] * p[y + i, x + j] for i in range(3) for j in range(3))
            out[y, x] = math.hypot(gx / 8.0, gy / 8.0)
    return out


def random_connected_mask(rng: np.random.Generator, size: int = 16, density: float = 0.5):
    """Largest 8-connected component of a random mask, as a boolean array (may be empty)."""
    mask = rng.random((size, size)) < density
    parts = flood_fill_partition(mask)
    if not parts:
        return None
    biggest = max(parts, key=lambda c: (len(c), sorted(c)))
    out = np.zeros_like(mask)
    for x, y in biggest:
        out[y, x] = True
    return out
