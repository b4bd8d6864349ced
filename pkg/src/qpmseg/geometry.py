"""Planar geometry on pixel sets: border following, convex hull, enclosing circle.

Coordinates are (x, y) with x along columns and y along rows (y grows downward).
Pixel centers sit on integer coordinates.
"""

from __future__ import annotations

import math

import numpy as np

# Moore neighbourhood in clockwise order (image coordinates), starting west.
# Entries are (dy, dx).
_NEIGHBOURS = (
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
)
_NEIGHBOUR_INDEX = {d: i for i, d in enumerate(_NEIGHBOURS)}


def trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Trace the outer boundary of a single 8-connected component.

    Moore-neighbour tracing with Jacob's stopping criterion. Tracing starts at
    the topmost-then-leftmost pixel and runs clockwise on screen.

    Args:
        mask: 2-D boolean array holding exactly one 8-connected component.

    Returns:
        (M, 2) int array of (row, col) boundary pixels forming a closed cycle
        (the last pixel is adjacent to the first; the first is not repeated).
    """
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    rows, cols = np.nonzero(padded)
    if rows.size == 0:
        raise ValueError("cannot trace an empty mask")
    start = (int(rows[0]), int(cols[0]))

    # The west neighbour of the topmost-leftmost pixel is background.
    backtrack = 0
    current = start
    boundary = [start]
    first_move = None
    while True:
        nxt = None
        for k in range(1, 9):
            idx = (backtrack + k) % 8
            dy, dx = _NEIGHBOURS[idx]
            cand = (current[0] + dy, current[1] + dx)
            if padded[cand]:
                prev = _NEIGHBOURS[(idx - 1) % 8]
                # backtrack is the last background pixel seen, relative to cand
                back_abs = (current[0] + prev[0], current[1] + prev[1])
                backtrack = _NEIGHBOUR_INDEX[(back_abs[0] - cand[0], back_abs[1] - cand[1])]
                nxt = cand
                break
        if nxt is None:
            break  # isolated pixel
        if first_move is None:
            first_move = (current, nxt)
        elif (current, nxt) == first_move:
            break
        current = nxt
        boundary.append(current)

    if len(boundary) > 1 and boundary[-1] == start:
        boundary.pop()
    return np.asarray(boundary, dtype=np.int64) - 1


def chain_steps(boundary_xy: np.ndarray) -> np.ndarray:
    """Steps (dx, dy) between consecutive boundary pixels of a closed cycle."""
    if len(boundary_xy) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    return np.diff(np.vstack([boundary_xy, boundary_xy[:1]]), axis=0)


def polygon_length(boundary_xy: np.ndarray) -> float:
    """Length of the closed boundary polygon in pixel units (diagonals weigh sqrt 2)."""
    steps = chain_steps(boundary_xy)
    if steps.size == 0:
        return 0.0
    diagonal = int(np.count_nonzero((steps[:, 0] != 0) & (steps[:, 1] != 0)))
    axial = len(steps) - diagonal
    return axial + diagonal * math.sqrt(2.0)


def corrected_chain_length(boundary_xy: np.ndarray) -> float:
    """Perimeter estimate from the chain code with corner correction.

    Uses the Vossepoel-Smeulders weights (0.980 per even step, 1.406 per odd
    step, -0.091 per direction change), which removes most of the
    overestimate a plain sqrt-2 weighted chain shows on digitised curves.
    """
    steps = chain_steps(boundary_xy)
    if steps.size == 0:
        return 0.0
    odd = (steps[:, 0] != 0) & (steps[:, 1] != 0)
    n_odd = int(np.count_nonzero(odd))
    n_even = len(steps) - n_odd
    rolled = np.roll(steps, 1, axis=0)
    n_corner = int(np.count_nonzero(np.any(steps != rolled, axis=1)))
    return max(0.980 * n_even + 1.406 * n_odd - 0.091 * n_corner, 0.0)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull by Andrew's monotone chain, counter-clockwise, no repeats.

    Collinear input yields its two extreme points; a single point yields itself.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def half(seq):
        chain: list[np.ndarray] = []
        for p in seq:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
                if cross > 0:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def polygon_area(vertices: np.ndarray) -> float:
    """Unsigned shoelace area."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def edge_midpoints(pixels_xy: np.ndarray) -> np.ndarray:
    """Midpoints of the four sides of each pixel square."""
    p = np.asarray(pixels_xy, dtype=float)
    offsets = np.array([[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]])
    return (p[:, None, :] + offsets[None, :, :]).reshape(-1, 2)


# --- minimal enclosing circle -------------------------------------------------

_EPS = 1e-12


def _in_circle(c: tuple[float, float, float], p) -> bool:
    return math.hypot(p[0] - c[0], p[1] - c[1]) <= c[2] * (1 + _EPS) + _EPS


def _diameter_circle(a, b) -> tuple[float, float, float]:
    cx = (a[0] + b[0]) / 2.0
    cy = (a[1] + b[1]) / 2.0
    r = max(math.hypot(cx - a[0], cy - a[1]), math.hypot(cx - b[0], cy - b[1]))
    return (cx, cy, r)


def _circumcircle(a, b, c):
    ox = (min(a[0], b[0], c[0]) + max(a[0], b[0], c[0])) / 2.0
    oy = (min(a[1], b[1], c[1]) + max(a[1], b[1], c[1])) / 2.0
    ax, ay = a[0] - ox, a[1] - oy
    bx, by = b[0] - ox, b[1] - oy
    cx, cy = c[0] - ox, c[1] - oy
    d = (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by)) * 2.0
    if d == 0.0:
        return None
    x = ox + ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
              + (cx * cx + cy * cy) * (ay - by)) / d
    y = oy + ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
              + (cx * cx + cy * cy) * (bx - ax)) / d
    r = max(math.hypot(x - p[0], y - p[1]) for p in (a, b, c))
    return (x, y, r)


def _cross(x0, y0, x1, y1, x2, y2) -> float:
    return (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)


def _circle_two(points, p, q):
    circ = _diameter_circle(p, q)
    left = right = None
    for r in points:
        if _in_circle(circ, r):
            continue
        cross = _cross(p[0], p[1], q[0], q[1], r[0], r[1])
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        side = _cross(p[0], p[1], q[0], q[1], c[0], c[1])
        if cross > 0.0 and (left is None or side > _cross(p[0], p[1], q[0], q[1], left[0], left[1])):
            left = c
        elif cross < 0.0 and (right is None or side < _cross(p[0], p[1], q[0], q[1], right[0], right[1])):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left[2] <= right[2] else right


def _circle_one(points, p):
    c = (p[0], p[1], 0.0)
    for i, q in enumerate(points):
        if not _in_circle(c, q):
            if c[2] == 0.0:
                c = _diameter_circle(p, q)
            else:
                c = _circle_two(points[: i + 1], p, q)
    return c


def min_enclosing_circle(points: np.ndarray, seed: int = 0) -> tuple[float, float, float]:
    """Smallest circle containing all points (Welzl, iterative form).

    The input order is shuffled with a fixed seed, so the result is
    deterministic. Callers with many points should pass hull vertices only.

    Returns:
        (cx, cy, radius)
    """
    pts = [tuple(map(float, p)) for p in np.asarray(points, dtype=float).reshape(-1, 2)]
    if not pts:
        raise ValueError("no points")
    order = np.random.default_rng(seed).permutation(len(pts))
    pts = [pts[i] for i in order]
    c = None
    for i, p in enumerate(pts):
        if c is None or not _in_circle(c, p):
            c = _circle_one(pts[: i + 1], p)
    return c
