"""Independent brute-force references shared by the unit and acceptance tests."""
import math

import numpy as np
from shapely.geometry import Polygon


def boundary_samples(vertices, spacing=5e-4) -> np.ndarray:
    """Points every ``spacing`` metres along the closed boundary, vertices included."""
    v = np.asarray(vertices, dtype=float)
    pts = []
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        n = max(int(math.ceil(np.linalg.norm(b - a) / spacing)), 1)
        t = np.arange(n) / n
        pts.append(a + t[:, None] * (b - a))
    return np.concatenate(pts)


def _points_to_edges(points: np.ndarray, vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    best = np.inf
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        ab = b - a
        t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
        d = np.hypot(*(points - (a + t[:, None] * ab)).T)
        best = min(best, float(d.min()))
    return best


def polygon_distance_oracle(a_vertices, b_vertices, spacing=5e-4) -> float:
    """0 when the shapes overlap (exact test), else the densely sampled boundary-to-boundary distance."""
    if Polygon(a_vertices).intersects(Polygon(b_vertices)):
        return 0.0
    return min(_points_to_edges(boundary_samples(a_vertices, spacing), b_vertices),
               _points_to_edges(boundary_samples(b_vertices, spacing), a_vertices))


def random_convex_quad(rng: np.random.Generator, spread=6.0):
    """Vertices of a random convex quad: 4 sorted angles on a rotated, shifted ellipse."""
    while True:
        angles = np.sort(rng.uniform(0, 2 * np.pi, 4))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
        if gaps.min() < 0.3:
            continue
        rx, ry = rng.uniform(0.3, 2.5, 2)
        rot = rng.uniform(-np.pi, np.pi)
        c, s = math.cos(rot), math.sin(rot)
        cx, cy = rng.uniform(-spread, spread, 2)
        return tuple((cx + c * rx * math.cos(t) - s * ry * math.sin(t), cy + s * rx * math.cos(t) + c * ry * math.sin(t))
                     for t in angles)


def nucleus_prefix(probs, top_p):
    """Smallest most-probable-first prefix whose mass reaches ``top_p`` (ties keep the lower index)."""
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    out, total = [], 0.0
    for i in order:
        out.append(i)
        total += probs[i]
        if total >= top_p:
            break
    return out
