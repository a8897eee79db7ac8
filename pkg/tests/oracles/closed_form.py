"""Closed-form reference solutions used as test oracles."""

import numpy as np


def trilaterate(p1, p2, p3, r1, r2, r3):
    """Closed-form intersection of three spheres (both solutions)."""
    ex = (p2 - p1) / np.linalg.norm(p2 - p1)
    i = ex @ (p3 - p1)
    ey = p3 - p1 - i * ex
    ey /= np.linalg.norm(ey)
    ez = np.cross(ex, ey)
    d = np.linalg.norm(p2 - p1)
    j = ey @ (p3 - p1)
    x = (r1**2 - r2**2 + d**2) / (2 * d)
    y = (r1**2 - r3**2 + i**2 + j**2) / (2 * j) - i / j * x
    z = np.sqrt(max(r1**2 - x**2 - y**2, 0.0))
    base = p1 + x * ex + y * ey
    return base + z * ez, base - z * ez
