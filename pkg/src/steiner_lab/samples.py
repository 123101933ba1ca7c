"""Sample fields used by the scenario runner and the test-suite."""

from __future__ import annotations

import numpy as np

from .grid import GridField


def smooth_bump(r2: np.ndarray) -> np.ndarray:
    """``exp(1 - 1/(1 - r2))`` inside the unit disk, zero outside (``C^infinity``)."""
    inside = r2 < 1.0
    safe = np.where(inside, 1.0 - r2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)


def random_compact_bumps(rng: np.random.Generator, L: float = 4.0, n: int = 257,
                         max_bumps: int = 3) -> GridField:
    """Sum of one to ``max_bumps`` rotated elliptic smooth bumps inside ``[-L/2, L/2]^2``."""
    k = int(rng.integers(1, max_bumps + 1))
    specs = []
    for _ in range(k):
        q = rng.uniform(-0.3 * L, 0.3 * L, 2)
        width = rng.uniform(0.15 * L, 0.4 * L)
        specs.append((q, width, rng.uniform(0.5, 1.5), rng.uniform(0.3, 1.0), rng.uniform(0.0, np.pi)))

    def func(a, b):
        out = np.zeros_like(a)
        for q, w, amp, ecc, th in specs:
            c, s = np.cos(th), np.sin(th)
            y1 = ((a - q[0]) * c + (b - q[1]) * s) / w
            y2 = (-(a - q[0]) * s + (b - q[1]) * c) / (w * ecc)
            out = out + amp * smooth_bump(y1 * y1 + y2 * y2)
        return out

    return GridField.from_function(L, n, func)


def random_smooth_field(rng: np.random.Generator, L: float = 8.0, n: int = 257) -> GridField:
    """Random Gaussian mixture plus a small random affine part."""
    k = int(rng.integers(2, 6))
    centers = rng.uniform(-0.5 * L, 0.5 * L, (k, 2))
    widths = rng.uniform(0.5, 2.0, k)
    amps = rng.normal(0.0, 1.0, k)
    slope = rng.normal(0.0, 0.1, 2)

    def func(a, b):
        out = slope[0] * a + slope[1] * b
        for (c1, c2), w, amp in zip(centers, widths, amps):
            out = out + amp * np.exp(-((a - c1) ** 2 + (b - c2) ** 2) / (w * w))
        return out

    return GridField.from_function(L, n, func)


def compact_polynomial_bump(L: float, n: int, center=(0.5, 0.0)) -> GridField:
    """``max(0, 1 - |x - center|^2)^2``."""
    c1, c2 = center
    return GridField.from_function(
        L, n, lambda a, b: np.maximum(0.0, 1.0 - (a - c1) ** 2 - (b - c2) ** 2) ** 2)
