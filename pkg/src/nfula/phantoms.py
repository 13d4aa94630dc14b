"""Built-in test images with values in [0, 1]."""

from __future__ import annotations

import numpy as np


def _grid(n):
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    return (xx - c) / (n / 2.0), (yy - c) / (n / 2.0)


def disk(n=32, radius=0.6, value=0.8, center=(0.0, 0.0)):
    """Filled disk; ``radius`` and ``center`` are in units of the half side."""
    x, y = _grid(n)
    return np.where((x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius ** 2, value, 0.0)


# (value, a, b, x0, y0, angle in degrees), additive like the Shepp-Logan head
_ELLIPSES = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
]


def ellipses(n=32, shapes=None):
    """Sum of filled ellipses (defaults to a Shepp-Logan-like head), clipped to [0, 1]."""
    x, y = _grid(n)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, ang in (shapes or _ELLIPSES):
        t = np.deg2rad(ang)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def shepp_logan(n=32):
    return ellipses(n)


def checkerboard(n=32, tiles=4, lo=0.2, hi=0.8):
    idx = (np.arange(n) * tiles) // n
    return np.where((idx[:, None] + idx[None, :]) % 2 == 0, hi, lo)


def random_blobs(n, rng, n_shapes=None):
    """Random superposition of ellipses on a dark background, values in [0, 1]."""
    k = int(rng.integers(2, 6)) if n_shapes is None else n_shapes
    u = rng.uniform((k, 6))
    shapes = []
    for row in u:
        value = 0.3 + 0.6 * row[0]
        a = 0.15 + 0.45 * row[1]
        b = 0.15 + 0.45 * row[2]
        x0 = -0.6 + 1.2 * row[3]
        y0 = -0.6 + 1.2 * row[4]
        shapes.append((value, a, b, x0, y0, 180.0 * row[5]))
    x, y = _grid(n)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, ang in shapes:
        t = np.deg2rad(ang)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        img[inside] = value
    return img


PHANTOMS = {"disk": disk, "shepp": shepp_logan, "ellipses": ellipses, "checkerboard": checkerboard}


def phantom(name, n=32):
    try:
        return PHANTOMS[name](n)
    except KeyError:
        raise ValueError(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS)}") from None
