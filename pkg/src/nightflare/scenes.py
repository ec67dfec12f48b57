"""Synthetic test imagery: periodic textures and small night scenes."""

import numpy as np

from .formation import stamp_sources

TEXTURES = ("stripes", "checker", "tile", "plaid", "bricks", "dots", "waves")


def texture(kind, size=128, seed=0):
    """A 3-channel periodic texture in [0, 1] with slight sensor noise."""
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "stripes":
        period = int(rng.integers(6, 12))
        base = 0.5 + 0.4 * np.sin(2 * np.pi * (xx + yy) / period)
    elif kind == "checker":
        cell = int(rng.integers(3, 7))
        base = 0.25 + 0.5 * (((yy // cell) + (xx // cell)) % 2)
    elif kind == "tile":
        period = int(rng.integers(6, 11))
        tile = rng.uniform(0.1, 0.9, size=(period, period))
        base = np.tile(tile, (size // period + 1, size // period + 1))[:size, :size]
    elif kind == "plaid":
        px, py = int(rng.integers(7, 13)), int(rng.integers(7, 13))
        base = 0.5 + 0.2 * np.cos(2 * np.pi * xx / px) + 0.2 * np.cos(2 * np.pi * yy / py)
    elif kind == "bricks":
        bh, bw = int(rng.integers(5, 8)), int(rng.integers(10, 15))
        row = yy // bh
        shifted = (xx + (row % 2) * (bw // 2)) % bw
        base = np.where((yy % bh == 0) | (shifted == 0), 0.85, 0.35)
    elif kind == "dots":
        period = int(rng.integers(7, 11))
        d2 = ((xx % period) - period / 2) ** 2 + ((yy % period) - period / 2) ** 2
        base = np.where(d2 < (period / 3.5) ** 2, 0.8, 0.2)
    elif kind == "waves":
        period = int(rng.integers(8, 14))
        base = 0.5 + 0.35 * np.sin(2 * np.pi * xx / period + 1.5 * np.sin(2 * np.pi * yy / (2 * period)))
    else:
        raise ValueError(f"unknown texture {kind!r}")
    tint = rng.uniform(0.7, 1.0, size=3)
    img = base[:, :, None] * tint[None, None, :]
    img = img + rng.normal(0.0, 0.005, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def night_scene(size=128, seed=0, n_sources=2, source_radius=4.0):
    """Dark urban-looking frame with saturated lamps; returns ``(image, positions)``.

    Lamps are placed away from the frame center so their mirrored ghosts do
    not overlap them.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    sky = 0.03 + 0.05 * (1 - yy / size)
    img = np.repeat(sky[:, :, None], 3, axis=2) * np.array([0.6, 0.7, 1.0])
    # building blocks with lit windows
    x = 0
    while x < size:
        bw = int(rng.integers(14, 30))
        top = int(rng.integers(size // 3, int(size * 0.75)))
        shade = rng.uniform(0.05, 0.12)
        img[top:, x:x + bw] = shade * np.array([1.0, 0.95, 0.9])
        for wy in range(top + 3, size - 3, 6):
            for wx in range(x + 2, min(x + bw - 3, size - 3), 5):
                if rng.random() < 0.45:
                    img[wy:wy + 3, wx:wx + 2] = rng.uniform(0.3, 0.6) * np.array([1.0, 0.85, 0.55])
        x += bw + int(rng.integers(1, 4))
    img = img + rng.normal(0.0, 0.004, size=img.shape)
    img = np.clip(img, 0.0, 0.7)

    c = (size - 1) / 2.0
    positions = []
    while len(positions) < n_sources:
        px, py = rng.uniform(0.12 * size, 0.88 * size, size=2)
        if np.hypot(px - c, py - c) < 0.25 * size:
            continue
        if any(np.hypot(px - qx, py - qy) < 0.2 * size for qx, qy in positions):
            continue
        positions.append((float(np.round(px)), float(np.round(py))))
    return stamp_sources(img, positions, source_radius), positions
