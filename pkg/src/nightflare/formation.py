"""Forward flare model: scatter kernels, glow, ghosts and their composition.

A flared frame is built additively in linear light::

    R = clip(I0 + glow + ghost, 0, 1)

where the glow is the masked light source spread by a multiply scattered
kernel and the ghost is an attenuated, blurred copy of the source mirrored
through the optical center.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from . import raster
from .errors import DimensionError, ParameterError, SourceMissingError

RNG_NAME = "PCG64"


@dataclass
class OpticalConfig:
    """Lens and flare parameters shared by synthesis and removal.

    ``center`` is ``(cx, cy)`` in pixel coordinates (x = column, y = row);
    ``None`` means the geometric image center.
    """

    center: tuple = None
    n1: float = 1.0
    n2: float = 1.5
    ghost_attenuation: float = 0.9
    ghost_blur_sigma: float = 2.0
    scatter_alpha: float = 0.9
    scatter_orders: int = 2
    order_decay: float = 0.85
    kernel_size: int = 31
    peak_sigma: float = 1.5
    halo_width: float = 10.0
    gamma_range: tuple = (1.4, 1.8)
    source_xy: list = None
    source_radius: float = 2.5
    source_radiance: float = 2.0

    def __post_init__(self):
        if self.n1 <= 0 or self.n2 <= 0:
            raise ParameterError("refractive indices must be positive")
        if not 0.0 <= self.scatter_alpha <= 1.0:
            raise ParameterError(f"scatter_alpha={self.scatter_alpha} outside [0, 1]")
        if not 0.0 <= self.ghost_attenuation <= 1.0:
            raise ParameterError("ghost_attenuation outside [0, 1]")
        if self.ghost_blur_sigma < 0:
            raise ParameterError("ghost_blur_sigma must be >= 0")
        if not 0.0 <= self.order_decay < 1.0:
            raise ParameterError("order_decay outside [0, 1)")
        if self.source_radiance <= 0:
            raise ParameterError("source_radiance must be positive")
        if self.kernel_size % 2 == 0:
            raise ParameterError("kernel_size must be odd")
        if self.center is not None:
            self.center = tuple(float(c) for c in self.center)
        self.gamma_range = tuple(float(g) for g in self.gamma_range)

    def resolve_center(self, shape):
        """Optical center for an image of ``shape``; must lie inside the frame."""
        h, w = shape[:2]
        cx, cy = self.center if self.center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
        if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
            raise ParameterError(f"optical center {(cx, cy)} outside {w}x{h} frame")
        return cx, cy

    def to_dict(self):
        d = asdict(self)
        for key in ("center", "gamma_range"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown optics fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FlareScene:
    """Additive decomposition of a flared frame."""

    ideal: np.ndarray
    glow: np.ndarray
    ghost: np.ndarray
    source_mask: np.ndarray
    ghost_mask: np.ndarray
    meta: dict = field(default_factory=dict)


# -- ray optics ---------------------------------------------------------------

def normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def refract(l, n, n1, n2):
    """Refracted direction of unit ray ``l`` at a surface with unit normal ``n``.

    The normal points back toward the incident side (``l . n < 0``).
    Returns ``None`` on total internal reflection.
    """
    l = np.asarray(l, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    c = float(np.dot(l, n))
    if c > 0:
        raise ParameterError("ray must travel into the surface (l . n < 0)")
    eta = n1 / n2
    radicand = 1.0 - eta * eta * (1.0 - c * c)
    if radicand < 0:
        return None
    return eta * l - (math.sqrt(radicand) + eta * c) * n


def reflect(l, n):
    """Mirror direction ``l - 2 (l . n) n``."""
    l = np.asarray(l, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return l - 2.0 * np.dot(l, n) * n


# -- kernels and layers -------------------------------------------------------

def halo_kernel(width, size, beta=1.5):
    """Heavy-tailed Moffat profile, truncated to ``size`` and normalized."""
    ax = np.arange(size) - size // 2
    r2 = ax[:, None] ** 2 + ax[None, :] ** 2
    k = (1.0 + r2 / float(width) ** 2) ** (-beta)
    return k / k.sum()


def compose_scatter_kernel(cfg, peak, halo):
    """``(1 - alpha) * delta + alpha * (peak + halo) / 2``, renormalized."""
    alpha = cfg.scatter_alpha
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha={alpha} outside [0, 1]")
    peak = raster.check_kernel(peak)
    halo = raster.check_kernel(halo)
    size = max(peak.shape[0], halo.shape[0])
    k = (1.0 - alpha) * raster.delta_kernel(size)
    k = k + alpha * 0.5 * (raster.embed_kernel(peak, size) + raster.embed_kernel(halo, size))
    return k / k.sum()


def scatter_kernel(cfg):
    """The configured scatter kernel built from a Gaussian peak and a halo."""
    size = cfg.kernel_size
    peak = raster.gaussian_kernel(cfg.peak_sigma, size)
    return compose_scatter_kernel(cfg, peak, halo_kernel(cfg.halo_width, size))


def render_glow(clean, m_s, k, cfg):
    """Multi-order glow layer, ``sum_i decay**i * ((clean * m_s) * k^{*i})``.

    The i-fold self-convolution is applied as i successive passes, each with
    reflect padding. The layer is additive and left unclamped.
    """
    clean = raster.as_image(clean)
    m_s = raster.as_mask(m_s, clean.shape)
    k = raster.check_kernel(k)
    if cfg.scatter_orders < 1:
        raise ParameterError("scatter_orders must be >= 1")
    src = clean * m_s[:, :, None]
    layer = np.zeros_like(src)
    term = src
    for i in range(1, cfg.scatter_orders + 1):
        term = raster.convolve2d(term, k)
        layer += cfg.order_decay ** i * term
    return layer


def point_reflect(a, center):
    """Mirror an image or mask through ``center``: out(x, y) = a(2cx - x, 2cy - y).

    Source coordinates are rounded half-up; pixels whose preimage falls
    outside the frame become zero.
    """
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[:2]
    cx, cy = center
    xs = np.floor(2 * cx - np.arange(w) + 0.5).astype(int)
    ys = np.floor(2 * cy - np.arange(h) + 0.5).astype(int)
    vx = (xs >= 0) & (xs < w)
    vy = (ys >= 0) & (ys < h)
    out = np.zeros_like(a)
    out[np.ix_(vy, vx)] = a[np.ix_(ys[vy], xs[vx])]
    return out


def dilate(mask, radius):
    """Binary dilation by a disc of integer ``radius`` pixels."""
    m = np.asarray(mask) > 0
    if radius <= 0:
        return m.astype(np.float64)
    ax = np.arange(-radius, radius + 1)
    disc = ax[:, None] ** 2 + ax[None, :] ** 2 <= radius * radius
    return ndimage.binary_dilation(m, structure=disc).astype(np.float64)


def render_ghost(clean, m_s, cfg):
    """Ghost layer and ghost-region mask for the masked source.

    Returns ``(layer, mask)``. An empty source mask gives a zero layer, an
    empty mask and a ``RuntimeWarning``.
    """
    clean = raster.as_image(clean)
    m_s = raster.as_mask(m_s, clean.shape)
    center = cfg.resolve_center(clean.shape)
    if not np.any(m_s > 0):
        warnings.warn("empty source mask: ghost layer is zero", RuntimeWarning, stacklevel=2)
        return np.zeros_like(clean), np.zeros(clean.shape[:2])
    mirrored = point_reflect(clean * m_s[:, :, None], center)
    layer = cfg.ghost_attenuation * raster.gaussian_blur(mirrored, cfg.ghost_blur_sigma)
    mask = dilate(point_reflect(m_s > 0, center), int(math.ceil(2 * cfg.ghost_blur_sigma)))
    return layer, mask


def compose_joint(scene):
    """Flared frame ``clip(ideal + glow + ghost, 0, 1)``."""
    shapes = {scene.ideal.shape, scene.glow.shape, scene.ghost.shape}
    if len(shapes) != 1:
        raise DimensionError(f"layer shapes disagree: {sorted(shapes)}")
    return np.clip(scene.ideal + scene.glow + scene.ghost, 0.0, 1.0)


def stamp_sources(clean, positions, radius):
    """Paint saturated discs of ``radius`` at each ``(x, y)`` position."""
    out = raster.as_image(clean).copy()
    h, w = out.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    for x, y in positions:
        out[(xx - x) ** 2 + (yy - y) ** 2 <= radius * radius] = 1.0
    return out


def synth_pair(clean, cfg, seed):
    """Synthesize a (flared, clean) training pair from a clean frame.

    Draws a tone exponent ``gamma ~ U(gamma_range)`` from a seeded PCG64
    generator and shapes both flare layers by ``x**gamma`` before they are
    added. Saturated pixels understate how bright a lamp really is, so the
    glow is scattered from the source scaled by ``cfg.source_radiance``.
    When ``cfg.source_xy`` is set, saturated discs are painted into
    the clean frame first and the painted frame is the ground truth.
    """
    from .lightsource import extract_light_mask

    clean = raster.as_image(clean)
    if cfg.source_xy:
        clean = stamp_sources(clean, cfg.source_xy, cfg.source_radius)
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = cfg.gamma_range
    gamma = float(rng.uniform(lo, hi))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        det = extract_light_mask(clean, percentile=0.5, min_area=1)
    if not det.components:
        raise SourceMissingError("no pixel above the source threshold and no source_xy given")
    m_s = det.mask

    hdr = clean * cfg.source_radiance
    glow = render_glow(hdr, m_s, scatter_kernel(cfg), cfg) ** gamma
    ghost, m_r = render_ghost(clean, m_s, cfg)
    ghost = ghost ** gamma
    scene = FlareScene(
        ideal=clean, glow=glow, ghost=ghost, source_mask=m_s, ghost_mask=m_r,
        meta={"seed": int(seed), "gamma": gamma, "rng": RNG_NAME, "optics": cfg.to_dict()},
    )
    return compose_joint(scene), clean, scene
