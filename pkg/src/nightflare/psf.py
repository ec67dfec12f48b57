"""Learned glow kernel and the brightness operation layer.

The glow candidate is the masked source convolved with a softmax-normalized
kernel. Three global factors then align its brightness with the input::

    L = B_l * ad_sigma * ad_phi * ad_beta
"""

import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from . import raster
from .errors import DimensionError, ParameterError

BRI_EPS = 1e-4
BETA_MAX = 10.0


@dataclass
class KernelParams:
    logits: np.ndarray
    size: int
    seed: int = 0

    @classmethod
    def from_seed(cls, size=33, seed=0):
        """Logits drawn from U[0, 1] with a seeded PCG64 generator."""
        if size % 2 == 0 or size < 3:
            raise ParameterError(f"kernel size must be odd and >= 3, got {size}")
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(rng.uniform(0.0, 1.0, size=(size, size)), size, seed)


@dataclass
class BolParams:
    mu: float = 1.2
    eta: float = 0.2
    nu: float = 0.05
    percentile: float = 0.95
    window: int = 7

    def __post_init__(self):
        if not 0.0 < self.percentile < 1.0:
            raise ParameterError("percentile must lie in (0, 1)")
        if (self.mu - self.eta) < 0 or self.nu <= 0:
            # keeps ad_sigma > 0 for luminance in [0, 1]
            raise ParameterError("need mu >= eta and nu > 0")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown bol fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def gen_kernel(p):
    """Softmax over all logits, reshaped to ``size x size``."""
    if p.size % 2 == 0 or p.size < 3:
        raise ParameterError(f"kernel size must be odd and >= 3, got {p.size}")
    logits = np.asarray(p.logits, dtype=np.float64)
    if logits.shape != (p.size, p.size):
        raise DimensionError(f"logits shape {logits.shape} != ({p.size}, {p.size})")
    return softmax(logits.ravel()).reshape(p.size, p.size)


def softmax_jacobian(k):
    """Jacobian d k_i / d z_j = k_i (delta_ij - k_j) of a flattened kernel."""
    s = np.asarray(k, dtype=np.float64).ravel()
    return np.diag(s) - np.outer(s, s)


def softmax_vjp(k, g):
    """Pull a kernel-shaped gradient ``g`` back through the softmax."""
    return k * (g - np.sum(k * g))


def render_prior_glow(r, m_s, k, method="frequency"):
    """Glow candidate ``B_l = (r * m_s) conv k``."""
    r = raster.as_image(r)
    m_s = raster.as_mask(m_s, r.shape)
    return raster.convolve2d(r * m_s[:, :, None], k, method)


def _glob(img):
    return float(np.mean(raster.luminance(img)))


def brightness_sigma(r, m_s, p):
    """``(mu - eta) * q + nu`` with ``q`` the luminance quantile inside the source."""
    r = raster.as_image(r)
    m_s = raster.as_mask(m_s, r.shape)
    inside = m_s > 0
    if not np.any(inside):
        return float(p.nu)
    q = float(np.quantile(raster.luminance(r)[:, :, 0][inside], p.percentile))
    return float(p.mu * q - p.eta * q + p.nu)


def brightness_phi(b_l1, r):
    """Ratio of global mean luminances when the glow is dimmer than ``r``, else 1."""
    g1 = _glob(b_l1)
    gr = _glob(r)
    if g1 <= 0.0 or not g1 < gr:
        return 1.0
    return gr / g1


def local_brightness(r, m_s, window):
    """Largest ``window``-box mean luminance of ``r`` taken over pixels outside ``m_s``.

    Only windows centered outside the mask count. Zero when the mask covers
    the frame.
    """
    lum = raster.luminance(r)[:, :, 0]
    out = (raster.as_mask(m_s, lum.shape) <= 0).astype(np.float64)
    if not np.any(out):
        return 0.0
    num = ndimage.uniform_filter(lum * out, window, mode="constant")
    den = ndimage.uniform_filter(out, window, mode="constant")
    valid = (out > 0) & (den > 0)
    return float(np.max(num[valid] / den[valid]))


def brightness_beta(b_l2, r, m_s, window=7, loc=None):
    """``(max(r) - local(r outside m_s)) / min(glob(b_l2), glob(r))``, clamped.

    The denominator is floored at 1e-4 and the result clipped to
    ``[1e-4, 10]``. ``loc`` may carry a precomputed local brightness.
    """
    r = raster.as_image(r)
    if np.shape(b_l2)[:2] != r.shape[:2]:
        raise DimensionError("glow and image shapes differ")
    bri_max = float(np.max(raster.luminance(r)))
    if loc is None:
        loc = local_brightness(r, m_s, window)
    bri_min = max(min(_glob(b_l2), _glob(r)), BRI_EPS)
    return float(np.clip((bri_max - loc) / bri_min, BRI_EPS, BETA_MAX))


def bol_factors(b_l, r, m_s, p, loc=None):
    """The three factors ``(ad_sigma, ad_phi, ad_beta)`` applied in sequence."""
    sigma = brightness_sigma(r, m_s, p)
    b1 = b_l * sigma
    phi = brightness_phi(b1, r)
    beta = brightness_beta(b1 * phi, r, m_s, p.window, loc)
    return sigma, phi, beta


def apply_bol(b_l, r, m_s, p):
    """Brightness-aligned glow ``L``."""
    b_l = raster.as_image(b_l)
    r = raster.as_image(r)
    if b_l.shape != r.shape:
        raise DimensionError(f"shape mismatch {b_l.shape} vs {r.shape}")
    sigma, phi, beta = bol_factors(b_l, r, m_s, p)
    return b_l * (sigma * phi * beta)


def kernel_to_json(k, path=None):
    """Row-major dump ``{"size": n, "weights": [...]}``; written to ``path`` if given."""
    k = np.asarray(k, dtype=np.float64)
    doc = {"size": int(k.shape[0]), "weights": [float(v) for v in k.ravel()]}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh)
    return doc


def kernel_heatmap(k):
    """Kernel scaled to its peak, as a single-channel image for inspection."""
    k = np.asarray(k, dtype=np.float64)
    return (k / k.max())[:, :, None]
