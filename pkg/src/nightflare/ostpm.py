"""Ghost-region prediction by optical symmetry and exemplar-based inpainting.

The ghost mask is the light-source mask mirrored through the optical center.
The masked region is then filled patch by patch: the fill front pixel with the
highest ``confidence * data`` priority is filled first, from the known patch
that minimises a matching cost combining color SSD, distance and isophote
agreement.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from . import raster
from .errors import ContractError, SearchExhaustedError, StallError
from .formation import dilate, point_reflect

ALPHA_NORM = 1.0
_EIGHT = np.ones((3, 3), dtype=bool)


def derive_ghost_mask(m_s, center, dilation=2):
    """Mirror ``m_s`` through ``center`` (``(cx, cy)``) and dilate by ``dilation`` px."""
    m_s = raster.as_mask(m_s)
    h, w = m_s.shape
    cx, cy = center
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ContractError(f"center {center} outside the frame")
    return dilate(point_reflect(m_s > 0, center), int(dilation))


def isophote_field(lum, known):
    """Isophote ``(-d/dy, d/dx)`` of ``lum`` at every pixel, using known pixels only.

    Central differences where both axis neighbours are known, one-sided ones
    where the pixel itself and one neighbour are known, zero otherwise.
    Returns ``(ix, iy)`` arrays (x = column component).
    """
    def deriv(a, k):
        # derivative along axis 1 of a 2-D array
        d = np.zeros_like(a)
        kl = np.zeros_like(k)
        kr = np.zeros_like(k)
        kl[:, 1:] = k[:, :-1]
        kr[:, :-1] = k[:, 1:]
        al = np.zeros_like(a)
        ar = np.zeros_like(a)
        al[:, 1:] = a[:, :-1]
        ar[:, :-1] = a[:, 1:]
        both = kl & kr
        d[both] = 0.5 * (ar[both] - al[both])
        fwd = ~both & k & kr
        d[fwd] = ar[fwd] - a[fwd]
        bwd = ~both & k & kl & ~kr
        d[bwd] = a[bwd] - al[bwd]
        return d

    known = np.asarray(known, dtype=bool)
    dx = deriv(lum, known)
    dy = deriv(lum.T, known.T).T
    return -dy, dx


def isophote(img, p, known=None):
    """Isophote vector ``(ix, iy)`` of ``img``'s luminance at pixel ``p = (row, col)``."""
    lum = raster.luminance(img)[:, :, 0]
    if known is None:
        known = np.ones(lum.shape, dtype=bool)
    i, j = p
    r0, r1 = max(i - 1, 0), min(i + 2, lum.shape[0])
    c0, c1 = max(j - 1, 0), min(j + 2, lum.shape[1])
    ix, iy = isophote_field(lum[r0:r1, c0:c1], np.asarray(known, bool)[r0:r1, c0:c1])
    return np.array([ix[i - r0, j - c0], iy[i - r0, j - c0]])


@dataclass
class InpaintState:
    """Working image, remaining fill region and per-pixel confidence."""

    image: np.ndarray
    fill_mask: np.ndarray
    confidence: np.ndarray
    patch_radius: int = 4
    front: list = field(default_factory=list)

    @classmethod
    def start(cls, r, m_r, patch_radius=4):
        image = raster.as_image(r).copy()
        fill = raster.as_mask(m_r, image.shape) > 0
        image[fill] = 0.0
        conf = (~fill).astype(np.float64)
        state = cls(image, fill, conf, patch_radius)
        state.refresh()
        return state

    @property
    def known(self):
        return ~self.fill_mask

    def refresh(self):
        """Recompute the fill front and the cached luminance/isophote fields."""
        outside = ndimage.binary_dilation(~self.fill_mask, structure=_EIGHT)
        rows, cols = np.nonzero(self.fill_mask & outside)
        self.front = list(zip(rows.tolist(), cols.tolist()))
        self._front_set = set(self.front)
        self._lum = raster.luminance(self.image)[:, :, 0]
        ix, iy = isophote_field(self._lum, self.known)
        self._iso = np.stack([ix, iy], axis=-1)
        self._iso_mag = np.hypot(ix, iy)
        fm = self.fill_mask.astype(np.float64)
        self._nx = ndimage.sobel(fm, axis=1, mode="constant")
        self._ny = ndimage.sobel(fm, axis=0, mode="constant")

    def patch_bounds(self, p):
        i, j = p
        r = self.patch_radius
        h, w = self.fill_mask.shape
        return max(i - r, 0), min(i + r + 1, h), max(j - r, 0), min(j + r + 1, w)

    def front_isophote(self, p):
        """Strongest known isophote in the 3x3 neighbourhood of ``p``."""
        i, j = p
        h, w = self.fill_mask.shape
        best = np.zeros(2)
        best_mag = 0.0
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if 0 <= a < h and 0 <= b < w and not self.fill_mask[a, b]:
                    if self._iso_mag[a, b] > best_mag:
                        best_mag = self._iso_mag[a, b]
                        best = self._iso[a, b]
        return best

    def front_normal(self, p):
        n = np.array([self._nx[p], self._ny[p]])
        norm = np.hypot(*n)
        return n / norm if norm > 0 else np.zeros(2)


def confidence_term(state, p):
    r0, r1, c0, c1 = state.patch_bounds(p)
    known = ~state.fill_mask[r0:r1, c0:c1]
    return float(np.sum(state.confidence[r0:r1, c0:c1][known]) / known.size)


def data_term(iso, normal, alpha_norm=ALPHA_NORM):
    return float(abs(np.dot(iso, normal)) / alpha_norm)


def priority(state, p):
    """Fill priority ``C(p) * T(p)`` of front pixel ``p = (row, col)``."""
    p = tuple(int(v) for v in p)
    if p not in state._front_set:
        raise ContractError(f"{p} is not on the fill front")
    return confidence_term(state, p) * data_term(state.front_isophote(p), state.front_normal(p))


def best_patch(state, p, search_window=64):
    """Center ``(row, col)`` of the fully known patch that best matches the patch at ``p``.

    Cost is ``SSD + rho + | |iso_s| - |iso_p| | - cos(theta)``: SSD over the
    known target pixels, ``rho`` the center distance over the search-window
    diagonal, ``theta`` the angle between the two isophotes. Ties go to the
    smallest ``(row, col)``.
    """
    i, j = p
    r = state.patch_radius
    h, w = state.fill_mask.shape
    size = 2 * r + 1
    r0, r1, c0, c1 = state.patch_bounds(p)

    lo_i, hi_i = max(r, i - search_window), min(h - 1 - r, i + search_window)
    lo_j, hi_j = max(r, j - search_window), min(w - 1 - r, j + search_window)
    if lo_i > hi_i or lo_j > hi_j:
        raise SearchExhaustedError(f"no candidate centers near {p}")

    unknown = state.fill_mask.astype(np.float64)
    sub = unknown[lo_i - r:hi_i + r + 1, lo_j - r:hi_j + r + 1]
    counts = sliding_window_view(sub, (size, size)).sum(axis=(2, 3))
    ok = counts == 0
    if not np.any(ok):
        raise SearchExhaustedError(f"no fully known patch within {search_window} px of {p}")

    img = state.image[lo_i - r:hi_i + r + 1, lo_j - r:hi_j + r + 1]
    wins = sliding_window_view(img, (size, size), axis=(0, 1))  # (ni, nj, C, size, size)
    a0, a1 = r0 - i + r, r1 - i + r
    b0, b1 = c0 - j + r, c1 - j + r
    cand = wins[:, :, :, a0:a1, b0:b1][ok]  # (n, C, ph, pw)
    tgt = np.moveaxis(state.image[r0:r1, c0:c1], -1, 0)
    tk = ~state.fill_mask[r0:r1, c0:c1]
    ssd = np.sum(((cand - tgt[None]) ** 2) * tk[None, None], axis=(1, 2, 3))

    ci, cj = np.nonzero(ok)
    ci = ci + lo_i
    cj = cj + lo_j
    rho = np.hypot(ci - i, cj - j) / (math.sqrt(2.0) * (2 * search_window + 1))

    iso_p = state.front_isophote(p)
    mag_p = float(np.hypot(*iso_p))
    iso_s = state._iso[ci, cj]
    mag_s = state._iso_mag[ci, cj]
    grad = np.abs(mag_s - mag_p)
    cos = np.zeros_like(mag_s)
    nz = (mag_s > 0) & (mag_p > 0)
    cos[nz] = (iso_s[nz] @ iso_p) / (mag_s[nz] * mag_p)

    diff = ssd + rho + grad - cos
    k = int(np.argmin(diff))
    return int(ci[k]), int(cj[k])


def _select(state):
    best = None
    for p in state.front:
        c = confidence_term(state, p)
        pr = c * data_term(state.front_isophote(p), state.front_normal(p))
        key = (pr, c)
        if best is None or key > best[0]:
            best = (key, p)
    return best[1], best[0][1]


def inpaint(r, m_r, patch_radius=4, search_window=64, on_iter=None):
    """Fill the region ``m_r`` of ``r`` by priority-ordered exemplar copying.

    Pixels outside ``m_r`` are returned unchanged. ``on_iter(state, p)`` is
    called before each fill step, for debugging.
    """
    r = raster.as_image(r)
    mask = raster.as_mask(m_r, r.shape) > 0
    if not np.any(mask):
        return r.copy()
    if mask.sum() >= 0.5 * mask.size:
        raise ContractError("fill region must cover less than half the frame")
    state = InpaintState.start(r, mask, patch_radius)
    h, w = mask.shape
    while np.any(state.fill_mask):
        p, c = _select(state)
        if on_iter is not None:
            on_iter(state, p)
        sw = search_window
        while True:
            try:
                s = best_patch(state, p, sw)
                break
            except SearchExhaustedError:
                if sw >= max(h, w):
                    raise
                sw *= 2
        r0, r1, c0, c1 = state.patch_bounds(p)
        hole = state.fill_mask[r0:r1, c0:c1].copy()
        n_before = int(state.fill_mask.sum())
        si, sj = s[0] - p[0], s[1] - p[1]
        src = state.image[r0 + si:r1 + si, c0 + sj:c1 + sj]
        state.image[r0:r1, c0:c1][hole] = src[hole]
        state.confidence[r0:r1, c0:c1][hole] = c
        state.fill_mask[r0:r1, c0:c1][hole] = False
        if int(state.fill_mask.sum()) >= n_before:
            raise StallError(f"fill step at {p} did not shrink the region")
        state.refresh()
    out = r.copy()
    out[mask] = state.image[mask]
    return out
