"""Light-source detection and the feathered light-source map."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import raster
from .errors import ParameterError

LUMA_FLOOR = 0.85
MAX_HOLE = 4
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Component:
    centroid: tuple  # (x, y)
    area: int
    peak: float


@dataclass
class SourceDetection:
    mask: np.ndarray
    components: list = field(default_factory=list)
    threshold_used: float = LUMA_FLOOR
    warning: str = None

    @property
    def empty(self):
        return not self.components


def extract_light_mask(r, percentile=0.99, min_area=9):
    """Segment saturated light sources in ``r``.

    The luminance threshold is the larger of the ``percentile`` quantile and
    an absolute floor of 0.85. Holes of at most 4 pixels are filled, then
    8-connected components smaller than ``min_area`` are dropped.
    """
    r = raster.as_image(r)
    if not 0.0 < percentile < 1.0:
        raise ParameterError("percentile must lie in (0, 1)")
    lum = raster.luminance(r)[:, :, 0]
    thr = max(float(np.quantile(lum, percentile)), LUMA_FLOOR)
    cand = lum >= thr
    if not np.any(cand):
        msg = f"no pixel reaches luminance {thr:.3f}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return SourceDetection(np.zeros(lum.shape), [], thr, msg)

    holes = ndimage.binary_fill_holes(cand) & ~cand
    hole_lab, nh = ndimage.label(holes)
    if nh:
        sizes = np.bincount(hole_lab.ravel())
        small = sizes <= MAX_HOLE
        small[0] = False
        cand = cand | small[hole_lab]

    lab, n = ndimage.label(cand, structure=_EIGHT)
    keep = np.zeros(lum.shape, dtype=bool)
    comps = []
    for i in range(1, n + 1):
        region = lab == i
        area = int(region.sum())
        if area < min_area:
            continue
        keep |= region
        ys, xs = np.nonzero(region)
        comps.append(Component((float(xs.mean()), float(ys.mean())), area, float(lum[region].max())))
    warning = None
    if not comps:
        warning = f"all components smaller than {min_area} px"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return SourceDetection(keep.astype(np.float64), comps, thr, warning)


def detection_from_mask(r, mask):
    """Wrap a given source mask as a detection, with 8-connected components."""
    r = raster.as_image(r)
    m = raster.as_mask(mask, r.shape) > 0
    lum = raster.luminance(r)[:, :, 0]
    lab, n = ndimage.label(m, structure=_EIGHT)
    comps = []
    for i in range(1, n + 1):
        ys, xs = np.nonzero(lab == i)
        comps.append(Component((float(xs.mean()), float(ys.mean())), int(xs.size), float(lum[ys, xs].max())))
    thr = float(lum[m].min()) if comps else LUMA_FLOOR
    return SourceDetection(m.astype(np.float64), comps, thr)


def weighted_light_map(r, det, feather_sigma=1.0):
    """Source pixels of ``r`` (``r * M_s``) softened by a Gaussian of ``feather_sigma``."""
    r = raster.as_image(r)
    m = raster.as_mask(det.mask, r.shape)
    return raster.gaussian_blur(r * m[:, :, None], feather_sigma)
