import warnings

import numpy as np
import pytest
from scipy import ndimage
from hypothesis import given, settings, strategies as st

from nightflare import raster
from nightflare.errors import ParameterError
from nightflare.lightsource import SourceDetection, extract_light_mask, weighted_light_map


def dark(h=32, w=32, c=3, level=0.05):
    return np.full((h, w, c), level)


def test_all_black_gives_empty_detection_with_warning():
    with pytest.warns(RuntimeWarning):
        det = extract_light_mask(np.zeros((16, 16, 3)))
    assert det.empty and not det.mask.any() and det.warning


def test_single_square():
    img = dark()
    img[10:15, 20:25] = 1.0
    det = extract_light_mask(img, min_area=4)
    assert len(det.components) == 1
    comp = det.components[0]
    assert comp.area == 25 and comp.centroid == (22.0, 12.0) and comp.peak == pytest.approx(1.0)
    expected = np.zeros((32, 32))
    expected[10:15, 20:25] = 1
    assert np.array_equal(det.mask, expected)


def test_area_filter_keeps_large_blob():
    img = dark(64, 64)
    img[5, 5:7] = 1.0                   # 2 px
    img[30:35, 30:40] = 1.0             # 50 px
    det = extract_light_mask(img, min_area=10)
    assert [c.area for c in det.components] == [50]
    assert det.mask[5, 5] == 0 and det.mask[32, 35] == 1


def test_small_holes_filled_large_holes_kept():
    img = dark(40, 40)
    img[5:12, 5:12] = 1.0
    img[8, 8] = 0.0                     # 1 px hole
    img[20:32, 20:32] = 1.0
    img[23:29, 23:29] = 0.0             # 36 px hole
    det = extract_light_mask(img, min_area=9)
    assert det.mask[8, 8] == 1
    assert det.mask[25, 25] == 0


def test_diagonal_pixels_join_under_eight_connectivity():
    img = dark(20, 20)
    for i in range(9):
        img[5 + i, 5 + i] = 1.0
    det = extract_light_mask(img, min_area=9)
    assert len(det.components) == 1 and det.components[0].area == 9


def test_floor_rejects_dim_frames_and_bad_percentile():
    img = dark()
    img[5:10, 5:10] = 0.8               # below the 0.85 floor
    with pytest.warns(RuntimeWarning):
        det = extract_light_mask(img)
    assert det.empty and det.threshold_used >= 0.85
    with pytest.raises(ParameterError):
        extract_light_mask(img, percentile=1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 0.9), st.floats(0.01, 0.09))
def test_raising_percentile_never_grows_mask(seed, p, dp):
    rng = np.random.default_rng(seed)
    img = rng.random((24, 24, 3)) ** 0.3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lo = extract_light_mask(img, percentile=p, min_area=1)
        hi = extract_light_mask(img, percentile=p + dp, min_area=1)
    assert np.all(hi.mask <= lo.mask)
    lum = raster.luminance(img)[..., 0]
    # mask support lies above threshold, apart from filled holes
    allowed = ndimage.binary_fill_holes(lum >= lo.threshold_used)
    assert not np.any((lo.mask > 0) & ~allowed)
    assert all(c.area >= 1 for c in lo.components)


def test_weighted_light_map_examples():
    img = dark(21, 21)
    empty = SourceDetection(np.zeros((21, 21)))
    assert not weighted_light_map(img, empty).any()

    img[10, 10] = 1.0
    m = np.zeros((21, 21))
    m[10, 10] = 1
    det = SourceDetection(m)
    assert np.array_equal(weighted_light_map(img, det, 0.0), img * m[..., None])

    splat = weighted_light_map(img, det, 1.0)[..., 0]
    ax = np.arange(21) - 10
    g = np.exp(-0.5 * ax ** 2)
    g2 = np.outer(g, g)
    # compare against a normalized Gaussian, truncated where the implementation truncates
    r = raster.gaussian_kernel(1.0).shape[0] // 2
    ref = np.zeros((21, 21))
    ref[10 - r:11 + r, 10 - r:11 + r] = g2[10 - r:11 + r, 10 - r:11 + r]
    ref /= ref.sum()
    np.testing.assert_allclose(splat, ref, atol=1e-12)
    assert splat.max() <= img.max()
