"""Image containers, file I/O, convolution and full-reference metrics.

Images are plain ``float64`` numpy arrays of shape ``(H, W, C)`` with ``C`` in
{1, 3}, holding linear-light intensities in ``[0, 1]``. Masks are ``(H, W)``
arrays of weights in ``[0, 1]``. Kernels are odd-sized, nonnegative 2-D arrays
that sum to one.
"""

import os

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionError, ImageFormatError, ParameterError

GAMMA = 2.2
REC709 = np.array([0.2126, 0.7152, 0.0722])

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_FORMATS = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


def as_image(a):
    """Return ``a`` as a finite float64 ``(H, W, C)`` array.

    2-D input gains a trailing channel axis.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise DimensionError(f"expected (H, W), (H, W, 1) or (H, W, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite samples")
    return a


def as_mask(m, shape=None):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got {m.shape}")
    if shape is not None and m.shape != tuple(shape[:2]):
        raise DimensionError(f"mask {m.shape} does not match image {tuple(shape[:2])}")
    return m


def check_kernel(k, tol=1e-6):
    """Validate a kernel: odd square extent, nonnegative, unit sum."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ParameterError(f"kernel must be odd and square, got {k.shape}")
    if np.any(k < 0):
        raise ParameterError("kernel has negative weights")
    if abs(k.sum() - 1.0) > tol:
        raise ParameterError(f"kernel sums to {k.sum()!r}, expected 1")
    return k


def delta_kernel(size=1):
    if size % 2 == 0:
        raise ParameterError("kernel size must be odd")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def gaussian_kernel(sigma, size=None):
    """Normalized isotropic Gaussian; default extent ``2*ceil(3*sigma)+1``."""
    if sigma <= 0:
        return delta_kernel(1 if size is None else size)
    if size is None:
        size = 2 * int(np.ceil(3 * sigma)) + 1
    if size % 2 == 0:
        raise ParameterError("kernel size must be odd")
    ax = np.arange(size) - size // 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def embed_kernel(k, size):
    """Zero-pad an odd kernel to a larger odd extent, keeping it centered."""
    pad = (size - k.shape[0]) // 2
    if pad < 0 or (size - k.shape[0]) % 2:
        raise ParameterError(f"cannot embed {k.shape[0]} into {size}")
    return np.pad(k, pad)


# -- file I/O ---------------------------------------------------------------

def load_image(path, gamma_decode=False):
    """Read an 8-bit PNG or binary PPM/PGM into linear ``[0, 1]`` floats."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _FORMATS:
        raise ImageFormatError(f"unsupported extension {ext!r}")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageFormatError(f"unsupported format {im.format!r}")
            if im.mode in ("L", "RGB"):
                data = np.asarray(im)
            elif im.mode in ("LA", "P", "1"):
                data = np.asarray(im.convert("L" if im.mode != "P" else "RGB"))
            elif im.mode == "RGBA":
                data = np.asarray(im.convert("RGB"))
            else:
                raise ImageFormatError(f"unsupported pixel mode {im.mode!r}")
    except OSError as exc:
        if isinstance(exc, FileNotFoundError) or not os.path.exists(path):
            raise
        raise ImageFormatError(str(exc)) from exc
    img = np.clip(as_image(data.astype(np.float64) / 255.0), 0.0, 1.0)
    if gamma_decode:
        img = img ** GAMMA
    return img


def to_uint8(img, gamma_encode=False):
    img = np.clip(as_image(img), 0.0, 1.0)
    if gamma_encode:
        img = img ** (1.0 / GAMMA)
    return np.rint(img * 255.0).astype(np.uint8)


def save_image(img, path, gamma_encode=False):
    """Write an image as 8-bit PNG or binary PPM/PGM (chosen by extension)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _FORMATS:
        raise ImageFormatError(f"unsupported extension {ext!r}")
    data = to_uint8(img, gamma_encode)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    elif ext == ".pgm":
        raise ImageFormatError("PGM holds a single channel")
    Image.fromarray(data).save(path, format=_FORMATS[ext])


def save_mask(mask, path):
    """Write a mask as 8-bit grayscale (0/255 for binary masks)."""
    save_image(as_mask(mask)[:, :, None], path)


# -- convolution --------------------------------------------------------------

def _check_conv(img, k):
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ParameterError(f"kernel must have odd extent, got {k.shape}")
    if max(k.shape) > min(img.shape[:2]):
        raise DimensionError(f"kernel {k.shape} larger than image {img.shape[:2]}")
    return k


def reflect_pad(img, ph, pw):
    """Half-sample symmetric padding (``d c b a | a b c d``) of the spatial axes."""
    widths = [(ph, ph), (pw, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths, mode="symmetric")


def _fft_convolve_valid(padded, k):
    """Valid-mode linear convolution of a padded (Hp, Wp, C) stack with ``k``."""
    hp, wp = padded.shape[:2]
    kh, kw = k.shape
    fh, fw = hp + kh - 1, wp + kw - 1
    fk = np.fft.rfft2(k, s=(fh, fw))
    fx = np.fft.rfft2(padded, s=(fh, fw), axes=(0, 1))
    full = np.fft.irfft2(fx * fk[:, :, None], s=(fh, fw), axes=(0, 1))
    return full[kh - 1:hp, kw - 1:wp]


def convolve2d(img, k, method="direct"):
    """Convolve every channel of ``img`` with kernel ``k`` under reflect padding.

    ``method`` is ``"direct"`` (spatial sum) or ``"frequency"`` (FFT of the
    padded image). Both give the same result up to rounding. A 2-D input
    yields a 2-D output.
    """
    a = np.asarray(img, dtype=np.float64)
    flat = a.ndim == 2
    if flat:
        a = a[:, :, None]
    k = _check_conv(a, k)
    if method == "direct":
        out = np.empty_like(a)
        for c in range(a.shape[2]):
            out[:, :, c] = ndimage.convolve(a[:, :, c], k, mode="reflect")
    elif method == "frequency":
        ph, pw = k.shape[0] // 2, k.shape[1] // 2
        out = _fft_convolve_valid(reflect_pad(a, ph, pw), k)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return out[:, :, 0] if flat else out


def gaussian_blur(img, sigma, method="direct"):
    if sigma <= 0:
        return np.array(img, dtype=np.float64, copy=True)
    return convolve2d(img, gaussian_kernel(sigma), method)


# -- metrics ------------------------------------------------------------------

def luminance(img):
    """Rec.709 luma of a 3-channel image; 1-channel input passes through."""
    a = as_image(img)
    if a.shape[2] == 1:
        return a.copy()
    return (a @ REC709)[:, :, None]


def _same_shape(a, b):
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for peak 1.0; ``inf`` when identical."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / err))


def _ssim_window():
    ax = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-0.5 * (ax / SSIM_SIGMA) ** 2)
    return g / g.sum()


_W1 = _ssim_window()
_HALF = SSIM_WIN // 2


def _filt(x):
    """Gaussian-weighted mean over every fully interior 11x11 window."""
    y = ndimage.correlate1d(x, _W1, axis=0, mode="nearest")
    y = ndimage.correlate1d(y, _W1, axis=1, mode="nearest")
    return y[_HALF:-_HALF, _HALF:-_HALF]


def _filt_adjoint(g, shape):
    out = np.zeros(shape)
    out[_HALF:-_HALF, _HALF:-_HALF] = g
    out = ndimage.correlate1d(out, _W1, axis=0, mode="constant")
    return ndimage.correlate1d(out, _W1, axis=1, mode="constant")


def _ssim_terms(x, y):
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = _filt(x), _filt(y)
    exx, eyy, exy = _filt(x * x), _filt(y * y), _filt(x * y)
    a1 = 2 * mx * my + c1
    a2 = 2 * (exy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    return mx, my, a1, a2, b1, b2


def _ssim_lum(a, b):
    a, b = _same_shape(a, b)
    h, w = a.shape[:2]
    if h < SSIM_WIN or w < SSIM_WIN:
        raise DimensionError(f"image {h}x{w} smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    return luminance(a)[:, :, 0], luminance(b)[:, :, 0]


def ssim(a, b):
    """Mean structural similarity over valid 11x11 Gaussian windows (sigma 1.5).

    Three-channel inputs are compared on their Rec.709 luminance.
    """
    x, y = _ssim_lum(a, b)
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y)
    return float(np.mean((a1 * a2) / (b1 * b2)))


def ssim_grad(a, b):
    """SSIM(a, b) and its gradient with respect to ``a`` (shape of ``a``)."""
    a = as_image(a)
    x, y = _ssim_lum(a, b)
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    s = (a1 * a2) / (b1 * b2)
    n = s.size
    d_mx = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2) / n
    d_exx = -s / b2 / n
    d_exy = 2 * s / a2 / n
    g = (_filt_adjoint(d_mx, x.shape)
         + 2 * x * _filt_adjoint(d_exx, x.shape)
         + y * _filt_adjoint(d_exy, x.shape))
    if a.shape[2] == 3:
        grad = g[:, :, None] * REC709[None, None, :]
    else:
        grad = g[:, :, None]
    return float(np.mean(s)), grad
