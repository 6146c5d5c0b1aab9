"""Image planes, separable/2-D convolution, Gaussian kernels, PNG I/O and
the PSNR/SSIM quality metrics.

All pixel data lives in float64 numpy arrays in the working range 0..255.
A single-channel plane has shape (h, w); a color image has shape (h, w, 3)
with channels ordered R, G, B. Quantization to 8 bit happens only when a
file is written.
"""

import os
import tempfile

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from scipy.signal import correlate2d

PSNR_CAP_DB = 120.0

# Standard SSIM constants: 11x11 Gaussian window, sigma 1.5, K1/K2 on a
# 255 dynamic range.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def as_plane(a):
    """Validate and return a single-channel image plane as float64."""
    p = np.asarray(a, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise ValueError(f"expected a 2-D image plane, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("image plane contains non-finite values")
    return p


def as_color(a):
    """Validate and return an RGB image as a float64 (h, w, 3) array."""
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) color image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("color image contains non-finite values")
    return img


def _check_kernel(k):
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2:
        raise ValueError(f"kernel must be 2-D, got shape {k.shape}")
    if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {k.shape}")
    return k


def convolve(img, kernel):
    """2-D convolution with edge-replicate boundary handling.

    Output has the same shape as ``img``. The kernel anchor is its center.
    """
    img = as_plane(img)
    k = _check_kernel(kernel)
    if k.shape[0] > 2 * img.shape[0] or k.shape[1] > 2 * img.shape[1]:
        raise ValueError(
            f"kernel {k.shape} larger than twice the image {img.shape}")
    return ndimage.convolve(img, k, mode="nearest")


def convolve_adjoint(img, kernel):
    """Exact transpose of :func:`convolve` for the same kernel.

    Replicate padding makes border pixels participate in several output
    taps, so the transpose scatters kernel weights back and folds the
    padded border sums onto the edge pixels. On the interior this equals
    correlation with the kernel.
    """
    y = as_plane(img)
    k = _check_kernel(kernel)
    h, w = y.shape
    kh, kw = k.shape
    rh, rw = kh // 2, kw // 2
    z = np.zeros((h + 2 * rh, w + 2 * rw))
    for a in range(kh):
        for b in range(kw):
            if k[a, b] != 0.0:
                z[2 * rh - a:2 * rh - a + h, 2 * rw - b:2 * rw - b + w] += k[a, b] * y
    mid = z[rh:rh + h, :].copy()
    if rh:
        mid[0, :] += z[:rh, :].sum(axis=0)
        mid[h - 1, :] += z[rh + h:, :].sum(axis=0)
    out = mid[:, rw:rw + w].copy()
    if rw:
        out[:, 0] += mid[:, :rw].sum(axis=1)
        out[:, w - 1] += mid[:, rw + w:].sum(axis=1)
    return out


def gaussian_kernel(sigma):
    """Square 2-D Gaussian kernel with support radius 3*sigma, tap sum 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r = int(np.ceil(3.0 * sigma))
    ax = np.arange(-r, r + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def psnr(ref, test):
    """Peak signal-to-noise ratio in dB on the 0..255 range, capped at 120."""
    ref = as_plane(ref)
    test = as_plane(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    mse = np.mean((ref - test) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0 ** 2 / mse), PSNR_CAP_DB)


def _ssim_window():
    ax = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(ref, test):
    """Mean structural similarity over all fully-contained 11x11 windows."""
    ref = as_plane(ref)
    test = as_plane(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    if min(ref.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {ref.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = _ssim_window()
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    mu1 = correlate2d(ref, w, mode="valid")
    mu2 = correlate2d(test, w, mode="valid")
    s11 = correlate2d(ref * ref, w, mode="valid") - mu1 * mu1
    s22 = correlate2d(test * test, w, mode="valid") - mu2 * mu2
    s12 = correlate2d(ref * test, w, mode="valid") - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 ** 2 + mu2 ** 2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def to_grayscale(img):
    """Luminance plane 0.299 R + 0.587 G + 0.114 B."""
    img = as_color(img)
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def read_image(path):
    """Read an 8-bit PNG (RGB or grayscale) as a float64 (h, w, 3) array.

    Grayscale files are replicated onto all three channels. 16-bit and
    alpha-carrying files are rejected.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "L":
                plane = np.asarray(im, dtype=np.float64)
                return np.stack([plane, plane, plane], axis=2)
            if mode == "RGB":
                return np.asarray(im, dtype=np.float64)
            raise ValueError(
                f"{path}: unsupported image mode '{mode}' (only 8-bit RGB or grayscale)")
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        raise ValueError(f"{path}: cannot read image ({e})") from e


def _atomic_write(path, write_fn):
    """Write a file via a temp file in the same directory plus rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            write_fn(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_image(path, img):
    """Write a plane (h, w) or color image (h, w, 3) as an 8-bit PNG.

    Values are clipped to 0..255 and rounded; the write is atomic
    (temp file + rename) so failures never leave partial output.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = as_plane(img)
        pil = Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8), mode="L")
    elif img.ndim == 3:
        img = as_color(img)
        pil = Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8), mode="RGB")
    else:
        raise ValueError(f"expected (h, w) or (h, w, 3) array, got shape {img.shape}")
    _atomic_write(path, lambda f: pil.save(f, format="PNG"))


def as_mask(a):
    """Validate a binary mask (1 = valid pixel, 0 = fence) as uint8."""
    m = np.asarray(a)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be strictly binary (0 or 1)")
    return m.astype(np.uint8)


def read_mask(path):
    """Read a mask PNG using the 0 = fence / 255 = valid convention."""
    plane = to_grayscale(read_image(path))
    return (plane >= 128).astype(np.uint8)


def write_mask(path, mask):
    """Write a mask PNG using the 0 = fence / 255 = valid convention."""
    mask = as_mask(mask)
    write_image(path, mask.astype(np.float64) * 255.0)


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize of a plane with corner-aligned sample coordinates."""
    img = as_plane(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {(out_h, out_w)}")
    h, w = img.shape
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)
