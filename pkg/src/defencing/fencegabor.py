"""Fence detection with a bank of oriented 2-D Gabor filters.

A fence is strongly directional, so filtering with Gabor kernels tuned to
the fence orientation produces large responses on fence pixels. Responses
from all orientations are fused by pointwise maximum of magnitudes,
binarized (Otsu by default) and dilated into a binary fence mask
(0 = fence, 1 = valid).
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imgcore


@dataclass(frozen=True)
class GaborParams:
    """Gabor kernel parameters: carrier wavelength, orientation (degrees),
    phase offset (radians), envelope deviation, and envelope aspect ratio."""

    wavelength: float = 4.0
    theta_deg: float = 45.0
    psi: float = 0.0
    sigma: float = 4.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.wavelength <= 1:
            raise ValueError(f"wavelength must be > 1, got {self.wavelength}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        object.__setattr__(self, "theta_deg", float(self.theta_deg) % 360.0)

    def with_theta(self, theta_deg):
        return GaborParams(self.wavelength, theta_deg, self.psi,
                           self.sigma, self.gamma)


def gabor_kernel(p):
    """Sample the oriented Gabor function on an odd square grid.

    The grid radius is 3*sigma/min(1, gamma), covering the envelope along
    its longer axis. The value at (x, y) is
    exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2)) * cos(2 pi x'/wavelength + psi)
    with (x', y') the axes rotated by theta.
    """
    if not isinstance(p, GaborParams):
        p = GaborParams(*p)
    r = int(np.ceil(3.0 * p.sigma / min(1.0, p.gamma)))
    ax = np.arange(-r, r + 1, dtype=np.float64)
    x, y = np.meshgrid(ax, ax)
    t = np.deg2rad(p.theta_deg)
    xp = x * np.cos(t) + y * np.sin(t)
    yp = -x * np.sin(t) + y * np.cos(t)
    env = np.exp(-(xp ** 2 + p.gamma ** 2 * yp ** 2) / (2.0 * p.sigma ** 2))
    return env * np.cos(2.0 * np.pi * xp / p.wavelength + p.psi)


def otsu_threshold(values, bins=256):
    """Otsu's threshold on a 256-bin histogram of the given values."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return hi
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    p = hist.astype(np.float64) / v.size
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(bins))
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return float(edges[k + 1])


def dilate(mask, iters):
    """Grow the fence region of a mask by a 3x3 neighborhood, iterated."""
    mask = imgcore.as_mask(mask)
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    if iters == 0:
        return mask.copy()
    fence = ndimage.binary_dilation(mask == 0, structure=np.ones((3, 3), bool),
                                    iterations=iters)
    return np.where(fence, 0, 1).astype(np.uint8)


def detect_fence_gabor(gray, thetas, base=GaborParams(), threshold="otsu",
                       dilate_iters=1):
    """Detect fence pixels in a grayscale plane with a Gabor filter bank.

    Each orientation in ``thetas`` (degrees) filters the image with a
    mean-subtracted Gabor kernel; the per-pixel response is the maximum
    magnitude across orientations. ``threshold`` is either the string
    "otsu" or a fixed response value. Returns a binary mask with fence
    pixels set to 0.
    """
    gray = imgcore.as_plane(gray)
    thetas = list(thetas)
    if not thetas:
        raise ValueError("at least one orientation is required")
    resp = np.zeros_like(gray)
    for theta in thetas:
        k = gabor_kernel(base.with_theta(theta))
        k = k - k.mean()  # kill the DC response so flat regions stay quiet
        resp = np.maximum(resp, np.abs(imgcore.convolve(gray, k)))
    # responses indistinguishable from numerical zero never count as fence
    floor = 1e-6 * (np.ptp(gray) + 1.0)
    if resp.max() <= floor:
        return np.ones_like(gray, dtype=np.uint8)
    if threshold == "otsu":
        t = otsu_threshold(resp)
    else:
        t = float(threshold)
    mask = np.where(resp > max(t, floor), 0, 1).astype(np.uint8)
    return dilate(mask, dilate_iters)
