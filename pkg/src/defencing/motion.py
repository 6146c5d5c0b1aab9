"""Inter-frame motion: dense optical flow, global shift estimation, and
bilinear warping with an exact adjoint.

The displacement convention is reference -> target: a flow field (u, v)
attached to frame m means frame_m(p) == reference(p + (u(p), v(p))), so
warping the latent image forward with that flow reproduces the frame's
geometry. Samples falling outside the image produce 0 and are flagged in
a validity map.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import imgcore

FLO_MAGIC = 202021.25


@dataclass(frozen=True)
class GlobalShift:
    """Constant displacement (sub-pixel permitted), reference -> target."""

    dx: float
    dy: float


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement field, reference -> target."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = imgcore.as_plane(self.u)
        v = imgcore.as_plane(self.v)
        if u.shape != v.shape:
            raise ValueError(f"u/v shape mismatch: {u.shape} vs {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self):
        return self.u.shape


class EstimationError(RuntimeError):
    """Raised when motion estimation cannot produce a result."""


def presmooth(img, sigma):
    """Gaussian pre-smoothing; sigma = 0 is a no-op."""
    img = imgcore.as_plane(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    return imgcore.convolve(img, imgcore.gaussian_kernel(sigma))


# ---------------------------------------------------------------------------
# Warping


def _bilinear_parts(flow):
    """Corner indices, weights and the in-bounds map shared by the warp and
    its adjoint, so the two are exact transposes by construction. Cached on
    the flow (it is immutable and reused across solver iterations)."""
    cached = getattr(flow, "_parts", None)
    if cached is not None:
        return cached
    h, w = flow.shape
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    xs = cols + flow.u
    ys = rows + flow.v
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    ins = inside.astype(np.float64)
    weights = ((1 - fx) * (1 - fy) * ins, (fx * (1 - fy)) * ins,
               ((1 - fx) * fy) * ins, (fx * fy) * ins)
    corners = tuple((y * w + x).ravel()
                    for y, x in ((y0, x0), (y0, x1), (y1, x0), (y1, x1)))
    weights = tuple(wgt.ravel() for wgt in weights)
    parts = (corners, weights, inside)
    object.__setattr__(flow, "_parts", parts)
    return parts


def warp_forward(x, flow):
    """Bilinear warp: output(p) = x(p + flow(p)); out-of-bounds -> 0."""
    x = imgcore.as_plane(x)
    if x.shape != flow.shape:
        raise ValueError(f"image {x.shape} vs flow {flow.shape}")
    corners, weights, _ = _bilinear_parts(flow)
    flat = x.ravel()
    out = np.zeros(x.size)
    for idx, wgt in zip(corners, weights):
        out += wgt * flat[idx]
    return out.reshape(x.shape)


def warp_validity(flow):
    """1 where the warp samples inside the image, 0 where it falls outside."""
    _, _, inside = _bilinear_parts(flow)
    return inside.astype(np.uint8)


def warp_adjoint(y, flow):
    """Exact transpose of :func:`warp_forward` for the same flow: every
    sampled value scatters its bilinear weights back onto the 4 sources."""
    y = imgcore.as_plane(y)
    if y.shape != flow.shape:
        raise ValueError(f"image {y.shape} vs flow {flow.shape}")
    corners, weights, _ = _bilinear_parts(flow)
    flat = y.ravel()
    out = np.zeros(y.size)
    for idx, wgt in zip(corners, weights):
        out += np.bincount(idx, weights=wgt * flat, minlength=y.size)
    return out.reshape(y.shape)


def _integer_shift(x, kx, ky):
    """x sampled at (col + kx, row + ky); out-of-range -> 0. Exact."""
    h, w = x.shape
    out = np.zeros_like(x)
    src_r = slice(max(ky, 0), min(h + ky, h))
    src_c = slice(max(kx, 0), min(w + kx, w))
    dst_r = slice(max(-ky, 0), max(-ky, 0) + max(src_r.stop - src_r.start, 0))
    dst_c = slice(max(-kx, 0), max(-kx, 0) + max(src_c.stop - src_c.start, 0))
    if src_r.stop > src_r.start and src_c.stop > src_c.start:
        out[dst_r, dst_c] = x[src_r, src_c]
    return out


def _shift_weights(shift):
    bx, by = int(np.floor(shift.dx)), int(np.floor(shift.dy))
    fx, fy = shift.dx - bx, shift.dy - by
    return [((bx, by), (1 - fx) * (1 - fy)), ((bx + 1, by), fx * (1 - fy)),
            ((bx, by + 1), (1 - fx) * fy), ((bx + 1, by + 1), fx * fy)]


def shift_forward(x, shift):
    """Constant-displacement warp (bilinear; exact slicing for integers).

    Sample positions outside the image produce 0, even when some of their
    bilinear corners would still fall inside.
    """
    x = imgcore.as_plane(x)
    out = np.zeros_like(x)
    for (kx, ky), wgt in _shift_weights(shift):
        if wgt != 0.0:
            out += wgt * _integer_shift(x, kx, ky)
    return out * shift_validity(shift, x.shape)


def shift_adjoint(y, shift):
    """Exact transpose of :func:`shift_forward` for the same shift."""
    y = imgcore.as_plane(y) * shift_validity(shift, np.shape(y))
    out = np.zeros_like(y)
    for (kx, ky), wgt in _shift_weights(shift):
        if wgt != 0.0:
            out += wgt * _integer_shift(y, -kx, -ky)
    return out


def shift_validity(shift, shape):
    """Validity map of the constant-displacement warp on a given shape."""
    h, w = shape
    cols = np.arange(w, dtype=np.float64) + shift.dx
    rows = np.arange(h, dtype=np.float64) + shift.dy
    ok_c = (cols >= 0) & (cols <= w - 1)
    ok_r = (rows >= 0) & (rows <= h - 1)
    return (ok_r[:, None] & ok_c[None, :]).astype(np.uint8)


def shift_to_flow(shift, shape):
    """Constant FlowField equivalent of a GlobalShift."""
    h, w = shape
    return FlowField(np.full((h, w), float(shift.dx)),
                     np.full((h, w), float(shift.dy)))


# ---------------------------------------------------------------------------
# Global shift estimation


def estimate_global_shift(ref, tgt, valid=None, radius=20):
    """Translation minimizing masked SSD over a +/-radius integer search,
    refined to sub-pixel by a quadratic fit around the minimum.

    ``valid`` marks usable pixels (1 = valid); it is applied in both
    frames' coordinates, so a pixel contributes only when valid at its
    target position and at its shifted reference position.
    """
    ref = imgcore.as_plane(ref)
    tgt = imgcore.as_plane(tgt)
    if ref.shape != tgt.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {tgt.shape}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    h, w = ref.shape
    if valid is None:
        valid = np.ones((h, w), np.uint8)
    valid = imgcore.as_mask(valid)
    if valid.shape != ref.shape:
        raise ValueError(f"mask {valid.shape} vs image {ref.shape}")

    size = 2 * radius + 1
    scores = np.full((size, size), np.nan)
    vf = valid.astype(np.float64)
    for iy, dy in enumerate(range(-radius, radius + 1)):
        r0, r1 = max(0, -dy), min(h, h - dy)
        if r1 <= r0:
            continue
        for ix, dx in enumerate(range(-radius, radius + 1)):
            c0, c1 = max(0, -dx), min(w, w - dx)
            if c1 <= c0:
                continue
            t = tgt[r0:r1, c0:c1]
            r = ref[r0 + dy:r1 + dy, c0 + dx:c1 + dx]
            m = vf[r0:r1, c0:c1] * vf[r0 + dy:r1 + dy, c0 + dx:c1 + dx]
            n = m.sum()
            if n == 0:
                continue
            scores[iy, ix] = np.sum(m * (t - r) ** 2) / n
    if np.all(np.isnan(scores)):
        raise EstimationError("no shift candidate had overlapping valid pixels")

    flat = np.where(np.isnan(scores), np.inf, scores)
    iy, ix = np.unravel_index(np.argmin(flat), flat.shape)
    dx = float(ix - radius)
    dy = float(iy - radius)

    def refine(minus, center, plus):
        den = minus - 2.0 * center + plus
        if not (np.isfinite(minus) and np.isfinite(plus)) or den <= 0:
            return 0.0
        return float(np.clip(0.5 * (minus - plus) / den, -0.5, 0.5))

    if 0 < ix < size - 1:
        dx += refine(flat[iy, ix - 1], flat[iy, ix], flat[iy, ix + 1])
    if 0 < iy < size - 1:
        dy += refine(flat[iy - 1, ix], flat[iy, ix], flat[iy + 1, ix])
    return GlobalShift(dx, dy)


# ---------------------------------------------------------------------------
# Dense flow (pyramidal Horn-Schunck)

# weighted 8-neighborhood average used by the Jacobi smoothness update
_HS_AVG = np.array([[1 / 12, 1 / 6, 1 / 12],
                    [1 / 6, 0.0, 1 / 6],
                    [1 / 12, 1 / 6, 1 / 12]])


def central_diff_x(img):
    """Central difference along columns with replicate boundary."""
    out = np.empty_like(img)
    out[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    out[:, 0] = 0.5 * (img[:, 1] - img[:, 0])
    out[:, -1] = 0.5 * (img[:, -1] - img[:, -2])
    return out


def central_diff_y(img):
    """Central difference along rows with replicate boundary."""
    out = np.empty_like(img)
    out[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    out[0, :] = 0.5 * (img[1, :] - img[0, :])
    out[-1, :] = 0.5 * (img[-1, :] - img[-2, :])
    return out


def _sample_clamped(img, xs, ys):
    """Bilinear sampling with coordinates clamped to the image domain."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    return (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
            + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)


def _downsample(img, factor):
    h, w = img.shape
    nh = max(int(np.ceil(h * factor)), 1)
    nw = max(int(np.ceil(w * factor)), 1)
    smooth = imgcore.convolve(img, imgcore.gaussian_kernel(1.0))
    return imgcore.resize_bilinear(smooth, nh, nw)


def auto_levels(shape, scale=0.5, min_side=16):
    """Number of pyramid levels keeping the coarsest side >= min_side."""
    side = min(shape)
    levels = 1
    while side * scale >= min_side:
        side *= scale
        levels += 1
    return levels


def estimate_flow(ref, tgt, levels=None, scale=0.5, alpha=15.0, iters=100,
                  presmooth_sigma=1.5):
    """Dense flow by coarse-to-fine Horn-Schunck.

    At each pyramid level the target is warped by the current flow, the
    brightness-constancy term is linearized there, and the quadratic
    smoothness problem (weight ``alpha``) is solved by ``iters`` Jacobi
    sweeps; the flow is then upscaled to the next finer level. Both inputs
    are Gaussian pre-smoothed first, which suppresses the stationary
    fence texture that otherwise corrupts the estimate near occlusions.
    """
    ref = imgcore.as_plane(ref)
    tgt = imgcore.as_plane(tgt)
    if ref.shape != tgt.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {tgt.shape}")
    if min(ref.shape) < 16:
        raise ValueError(f"image {ref.shape} too small for a flow pyramid")
    max_levels = auto_levels(ref.shape, scale)
    if levels is None:
        levels = max_levels
    if not 1 <= levels <= max_levels:
        raise ValueError(
            f"levels must be in 1..{max_levels} for shape {ref.shape}, got {levels}")

    ref = presmooth(ref, presmooth_sigma)
    tgt = presmooth(tgt, presmooth_sigma)
    pyr = [(ref, tgt)]
    for _ in range(levels - 1):
        r, t = pyr[-1]
        pyr.append((_downsample(r, scale), _downsample(t, scale)))

    u = np.zeros(pyr[-1][0].shape)
    v = np.zeros_like(u)
    alpha2 = alpha * alpha
    for lvl in range(levels - 1, -1, -1):
        r, t = pyr[lvl]
        h, w = r.shape
        if u.shape != (h, w):
            u = imgcore.resize_bilinear(u, h, w) * (w / u.shape[1])
            v = imgcore.resize_bilinear(v, h, w) * (h / v.shape[0])
        cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                                 np.arange(h, dtype=np.float64))
        # warp the reference by the current flow; at convergence it matches
        # the target, which is exactly the tgt(p) = ref(p + flow) convention
        rw = _sample_clamped(r, cols + u, rows + v)
        ix = 0.5 * (central_diff_x(rw) + central_diff_x(t))
        iy = 0.5 * (central_diff_y(rw) + central_diff_y(t))
        it = rw - t
        den = alpha2 + ix * ix + iy * iy
        du = np.zeros((h, w))
        dv = np.zeros((h, w))
        for _ in range(iters):
            ua = imgcore.convolve(du, _HS_AVG)
            va = imgcore.convolve(dv, _HS_AVG)
            common = (ix * ua + iy * va + it) / den
            du = ua - ix * common
            dv = va - iy * common
        u = u + du
        v = v + dv
    return FlowField(u, v)


# ---------------------------------------------------------------------------
# Middlebury .flo I/O


def write_flo(path, flow):
    """Write a FlowField in Middlebury .flo binary format (atomic)."""
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype=np.float32)
    data[:, :, 0] = flow.u
    data[:, :, 1] = flow.v

    def emit(f):
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(data.tobytes())

    imgcore._atomic_write(path, emit)


def read_flo(path):
    """Read a Middlebury .flo file into a FlowField."""
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) != 12:
            raise ValueError(f"{path}: truncated .flo header")
        magic, w, h = struct.unpack("<fii", head)
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise ValueError(f"{path}: bad .flo magic number {magic!r}")
        if w < 1 or h < 1:
            raise ValueError(f"{path}: invalid .flo dimensions {w}x{h}")
        raw = f.read(8 * w * h)
        if len(raw) != 8 * w * h:
            raise ValueError(f"{path}: truncated .flo data")
    data = np.frombuffer(raw, dtype=np.float32).reshape(h, w, 2)
    return FlowField(data[:, :, 0].astype(np.float64),
                     data[:, :, 1].astype(np.float64))
