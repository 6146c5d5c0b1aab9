"""Synthetic multi-frame benchmark: shifted copies of a source image
occluded by a periodic fence grid, with the ground truth kept aside.

The fence stays fixed in image coordinates while the scene translates
underneath it, so scene content hidden in the reference frame reappears
in the shifted frames. Frame m samples the source at p + shift_m
(out-of-canvas samples are 0), then fence pixels are painted mid-gray
and optional Gaussian noise is added.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import imgcore
from .motion import GlobalShift, shift_forward

FENCE_COLOR = 128.0


@dataclass(frozen=True)
class SynthConfig:
    source: np.ndarray
    shifts: tuple = ((0, 0), (-8, -8), (8, 8), (15, 15))
    fence_width: int = 7
    fence_period: int = 48
    fence_angles: tuple = (45.0, 135.0)
    noise_sigma: float = 0.0
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "source", imgcore.as_color(self.source))
        shifts = tuple((float(dx), float(dy)) for dx, dy in self.shifts)
        if len(shifts) != 4:
            raise ValueError(f"expected 4 shifts, got {len(shifts)}")
        if shifts[0] != (0.0, 0.0):
            raise ValueError("the first shift must be (0, 0) (reference frame)")
        if not 0 <= self.fence_width < self.fence_period:
            raise ValueError(
                f"fence width must satisfy 0 <= width < period, got "
                f"{self.fence_width} vs {self.fence_period}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        h, w = self.source.shape[:2]
        for dx, dy in shifts:
            if abs(dx) >= w or abs(dy) >= h:
                raise ValueError(f"shift ({dx}, {dy}) pushes the image out of frame")
        object.__setattr__(self, "shifts", shifts)


def fence_pattern(h, w, angles=(45.0, 135.0), period=48, width=7):
    """Boolean map of a periodic grid of bars; angle is the bar direction."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    fence = np.zeros((h, w), bool)
    for a in angles:
        t = np.deg2rad(a)
        coord = xs * np.sin(t) - ys * np.cos(t)  # distance along the bar normal
        fence |= np.mod(coord, period) < width
    return fence


def synth_generate(cfg):
    """Build the 4-frame benchmark.

    Returns (frames, true_masks, ground_truth): four (h, w, 3) frames with
    the fence painted in, four binary masks (0 = fence), and the clean
    source image.
    """
    src = cfg.source
    h, w = src.shape[:2]
    fence = fence_pattern(h, w, cfg.fence_angles, cfg.fence_period,
                          cfg.fence_width) if cfg.fence_width > 0 \
        else np.zeros((h, w), bool)
    mask = np.where(fence, 0, 1).astype(np.uint8)
    rng = np.random.default_rng(cfg.seed)
    frames = []
    masks = []
    for dx, dy in cfg.shifts:
        frame = np.empty_like(src)
        for c in range(3):
            frame[:, :, c] = shift_forward(src[:, :, c], GlobalShift(dx, dy))
        frame[fence] = FENCE_COLOR
        if cfg.noise_sigma > 0:
            frame = np.clip(frame + rng.normal(0.0, cfg.noise_sigma, frame.shape),
                            0.0, 255.0)
        frames.append(frame)
        masks.append(mask.copy())
    return frames, masks, src.copy()


def mask_score(pred, truth, tolerance_px=0):
    """Precision/recall/F1 of a predicted fence mask against ground truth.

    A pixel matches when a fence pixel of the other mask lies within
    Chebyshev distance ``tolerance_px``.
    """
    pred = imgcore.as_mask(pred)
    truth = imgcore.as_mask(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if tolerance_px < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance_px}")
    pred_f = pred == 0
    true_f = truth == 0
    if tolerance_px > 0:
        st = np.ones((2 * tolerance_px + 1, 2 * tolerance_px + 1), bool)
        true_near = ndimage.binary_dilation(true_f, st)
        pred_near = ndimage.binary_dilation(pred_f, st)
    else:
        true_near = true_f
        pred_near = pred_f
    n_pred = int(pred_f.sum())
    n_true = int(true_f.sum())
    precision = float((pred_f & true_near).sum() / n_pred) if n_pred else 1.0
    recall = float((true_f & pred_near).sum() / n_true) if n_true else 1.0
    f1 = 2.0 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    return precision, recall, f1
