import numpy as np

from defencing import imgcore


def natural_image(h, w, seed=0):
    """Smooth structured color image: sinusoid mix plus blurred noise."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        base = (110.0
                + 60.0 * np.sin(2 * np.pi * xs / (37 + 11 * c))
                * np.cos(2 * np.pi * ys / (29 + 7 * c))
                + 40.0 * np.sin(2 * np.pi * (xs + ys) / (53 + 5 * c)))
        tex = imgcore.convolve(rng.uniform(-60, 60, (h, w)),
                               imgcore.gaussian_kernel(1.2))
        img[:, :, c] = np.clip(base + tex, 0.0, 255.0)
    return img
