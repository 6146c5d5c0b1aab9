import numpy as np
import pytest

from defencing import fencegabor, imgcore
from defencing.fencegabor import GaborParams


def stripe_image(h=96, w=96, width=3, period=24, offset=12, ground=255.0):
    """Vertical dark stripes on a constant ground; returns (image, fence map)."""
    img = np.full((h, w), ground)
    cols = ((np.arange(w) - offset) % period) < width
    img[:, cols] = 0.0
    fence = np.zeros((h, w), bool)
    fence[:, cols] = True
    return img, fence


class TestGaborKernel:
    def test_center_tap_is_one_for_zero_phase(self):
        for theta in (0, 30, 45, 200):
            k = fencegabor.gabor_kernel(GaborParams(4, theta, 0.0, 2.0, 0.5))
            r = k.shape[0] // 2
            assert k[r, r] == 1.0

    def test_odd_square_support_from_sigma_and_gamma(self):
        k = fencegabor.gabor_kernel(GaborParams(4, 0, 0, 4, 0.5))
        assert k.shape == (49, 49)  # 2*ceil(3*4/0.5)+1
        k = fencegabor.gabor_kernel(GaborParams(4, 0, 0, 2, 1.0))
        assert k.shape == (13, 13)

    def test_theta_180_is_point_reflection(self):
        a = fencegabor.gabor_kernel(GaborParams(4, 30, 0, 3, 0.5))
        b = fencegabor.gabor_kernel(GaborParams(4, 210, 0, 3, 0.5))
        assert np.allclose(b, a[::-1, ::-1], atol=1e-12)
        # cosine carrier is even, so for psi=0 they are equal outright
        assert np.allclose(b, a, atol=1e-12)

    def test_tap_value_matches_direct_formula(self):
        # orientation 45 deg: the (1,1) offset lies on the carrier axis
        k = fencegabor.gabor_kernel(GaborParams(4, 45, 0, 4, 0.5))
        r = k.shape[0] // 2
        expected = np.exp(-2.0 / 32.0) * np.cos(2.0 * np.pi * np.sqrt(2.0) / 4.0)
        assert abs(k[r + 1, r + 1] - expected) < 1e-12
        assert expected == pytest.approx(-0.569, abs=1e-3)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            GaborParams(wavelength=1.0)
        with pytest.raises(ValueError):
            GaborParams(sigma=0.0)
        with pytest.raises(ValueError):
            GaborParams(gamma=-0.5)

    def test_theta_normalized(self):
        assert GaborParams(theta_deg=405.0).theta_deg == 45.0
        assert GaborParams(theta_deg=-45.0).theta_deg == 315.0


class TestDetect:
    BASE = GaborParams(4, 0, 0, 4, 0.5)

    def test_constant_image_detects_nothing(self):
        mask = fencegabor.detect_fence_gabor(np.full((48, 48), 77.0), [0, 45, 90],
                                             self.BASE)
        assert mask.shape == (48, 48)
        assert mask.min() == 1

    def test_stripes_recalled_at_matching_orientation(self):
        img, fence = stripe_image()
        mask = fencegabor.detect_fence_gabor(img, [0], self.BASE, "otsu", 1)
        pred = mask == 0
        recall = (pred & fence).sum() / fence.sum()
        assert recall >= 0.9

    def test_stripes_missed_at_wrong_orientation(self):
        img, fence = stripe_image()
        mask = fencegabor.detect_fence_gabor(img, [90], self.BASE, "otsu", 1)
        pred = mask == 0
        recall = (pred & fence).sum() / fence.sum()
        assert recall < 0.5

    def test_output_binary_and_shaped(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 255, (40, 56))
        mask = fencegabor.detect_fence_gabor(img, [30, 120], self.BASE)
        assert mask.shape == img.shape
        assert set(np.unique(mask)) <= {0, 1}

    def test_empty_theta_list_rejected(self):
        with pytest.raises(ValueError):
            fencegabor.detect_fence_gabor(np.zeros((8, 8)), [], self.BASE)

    def test_fixed_threshold_override(self):
        img, fence = stripe_image()
        # absurdly high threshold: nothing detected
        mask = fencegabor.detect_fence_gabor(img, [0], self.BASE, 1e9, 0)
        assert mask.min() == 1

    def test_orientation_equivariance_under_rot90(self):
        img, _ = stripe_image()
        m0 = fencegabor.detect_fence_gabor(img, [0], self.BASE, "otsu", 1)
        m90 = fencegabor.detect_fence_gabor(np.rot90(img), [90], self.BASE, "otsu", 1)
        n0 = (m0 == 0).sum()
        n90 = (m90 == 0).sum()
        assert abs(n0 - n90) <= 0.05 * max(n0, n90)


class TestDilate:
    def test_zero_iters_is_identity(self):
        rng = np.random.default_rng(0)
        mask = (rng.uniform(size=(16, 16)) > 0.3).astype(np.uint8)
        assert np.array_equal(fencegabor.dilate(mask, 0), mask)

    def test_single_pixel_grows_to_3x3(self):
        mask = np.ones((9, 9), np.uint8)
        mask[4, 4] = 0
        out = fencegabor.dilate(mask, 1)
        assert (out == 0).sum() == 9
        assert out[3:6, 3:6].max() == 0

    def test_two_iters_grow_to_5x5(self):
        mask = np.ones((9, 9), np.uint8)
        mask[4, 4] = 0
        out = fencegabor.dilate(mask, 2)
        assert (out == 0).sum() == 25
        assert out[2:7, 2:7].max() == 0

    def test_fence_count_monotone_in_iters(self):
        rng = np.random.default_rng(1)
        mask = (rng.uniform(size=(32, 32)) > 0.05).astype(np.uint8)
        counts = [(fencegabor.dilate(mask, i) == 0).sum() for i in range(4)]
        assert all(a <= b for a, b in zip(counts, counts[1:]))

    def test_negative_iters_rejected(self):
        with pytest.raises(ValueError):
            fencegabor.dilate(np.ones((4, 4), np.uint8), -1)


class TestOtsu:
    def test_bimodal_separation(self):
        rng = np.random.default_rng(2)
        lo = rng.normal(10, 1, 500)
        hi = rng.normal(100, 1, 500)
        t = fencegabor.otsu_threshold(np.concatenate([lo, hi]))
        assert (lo <= t).all()
        assert (hi > t).all()

    def test_constant_values_yield_nothing_above(self):
        t = fencegabor.otsu_threshold(np.zeros(100))
        assert t == 0.0
