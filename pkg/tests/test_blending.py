"""Compositing methods: alpha ramps, motion blur, and the Poisson solver."""

import math

import numpy as np
import pytest

from ctxpaste.bank import InstanceCutout
from ctxpaste.blending import (
    BlendNone,
    GaussianAlpha,
    LinearRamp,
    MotionBlur,
    PoissonBlend,
    alpha_composite,
    blend,
    blend_method_name,
    composite_with_method,
    gaussian_alpha,
    gaussian_kernel_1d,
    linear_alpha,
    motion_blur,
    motion_blur_kernel,
    paste_anchor,
    poisson_blend,
    resolve_blend_method,
    round_to_uint8,
)
from ctxpaste.geometry import BoundingBox


def brute_force_distance(mask: np.ndarray) -> np.ndarray:
    """O(N^2) oracle: Euclidean distance from each pixel to the nearest
    zero pixel (0 outside the mask)."""
    H, W = mask.shape
    ys, xs = np.nonzero(~mask)
    out = np.zeros((H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            if mask[y, x]:
                out[y, x] = np.sqrt(((ys - y) ** 2 + (xs - x) ** 2).min())
    return out


def blob_mask(size=24, seed=0):
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(3):
        cy, cx = rng.uniform(6, size - 6, size=2)
        r = rng.uniform(3, 6)
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    return mask


class TestLinearAlpha:
    def test_matches_brute_force_distance(self):
        mask = blob_mask(seed=3)
        alpha = linear_alpha(mask, 3.0)
        expected = np.clip(brute_force_distance(mask) / 3.0, 0.0, 1.0)
        np.testing.assert_allclose(alpha, expected, rtol=0, atol=1e-9)

    def test_ramp_profile_in_large_square(self):
        # Inside a big square, depth d pixels from the edge ramp as d/width.
        mask = np.zeros((30, 30), dtype=bool)
        mask[5:25, 5:25] = True
        alpha = linear_alpha(mask, 3.0)
        row = 15
        np.testing.assert_allclose(alpha[row, 5], 1 / 3)  # depth 1
        np.testing.assert_allclose(alpha[row, 6], 2 / 3)  # depth 2
        np.testing.assert_allclose(alpha[row, 7], 1.0)  # depth 3 saturates
        np.testing.assert_allclose(alpha[row, 15], 1.0)
        assert alpha[row, 4] == 0.0  # outside

    def test_halfway_depth_gives_half(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[5:25, 5:25] = True
        alpha = linear_alpha(mask, 2.0)
        np.testing.assert_allclose(alpha[15, 5], 0.5)  # depth 1 of width 2

    def test_outside_is_zero_everywhere(self):
        mask = blob_mask(seed=4)
        alpha = linear_alpha(mask, 5.0)
        assert (alpha[~mask] == 0.0).all()
        assert (alpha[mask] > 0.0).all()


class TestGaussianAlpha:
    def test_matches_dense_convolution(self):
        mask = blob_mask(seed=5)
        sigma = 2.0
        alpha = gaussian_alpha(mask, sigma)
        k = gaussian_kernel_1d(sigma)
        radius = len(k) // 2
        dense = np.zeros_like(alpha)
        field = mask.astype(np.float64)
        H, W = mask.shape
        for y in range(H):
            for x in range(W):
                acc = 0.0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < H and 0 <= xx < W and field[yy, xx]:
                            acc += k[dy + radius] * k[dx + radius]
                dense[y, x] = acc
        np.testing.assert_allclose(alpha, np.clip(dense, 0, 1), rtol=0, atol=1e-10)

    def test_kernel_normalized_and_truncated(self):
        k = gaussian_kernel_1d(2.0)
        assert len(k) == 2 * 6 + 1
        np.testing.assert_allclose(k.sum(), 1.0, rtol=0, atol=1e-12)
        assert k[6] == k.max()
        np.testing.assert_allclose(k, k[::-1])

    def test_straight_edge_crosses_at_half(self):
        # Along a straight mask edge the blurred profile passes through 0.5;
        # both boundary pixels sit within half a kernel tap of it. Probe
        # points stay a full kernel radius away from the array edges.
        sigma = 15.0
        mask = np.zeros((200, 200), dtype=bool)
        mask[:, :120] = True
        alpha = gaussian_alpha(mask, sigma)
        assert abs(alpha[100, 119] - 0.5) < 0.02  # last column inside
        assert abs(alpha[100, 120] - 0.5) < 0.02  # first column outside
        np.testing.assert_allclose(alpha[100, 60], 1.0, rtol=0, atol=1e-6)
        np.testing.assert_allclose(alpha[100, 180], 0.0, rtol=0, atol=1e-6)


class TestAlphaComposite:
    def test_opaque_copies_source(self):
        bg = np.full((10, 10, 3), 100, dtype=np.uint8)
        src = np.full((4, 4, 3), 200, dtype=np.uint8)
        out = alpha_composite(bg, src, np.ones((4, 4)), 2, 3)
        np.testing.assert_array_equal(out[3:7, 2:6], src)
        assert (out[0] == 100).all()

    def test_transparent_keeps_background(self):
        bg = np.full((10, 10, 3), 100, dtype=np.uint8)
        src = np.full((4, 4, 3), 200, dtype=np.uint8)
        out = alpha_composite(bg, src, np.zeros((4, 4)), 2, 3)
        np.testing.assert_array_equal(out, bg)

    def test_half_alpha_mixes(self):
        bg = np.full((6, 6, 3), 100, dtype=np.uint8)
        src = np.full((2, 2, 3), 200, dtype=np.uint8)
        out = alpha_composite(bg, src, np.full((2, 2), 0.5), 1, 1)
        assert (out[1:3, 1:3] == 150).all()

    def test_half_up_rounding(self):
        bg = np.full((4, 4, 3), 100, dtype=np.uint8)
        src = np.full((2, 2, 3), 201, dtype=np.uint8)
        out = alpha_composite(bg, src, np.full((2, 2), 0.5), 0, 0)
        assert (out[0:2, 0:2] == 151).all()  # 150.5 rounds up

    def test_background_not_mutated(self):
        bg = np.full((6, 6, 3), 100, dtype=np.uint8)
        src = np.full((2, 2, 3), 200, dtype=np.uint8)
        alpha_composite(bg, src, np.ones((2, 2)), 0, 0)
        assert (bg == 100).all()

    def test_out_of_bounds_rejected(self):
        bg = np.full((6, 6, 3), 100, dtype=np.uint8)
        src = np.full((4, 4, 3), 200, dtype=np.uint8)
        with pytest.raises(ValueError, match="outside"):
            alpha_composite(bg, src, np.ones((4, 4)), 4, 0)


class TestMotionBlur:
    def test_length_one_is_identity(self):
        rng = np.random.default_rng(6)
        image = rng.integers(0, 256, size=(8, 9, 3)).astype(np.uint8)
        np.testing.assert_array_equal(motion_blur(image, 1, 1.2), image)

    def test_constant_image_unchanged(self):
        image = np.full((12, 12, 3), 77, dtype=np.uint8)
        for angle in (0.0, 0.5, math.pi / 2, 2.5):
            np.testing.assert_array_equal(motion_blur(image, 5, angle), image)

    def test_horizontal_impulse_spreads_evenly(self):
        # One bright column in each row: [0,0,255,0,0] -> [0,85,85,85,0].
        image = np.zeros((3, 5, 3), dtype=np.uint8)
        image[:, 2] = 255
        out = motion_blur(image, 3, 0.0)
        np.testing.assert_array_equal(out[1, :, 0], [0, 85, 85, 85, 0])

    def test_kernel_taps_sum_to_one(self):
        for length in range(1, 10):
            for angle in (0.0, 0.3, 1.1, math.pi / 2):
                k = motion_blur_kernel(length, angle)
                np.testing.assert_allclose(k.sum(), 1.0, rtol=0, atol=1e-12)

    def test_matches_direct_correlation(self):
        rng = np.random.default_rng(7)
        image = rng.integers(0, 256, size=(12, 10, 3)).astype(np.uint8)
        length, angle = 5, 0.7
        out = motion_blur(image, length, angle)
        k = motion_blur_kernel(length, angle)
        radius = k.shape[0] // 2
        H, W = image.shape[:2]
        for c in range(3):
            padded = np.pad(image[:, :, c].astype(np.float64), radius, mode="edge")
            expected = np.zeros((H, W))
            for y in range(H):
                for x in range(W):
                    window = padded[y : y + k.shape[0], x : x + k.shape[1]]
                    expected[y, x] = (window * k).sum()
            np.testing.assert_array_equal(
                out[:, :, c], np.floor(np.clip(expected, 0, 255) + 0.5).astype(np.uint8)
            )


class TestPoissonBlend:
    def test_constant_background_absorbs_constant_source(self):
        bg = np.full((14, 14, 3), 60, dtype=np.uint8)
        src = np.full((14, 14, 3), 110, dtype=np.uint8)
        mask = np.zeros((14, 14), dtype=bool)
        mask[2:12, 2:12] = True
        result = poisson_blend(bg, src, mask)
        assert result.converged
        assert np.abs(result.solution - 60.0).max() <= 1e-3
        assert (result.image == 60).all()

    def test_one_row_matches_dense_solve(self):
        # Background is a horizontal linear ramp, the source another; with
        # zero source curvature the one-row solution is exactly the dense
        # tridiagonal solve (which equals the background ramp).
        W, H = 20, 9
        v = 10 + 5 * np.arange(W)
        bg = np.repeat(v[None, :], H, axis=0)[..., None].repeat(3, axis=2).astype(np.uint8)
        w_src = 80 - 2 * np.arange(W)
        src = np.repeat(w_src[None, :], H, axis=0)[..., None].repeat(3, axis=2).astype(np.uint8)
        mask = np.zeros((H, W), dtype=bool)
        row, lo, hi = 4, 5, 16
        mask[row, lo:hi] = True
        result = poisson_blend(bg, src, mask, tol=1e-10, max_iter=20000)
        assert result.converged

        # Dense oracle: assemble the tridiagonal system for the masked row.
        n = hi - lo
        g = src[:, :, 0].astype(np.float64)
        lap_g = np.array(
            [
                4 * g[row, x] - g[row, x - 1] - g[row, x + 1] - g[row - 1, x] - g[row + 1, x]
                for x in range(lo, hi)
            ]
        )
        vf = v.astype(np.float64)
        A = 4 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
        b = lap_g + vf[lo:hi] + vf[lo:hi]  # Dirichlet rows above and below
        b[0] += vf[lo - 1]
        b[-1] += vf[hi]
        dense = np.linalg.solve(A, b)
        np.testing.assert_allclose(result.solution[row, lo:hi, 0], dense, rtol=0, atol=1e-6)
        np.testing.assert_allclose(dense, vf[lo:hi], rtol=0, atol=1e-9)
        np.testing.assert_array_equal(result.image, bg)

    def test_converged_residual_verified_independently(self):
        rng = np.random.default_rng(8)
        bg = rng.integers(0, 128, size=(16, 16, 3)).astype(np.uint8)
        src = rng.integers(0, 128, size=(16, 16, 3)).astype(np.uint8)
        yy, xx = np.mgrid[0:16, 0:16]
        mask = (yy - 8) ** 2 + (xx - 8) ** 2 <= 25
        result = poisson_blend(bg, src, mask)
        assert result.converged
        worst = 0.0
        for c in range(3):
            f = np.where(mask, result.solution[:, :, c], bg[:, :, c].astype(np.float64))
            g = src[:, :, c].astype(np.float64)
            for y, x in zip(*np.nonzero(mask)):
                lap_f = 4 * f[y, x] - f[y - 1, x] - f[y + 1, x] - f[y, x - 1] - f[y, x + 1]
                lap_g = 4 * g[y, x] - g[y - 1, x] - g[y + 1, x] - g[y, x - 1] - g[y, x + 1]
                worst = max(worst, abs(lap_f - lap_g))
        assert worst <= 1e-3 + 1e-9
        assert abs(worst - result.residual) <= 1e-9

    def test_energy_monotone_nonincreasing(self):
        rng = np.random.default_rng(9)
        bg = rng.integers(0, 128, size=(20, 20, 3)).astype(np.uint8)
        src = rng.integers(0, 128, size=(20, 20, 3)).astype(np.uint8)
        mask = np.zeros((20, 20), dtype=bool)
        mask[3:17, 3:17] = True
        result = poisson_blend(bg, src, mask)
        energies = result.energies
        assert len(energies) >= 2
        slack = 1e-9 * max(1.0, abs(energies[0]))
        assert all(b <= a + slack for a, b in zip(energies, energies[1:]))

    def test_mask_touching_border_is_padded(self):
        bg = np.full((10, 10, 3), 50, dtype=np.uint8)
        src = np.full((10, 10, 3), 90, dtype=np.uint8)
        mask = np.zeros((10, 10), dtype=bool)
        mask[0:5, 0:5] = True  # touches two borders
        result = poisson_blend(bg, src, mask)
        assert result.image.shape == (10, 10, 3)
        assert result.converged
        assert (result.image == 50).all()  # constant case again

    def test_input_validation(self):
        bg = np.zeros((8, 8, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="empty"):
            poisson_blend(bg, bg, np.zeros((8, 8), dtype=bool))
        with pytest.raises(ValueError, match="mismatch"):
            poisson_blend(bg, np.zeros((9, 8, 3), dtype=np.uint8), np.ones((8, 8), dtype=bool))


class TestResolveAndDispatch:
    def test_random_family_excludes_poisson(self):
        rng = np.random.default_rng(10)
        seen = set()
        for _ in range(400):
            method = resolve_blend_method("random", rng)
            name = blend_method_name(method)
            seen.add(name)
            assert name != "poisson"
            if isinstance(method, MotionBlur):
                assert 3 <= method.length <= 9
                assert 0.0 <= method.angle < math.pi
        assert seen == {"none", "linear", "gaussian", "motion"}

    def test_named_methods(self):
        rng = np.random.default_rng(0)
        assert isinstance(resolve_blend_method("none", rng), BlendNone)
        assert isinstance(resolve_blend_method("linear", rng), LinearRamp)
        assert isinstance(resolve_blend_method("gaussian", rng), GaussianAlpha)
        assert isinstance(resolve_blend_method("poisson", rng), PoissonBlend)
        with pytest.raises(ValueError, match="unknown"):
            resolve_blend_method("sparkle", rng)

    def test_resolution_deterministic(self):
        a = [resolve_blend_method("random", np.random.default_rng(3)) for _ in range(5)]
        b = [resolve_blend_method("random", np.random.default_rng(3)) for _ in range(5)]
        assert a == b

    def test_hard_paste_changes_only_mask(self):
        rng = np.random.default_rng(11)
        bg = rng.integers(0, 128, size=(30, 30, 3)).astype(np.uint8)
        rgb = np.full((8, 8, 3), 120, dtype=np.uint8)
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:6, 2:6] = True
        out = composite_with_method(bg, rgb, mask, 10, 12, BlendNone())
        changed = (out != bg).any(axis=2)
        expected = np.zeros((30, 30), dtype=bool)
        expected[14:18, 12:16] = True
        np.testing.assert_array_equal(changed, expected)

    def test_blend_centers_cutout_in_box(self):
        bg = np.full((50, 50, 3), 40, dtype=np.uint8)
        rgba = np.zeros((10, 10, 4), dtype=np.uint8)
        rgba[:, :, :3] = 99
        rgba[:, :, 3] = 255
        cutout = InstanceCutout(
            category="widget",
            rgba=rgba,
            tight_box=BoundingBox(0, 0, 10, 10),
            source_image_id="s",
            source_object_index=0,
        )
        out = blend(bg, cutout, BoundingBox(20, 20, 30, 30), 1.0, BlendNone())
        assert (out[20:30, 20:30] == 99).all()
        assert (out[:20] == 40).all() and (out[30:] == 40).all()

    def test_paste_anchor_clamps_to_image(self):
        assert paste_anchor(BoundingBox(20, 20, 30, 30), 10, 10, 50, 50) == (20, 20)
        assert paste_anchor(BoundingBox(0, 0, 4, 4), 10, 10, 50, 50) == (0, 0)
        assert paste_anchor(BoundingBox(46, 46, 50, 50), 10, 10, 50, 50) == (40, 40)

    def test_motion_dispatch_blurs_whole_image(self):
        rng = np.random.default_rng(12)
        bg = rng.integers(0, 128, size=(30, 30, 3)).astype(np.uint8)
        rgb = np.full((6, 6, 3), 120, dtype=np.uint8)
        mask = np.ones((6, 6), dtype=bool)
        out = composite_with_method(bg, rgb, mask, 2, 2, MotionBlur(length=5, angle=0.0))
        # Pixels far from the paste are blurred too.
        assert (out[20:, 20:] != bg[20:, 20:]).any()

    def test_poisson_dispatch_localized(self):
        rng = np.random.default_rng(13)
        bg = rng.integers(0, 128, size=(30, 30, 3)).astype(np.uint8)
        rgb = np.full((6, 6, 3), 100, dtype=np.uint8)
        mask = np.ones((6, 6), dtype=bool)
        out = composite_with_method(bg, rgb, mask, 10, 10, PoissonBlend())
        # Only the padded paste neighborhood may change.
        changed = (out != bg).any(axis=2)
        assert not changed[:9].any() and not changed[18:].any()
        assert not changed[:, :9].any() and not changed[:, 18:].any()
        assert changed[10:16, 10:16].any()
