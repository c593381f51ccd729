import itertools

import numpy as np
import pytest

from surfgen.grid import HeightField
from surfgen.sandblast import (
    SandblastParams,
    SynthesisError,
    adsn_sample,
    extend_input,
    generate_sandblast,
    min_cost_seam,
    rpn_sample,
    stitch_patches,
)


def hf(data, spacing=1.0):
    return HeightField(spacing, np.asarray(data, dtype=np.float64))


def brute_force_seam_cost(a, b):
    """Enumerate every monotone 8-connected vertical path; return the min cost."""
    err = (a - b) ** 2
    rows, cols = err.shape
    best = np.inf
    for start in range(cols):
        for moves in itertools.product((-1, 0, 1), repeat=rows - 1):
            pos = start
            cost = err[0, pos]
            ok = True
            for r, m in enumerate(moves, start=1):
                pos += m
                if not (0 <= pos < cols):
                    ok = False
                    break
                cost += err[r, pos]
            if ok and cost < best:
                best = cost
    return best


class TestAdsn:
    def test_constant_exemplar_rejected(self):
        with pytest.raises(SynthesisError):
            adsn_sample(hf(np.full((8, 8), 7.0)), 8, 8, 0)

    def test_zero_size_rejected(self):
        with pytest.raises(SynthesisError):
            adsn_sample(hf(np.random.default_rng(0).normal(size=(8, 8))), 0, 8, 0)

    def test_monte_carlo_mean_law(self):
        # per-pixel variance of one realization equals the exemplar's
        # population variance, so the 1000-sample mean lands within
        # 3*sigma/sqrt(1000) of the exemplar mean for ~99.7% of pixels
        rng = np.random.default_rng(42)
        ex = hf(rng.normal(loc=2.0, scale=0.5, size=(24, 24)))
        mu = ex.data.mean()
        sigma = ex.data.std()
        n_real = 1000
        acc = np.zeros((24, 24))
        for k in range(n_real):
            acc += adsn_sample(ex, 24, 24, k).data
        acc /= n_real
        bound = 3 * sigma / np.sqrt(n_real)
        frac = np.mean(np.abs(acc - mu) <= bound)
        assert frac >= 0.99

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(1)
        ex = hf(rng.normal(size=(16, 16)))
        a = adsn_sample(ex, 20, 12, seed=99)
        b = adsn_sample(ex, 20, 12, seed=99)
        assert np.array_equal(a.data, b.data)
        c = adsn_sample(ex, 20, 12, seed=100)
        assert not np.array_equal(a.data, c.data)

    def test_output_size_larger_than_exemplar(self):
        rng = np.random.default_rng(2)
        ex = hf(rng.normal(size=(10, 10)))
        out = adsn_sample(ex, 25, 31, seed=0)
        assert (out.rows, out.cols) == (25, 31)


class TestRpn:
    def test_modulus_preserved(self):
        rng = np.random.default_rng(3)
        ex = hf(rng.normal(loc=1.0, size=(32, 32)))
        out = rpn_sample(ex, seed=5)
        m_in = np.abs(np.fft.fft2(ex.data - ex.data.mean()))
        m_out = np.abs(np.fft.fft2(out.data - out.data.mean()))
        rel = np.abs(m_out - m_in) / np.maximum(m_in, 1e-12)
        nonzero = m_in > 1e-9 * m_in.max()
        assert rel[nonzero].max() <= 1e-6

    def test_autocorrelation_preserved(self):
        rng = np.random.default_rng(4)
        ex = hf(rng.normal(size=(24, 24)))
        out = rpn_sample(ex, seed=7)
        ac = lambda d: np.fft.ifft2(np.abs(np.fft.fft2(d - d.mean())) ** 2).real
        assert np.allclose(ac(ex.data), ac(out.data), atol=1e-8 * ex.data.size)

    def test_two_seeds_same_modulus_different_phase(self):
        rng = np.random.default_rng(5)
        ex = hf(rng.normal(size=(16, 16)))
        a = rpn_sample(ex, seed=1)
        b = rpn_sample(ex, seed=2)
        assert not np.allclose(a.data, b.data)
        assert np.allclose(np.abs(np.fft.fft2(a.data - a.data.mean())),
                           np.abs(np.fft.fft2(b.data - b.data.mean())), atol=1e-9)

    def test_mean_restored(self):
        rng = np.random.default_rng(6)
        ex = hf(rng.normal(loc=5.0, size=(16, 16)))
        out = rpn_sample(ex, seed=3)
        assert out.data.mean() == pytest.approx(ex.data.mean(), abs=1e-9)


class TestExtendInput:
    def test_same_size_is_identity(self):
        rng = np.random.default_rng(7)
        ex = hf(rng.normal(size=(10, 10)))
        out = extend_input(ex, 10, 10)
        assert np.allclose(out.data, ex.data)

    def test_doubling_amplifies_interior_by_two(self):
        rng = np.random.default_rng(8)
        ex = hf(rng.normal(size=(10, 10)))
        mu = ex.data.mean()
        out = extend_input(ex, 20, 20)
        assert np.allclose(out.data[:10, :10], 2.0 * (ex.data - mu) + mu)
        assert np.allclose(out.data[10:, :], mu)
        assert np.allclose(out.data[:10, 10:], mu)

    def test_mean_preserved(self):
        rng = np.random.default_rng(9)
        ex = hf(rng.normal(loc=3.0, size=(13, 9)))
        out = extend_input(ex, 40, 21)
        assert out.data.mean() == pytest.approx(ex.data.mean(), abs=1e-12)

    def test_shrink_rejected(self):
        ex = hf(np.zeros((10, 10)))
        with pytest.raises(SynthesisError):
            extend_input(ex, 5, 20)


class TestMinCostSeam:
    def test_identical_overlaps_zero_cost_leftmost(self):
        a = np.random.default_rng(10).normal(size=(6, 4))
        seam = min_cost_seam(a, a.copy(), "vertical")
        assert seam.cost == 0.0
        assert np.all(seam.indices == 0)

    def test_matches_brute_force_on_random_overlaps(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            a = rng.normal(size=(6, 4))
            b = rng.normal(size=(6, 4))
            seam = min_cost_seam(a, b, "vertical")
            assert seam.cost == pytest.approx(brute_force_seam_cost(a, b), abs=1e-12)

    def test_zero_difference_column_is_followed(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=(8, 5)) * 100
        b = rng.normal(size=(8, 5)) * 100 + 500
        b[:, 2] = a[:, 2]
        seam = min_cost_seam(a, b, "vertical")
        assert np.all(seam.indices == 2)
        assert seam.cost == 0.0

    def test_path_is_8_connected(self):
        rng = np.random.default_rng(13)
        seam = min_cost_seam(rng.normal(size=(20, 7)), rng.normal(size=(20, 7)))
        assert np.all(np.abs(np.diff(seam.indices)) <= 1)

    def test_horizontal_is_transpose(self):
        rng = np.random.default_rng(14)
        a = rng.normal(size=(5, 9))
        b = rng.normal(size=(5, 9))
        h = min_cost_seam(a, b, "horizontal")
        v = min_cost_seam(a.T, b.T, "vertical")
        assert h.cost == v.cost
        assert np.array_equal(h.indices, v.indices)

    def test_dim_mismatch(self):
        with pytest.raises(SynthesisError):
            min_cost_seam(np.zeros((4, 3)), np.zeros((4, 4)))


class TestStitchPatches:
    def test_single_patch_identity(self):
        p = hf(np.random.default_rng(15).normal(size=(16, 16)))
        out = stitch_patches([[p]], overlap_px=4)
        assert np.array_equal(out.data, p.data)

    def test_pair_agreeing_on_overlap_reassembles_the_field(self):
        # patches cut as overlapping windows of one field: the seam sees a
        # zero-cost overlap and the quilt reproduces the field exactly
        big = np.random.default_rng(16).normal(size=(12, 20))
        left, right = hf(big[:, :12]), hf(big[:, 8:])
        out = stitch_patches([[left, right]], overlap_px=4)
        assert (out.rows, out.cols) == (12, 20)
        assert np.array_equal(out.data, big)
        assert np.array_equal(out.data[:, :12], left.data)

    def test_every_pixel_comes_from_exactly_one_patch(self):
        # give the four patches disjoint value ranges, then check membership
        patches = [[hf(np.full((8, 8), 0.0) + 1000.0 * (2 * r + c)
                       + np.arange(64, dtype=float).reshape(8, 8))
                    for c in range(2)] for r in range(2)]
        out = stitch_patches(patches, overlap_px=3)
        assert (out.rows, out.cols) == (13, 13)
        all_vals = [set(p.data.ravel().tolist()) for row in patches for p in row]
        for v in out.data.ravel():
            assert sum(v in s for s in all_vals) == 1

    def test_overlap_too_large_rejected(self):
        p = hf(np.zeros((8, 8)))
        with pytest.raises(SynthesisError):
            stitch_patches([[p, p]], overlap_px=8)


class TestGenerateSandblast:
    def make_exemplar(self, seed=20, size=64, mean=5.0):
        rng = np.random.default_rng(seed)
        return hf(rng.normal(loc=mean, scale=0.4, size=(size, size)), spacing=1.0)

    def test_single_patch_when_out_equals_patch(self):
        ex = self.make_exemplar()
        params = SandblastParams(out_rows=48, out_cols=48, target_spacing_mm=1.0,
                                 patch_rows=48, patch_cols=48, overlap_px=8, seed=3)
        out = generate_sandblast(ex, params)
        assert (out.rows, out.cols) == (48, 48)

    def test_tiling_arithmetic_256_from_128(self):
        ex = self.make_exemplar(size=128)
        params = SandblastParams(out_rows=256, out_cols=256, target_spacing_mm=1.0,
                                 patch_rows=128, patch_cols=128, overlap_px=32, seed=1)
        # ceil((256-32)/(128-32)) = 3 per axis -> 9 patches
        stride = params.patch_rows - params.overlap_px
        n = -(-(params.out_rows - params.overlap_px) // stride)
        assert n * n == 9
        out = generate_sandblast(ex, params)
        assert (out.rows, out.cols) == (256, 256)

    def test_mean_close_to_exemplar(self):
        ex = self.make_exemplar(size=48)
        means = []
        for seed in range(20):
            params = SandblastParams(out_rows=80, out_cols=80, target_spacing_mm=1.0,
                                     patch_rows=48, patch_cols=48, overlap_px=12,
                                     seed=seed)
            means.append(generate_sandblast(ex, params).data.mean())
        assert np.mean(means) == pytest.approx(ex.data.mean(), rel=0.02)

    def test_deterministic(self):
        ex = self.make_exemplar(size=40)
        params = SandblastParams(out_rows=70, out_cols=60, target_spacing_mm=1.0,
                                 patch_rows=40, patch_cols=40, overlap_px=10, seed=77)
        a = generate_sandblast(ex, params)
        b = generate_sandblast(ex, params)
        assert np.array_equal(a.data, b.data)

    def test_rpn_mode(self):
        ex = self.make_exemplar(size=40)
        params = SandblastParams(out_rows=64, out_cols=64, target_spacing_mm=1.0,
                                 patch_rows=40, patch_cols=40, overlap_px=10,
                                 generator="RPN", seed=5)
        out = generate_sandblast(ex, params)
        assert (out.rows, out.cols) == (64, 64)
