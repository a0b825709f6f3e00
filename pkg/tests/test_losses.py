import numpy as np
import pytest
import torch

from radiogan.losses import (
    EmptyBatchError,
    disk_structuring_element,
    erode_background,
    erode_background_batch,
    loss_d_i,
    loss_d_is,
    loss_d_isg,
    loss_g,
    masked_l1,
)


def t(*values):
    return torch.tensor(values, dtype=torch.float64)


def brute_force_erosion(background, radius):
    """Per-pixel min over the disk footprint, outside-of-image treated as 1."""
    h, w = background.shape
    footprint = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dy * dy + dx * dx <= radius * radius
    ]
    out = np.zeros_like(background, dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            vals = [
                background[i + dy, j + dx] if 0 <= i + dy < h and 0 <= j + dx < w else 1
                for dy, dx in footprint
            ]
            out[i, j] = min(vals)
    return out


class TestDiscriminatorLosses:
    def test_d_i_perfect_scores(self):
        assert loss_d_i(t(1.0, 1.0), t(0.0, 0.0)).item() == 0.0

    def test_d_i_all_zero_scores(self):
        assert loss_d_i(t(0.0), t(0.0)).item() == 1.0

    def test_d_i_hand_case(self):
        # reals (0.5, 1.5), fakes (0.2): (0.25 + 0.25)/2 + 0.04 = 0.29
        assert loss_d_i(t(0.5, 1.5), t(0.2)).item() == pytest.approx(0.29, abs=1e-9)

    def test_d_is_perfect(self):
        assert loss_d_is(t(1.0), t(0.0), t(0.0)).item() == 0.0

    def test_d_is_all_ones(self):
        assert loss_d_is(t(1.0), t(1.0), t(1.0)).item() == pytest.approx(2.0, abs=1e-12)

    def test_d_is_hand_case(self):
        assert loss_d_is(t(0.8), t(0.1), t(0.3)).item() == pytest.approx(0.14, abs=1e-9)

    def test_d_isg_perfect(self):
        assert loss_d_isg(t(1.0), t(0.0), t(0.0), t(0.0)).item() == 0.0

    def test_d_isg_all_halves(self):
        assert loss_d_isg(t(0.5), t(0.5), t(0.5), t(0.5)).item() == pytest.approx(1.0, abs=1e-12)

    def test_d_isg_hand_case(self):
        assert loss_d_isg(t(0.9), t(0.2), t(0.1), t(0.3)).item() == pytest.approx(0.15, abs=1e-9)

    def test_batch_means_not_sums(self):
        # each term is a mean over its batch
        assert loss_d_i(t(0.5, 0.5, 0.5, 0.5), t(0.5, 0.5)).item() == pytest.approx(0.5, abs=1e-12)

    def test_empty_batch_errors(self):
        with pytest.raises(EmptyBatchError):
            loss_d_i(t(), t(0.0))


class TestGeneratorLoss:
    def test_optimum_is_zero(self):
        x = torch.rand(2, 1, 4, 4, dtype=torch.float64)
        m = torch.ones_like(x)
        out = loss_g(t(1.0), t(1.0), t(1.0), x, x, m, weight=10.0)
        assert out.item() == 0.0

    def test_lambda_zero_removes_reconstruction(self):
        x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        other = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        m = torch.ones_like(x)
        a = loss_g(t(0.5), t(0.5), t(0.5), x, x, m, weight=0.0)
        b = loss_g(t(0.5), t(0.5), t(0.5), x, other, m, weight=0.0)
        assert a.item() == b.item()

    def test_hand_case_two_by_two(self):
        # diff (0.1, -0.1, 0.2, 0), full background, scores all 0:
        # 3*1 + lam * mean|diff| = 3 + lam * 0.1
        base = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        synth = torch.tensor([[[[0.1, -0.1], [0.2, 0.0]]]], dtype=torch.float64)
        m = torch.ones_like(base)
        lam = 7.0
        out = loss_g(t(0.0), t(0.0), t(0.0), synth, base, m, weight=lam)
        assert out.item() == pytest.approx(3.0 + lam * 0.1, abs=1e-9)

    def test_masked_l1_averages_over_all_pixels(self):
        synth = torch.ones(1, 1, 2, 2, dtype=torch.float64)
        base = torch.zeros_like(synth)
        m = torch.tensor([[[[1.0, 0.0], [0.0, 0.0]]]], dtype=torch.float64)
        # one differing background pixel out of four total
        assert masked_l1(synth, base, m).item() == pytest.approx(0.25, abs=1e-12)


class TestErodeBackground:
    def test_radius_zero_is_exact_complement(self):
        rng = np.random.default_rng(0)
        mask = (rng.random((16, 16)) < 0.3).astype(np.uint8)
        np.testing.assert_array_equal(erode_background(mask, 0), 1 - mask)

    def test_empty_mask_any_radius_is_all_ones(self):
        out = erode_background(np.zeros((12, 12)), 3)
        np.testing.assert_array_equal(out, np.ones((12, 12), dtype=np.uint8))

    def test_centered_square_hand_case(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[6:11, 6:11] = 1
        out = erode_background(mask, 1)
        expected = brute_force_erosion(1 - mask, 1)
        np.testing.assert_array_equal(out, expected)
        # the one-pixel ring around the square is gone from the background
        assert out[5, 8] == 0 and out[4, 8] == 1
        assert out[8, 11] == 0 and out[8, 12] == 1

    def test_soft_mask_binarized_at_half(self):
        soft = np.array([[0.4, 0.6], [0.5, 0.1]])
        np.testing.assert_array_equal(erode_background(soft, 0), np.array([[1, 0], [0, 1]], dtype=np.uint8))

    @pytest.mark.parametrize("radius", [1, 2, 3])
    def test_matches_brute_force_on_random_masks(self, radius):
        rng = np.random.default_rng(radius)
        for _ in range(15):
            mask = (rng.random((32, 32)) < rng.uniform(0.05, 0.5)).astype(np.uint8)
            got = erode_background(mask, radius)
            expected = brute_force_erosion(1 - mask, radius)
            np.testing.assert_array_equal(got, expected)

    def test_result_subset_of_complement(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            mask = (rng.random((24, 24)) < 0.3).astype(np.uint8)
            out = erode_background(mask, 2)
            assert not np.any(out & mask)

    def test_batch_wrapper(self):
        masks = torch.rand(3, 1, 8, 8)
        out = erode_background_batch(masks, 1)
        assert out.shape == masks.shape
        for k in range(3):
            np.testing.assert_array_equal(
                out[k, 0].numpy(), erode_background(masks[k, 0].numpy(), 1)
            )

    def test_structuring_element_shapes(self):
        np.testing.assert_array_equal(disk_structuring_element(0), [[True]])
        el = disk_structuring_element(1)
        np.testing.assert_array_equal(el, [[False, True, False], [True, True, True], [False, True, False]])


class TestLsganOptimum:
    def test_pointwise_optimum_matches_a_over_a_plus_b(self):
        # 4 distinguishable inputs with real/fake multiplicities (a_i, b_i)
        # and equal real/fake totals (as in training batches); a free score
        # per input minimizing the least-squares objective must land on
        # a/(a+b).
        a = np.array([3, 1, 2, 2], dtype=np.float64)
        b = np.array([1, 4, 2, 1], dtype=np.float64)
        real_idx = torch.tensor(np.repeat(np.arange(4), a.astype(int)))
        fake_idx = torch.tensor(np.repeat(np.arange(4), b.astype(int)))
        scores = torch.zeros(4, dtype=torch.float64, requires_grad=True)

        opt = torch.optim.LBFGS([scores], lr=0.5, max_iter=200, tolerance_grad=1e-14)

        def closure():
            opt.zero_grad()
            loss = loss_d_i(scores[real_idx], scores[fake_idx])
            loss.backward()
            return loss

        opt.step(closure)
        expected = a / (a + b)
        np.testing.assert_allclose(scores.detach().numpy(), expected, atol=1e-4)
