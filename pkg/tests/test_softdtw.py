import math

import numpy as np
import pytest
import torch

from warpalign.errors import ConfigError, DomainError, ShapeError
from warpalign.losses import l1_spectrogram_loss
from warpalign.softdtw import (
    SENTINEL,
    DtwConfig,
    brute_force_hard_dtw,
    brute_force_soft_dtw,
    count_paths,
    delannoy,
    enumerate_paths,
    frame_cost_matrix,
    hard_dtw,
    path_cost,
    skew_matrix,
    soft_dtw,
    soft_dtw_batch,
    soft_dtw_torch,
    soft_minimum,
)


def pair(rng, t, f, t_gt=None):
    return rng.normal(size=(t, f)), rng.normal(size=(t if t_gt is None else t_gt, f))


class TestSoftMinimum:
    def test_dominated_term(self):
        assert abs(soft_minimum([0.0, 1.0], 0.01)) < 1e-40

    def test_equal_values(self):
        assert soft_minimum([0.0, 0.0], 0.01) == pytest.approx(-0.01 * math.log(2), abs=1e-15)

    def test_single_element_exact(self):
        assert soft_minimum([3.25], 0.01) == 3.25

    def test_empty_raises(self):
        with pytest.raises(DomainError):
            soft_minimum([], 0.01)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            soft_minimum([1.0], 0.0)

    def test_large_values_stable(self):
        assert soft_minimum([1e6, 1e6 + 1.0], 0.01) == pytest.approx(1e6)

    def test_bounded_by_min(self, rng):
        v = rng.normal(size=7)
        s = soft_minimum(v, 0.5)
        assert v.min() - 0.5 * math.log(7) - 1e-12 <= s <= v.min()


class TestFrameCostMatrix:
    def test_identical_zero_diagonal(self, rng):
        a = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(np.diag(frame_cost_matrix(a, a)), 0.0)

    def test_worked_example(self):
        np.testing.assert_array_equal(frame_cost_matrix([[0.0], [1.0]], [[0.0], [0.0]]),
                                      [[0.0, 0.0], [1.0, 1.0]])

    def test_bin_mismatch(self):
        with pytest.raises(ShapeError):
            frame_cost_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


class TestSkew:
    def test_two_by_two(self):
        x = np.array([["a", "b"], ["c", "d"]])
        np.testing.assert_array_equal(skew_matrix(x), [["a", "b"], ["c", "b"], ["c", "d"]])

    def test_one_by_one(self):
        np.testing.assert_array_equal(skew_matrix(np.array([[7.0]])), [[7.0]])

    def test_loop_oracle(self, rng):
        x = rng.normal(size=(3, 2))
        h, w = x.shape
        expected = np.empty((h + w - 1, w))
        for i in range(h + w - 1):
            for j in range(w):
                expected[i, j] = x[min(max(i - j, 0), h - 1), j]
        np.testing.assert_array_equal(skew_matrix(x), expected)


class TestPathCounting:
    @pytest.mark.parametrize("t,count", [(2, 3), (3, 13), (4, 63), (5, 321), (6, 1683),
                                         (7, 8989), (8, 48639)])
    def test_central_delannoy(self, t, count):
        assert count_paths(t) == count

    def test_enumeration_matches_count(self):
        for t_gen in range(1, 5):
            for t_gt in range(1, 5):
                paths = list(enumerate_paths(t_gen, t_gt))
                assert len(paths) == delannoy(t_gen - 1, t_gt - 1)
                assert len({tuple(p) for p in paths}) == len(paths)

    def test_t2_paths(self):
        assert sorted(map(tuple, enumerate_paths(2))) == sorted([
            ((0, 0), (1, 1)), ((0, 0), (0, 1), (1, 1)), ((0, 0), (1, 0), (1, 1))])

    def test_worked_path_costs(self):
        gen, gt = [[0.0], [1.0]], [[0.0], [0.0]]
        assert path_cost(gen, gt, [(0, 0), (1, 1)]) == 1.0
        assert path_cost(gen, gt, [(0, 0), (0, 1), (1, 1)]) == 3.0
        assert path_cost(gen, gt, [(0, 0), (1, 0), (1, 1)]) == 4.0


class TestSoftDtwExamples:
    @pytest.mark.parametrize("t", [1, 2, 5, 17, 47])
    def test_identical_is_zero(self, rng, t):
        a = rng.normal(size=(t, 4))
        assert abs(soft_dtw(a, a).value) <= 1e-8

    def test_single_frame(self, rng):
        a, b = pair(rng, 1, 5)
        assert soft_dtw(a, b).value == np.mean(np.abs(a - b))

    def test_worked_example(self):
        tau = 0.01
        expected = -tau * math.log(math.exp(-100) + math.exp(-300) + math.exp(-400))
        value = soft_dtw([[0.0], [1.0]], [[0.0], [0.0]]).value
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            soft_dtw(np.zeros((2, 1)), np.zeros((2, 1)), DtwConfig(temperature=0.0))

    def test_negative_penalty(self):
        with pytest.raises(ConfigError):
            soft_dtw(np.zeros((2, 1)), np.zeros((2, 1)), DtwConfig(warp_penalty=-1.0))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            soft_dtw(np.zeros((2, 1)), np.zeros((2, 2)))

    def test_one_dimensional_input_is_single_bin(self):
        assert soft_dtw([0.0, 1.0], [0.0, 0.0]).value == pytest.approx(1.0, abs=1e-12)


class TestSoftDtwOracle:
    def test_matches_brute_force_t4(self, rng):
        for _ in range(100):
            a, b = pair(rng, 4, 3)
            cfg = DtwConfig(temperature=float(rng.uniform(0.01, 2.0)),
                            warp_penalty=float(rng.uniform(0.0, 2.0)))
            assert abs(soft_dtw(a, b, cfg).value - brute_force_soft_dtw(a, b, cfg)) <= 1e-9

    @pytest.mark.parametrize("t_gen,t_gt", [(2, 5), (5, 3), (1, 4), (4, 1)])
    def test_rectangular(self, rng, t_gen, t_gt):
        a, b = pair(rng, t_gen, 2, t_gt)
        cfg = DtwConfig(temperature=0.3)
        assert abs(soft_dtw(a, b, cfg).value - brute_force_soft_dtw(a, b, cfg)) <= 1e-9

    def test_oracle_matches_per_path_loop(self, rng):
        a, b = pair(rng, 4, 2, 5)
        cfg = DtwConfig(warp_penalty=0.7, temperature=0.3)
        costs = [path_cost(a, b, p, 0.7) for p in enumerate_paths(4, 5)]
        assert brute_force_soft_dtw(a, b, cfg) == pytest.approx(soft_minimum(costs, 0.3), abs=1e-12)
        assert brute_force_hard_dtw(a, b, 0.7) == pytest.approx(min(costs), abs=1e-12)

    def test_brute_force_refuses_large(self, rng):
        a, b = pair(rng, 9, 1)
        with pytest.raises(DomainError):
            brute_force_soft_dtw(a, b)

    def test_band_full_width_is_exact(self, rng):
        for t in range(1, 7):
            a, b = pair(rng, t, 2)
            cfg = DtwConfig(temperature=0.2)
            assert (soft_dtw(a, b, DtwConfig(temperature=0.2, band=t - 1)).value
                    == soft_dtw(a, b, cfg).value)

    def test_band_matches_restricted_enumeration(self, rng):
        a, b = pair(rng, 5, 2)
        cfg = DtwConfig(temperature=0.2, band=1)
        assert abs(soft_dtw(a, b, cfg).value - brute_force_soft_dtw(a, b, cfg)) <= 1e-9

    def test_band_zero_is_diagonal(self, rng):
        a, b = pair(rng, 6, 3)
        value = soft_dtw(a, b, DtwConfig(band=0)).value
        assert value == pytest.approx(l1_spectrogram_loss(a, b)[0], abs=1e-12)

    def test_batch_matches_single(self, rng):
        a = rng.normal(size=(4, 5, 3))
        b = rng.normal(size=(4, 5, 3))
        values, grads = soft_dtw_batch(a, b, DtwConfig(temperature=0.1))
        for k in range(4):
            single = soft_dtw(a[k], b[k], DtwConfig(temperature=0.1))
            assert values[k] == pytest.approx(single.value, abs=1e-12)
            np.testing.assert_allclose(grads[k], single.grad_gen, atol=1e-12)


class TestSoftDtwProperties:
    def test_sandwich(self, rng):
        for t in range(2, 7):
            a, b = pair(rng, t, 2)
            cfg = DtwConfig(temperature=0.05)
            soft = soft_dtw(a, b, cfg).value
            hard = hard_dtw(a, b, cfg).value
            assert soft <= hard + 1e-12
            assert hard <= soft + cfg.temperature * math.log(count_paths(t)) + 1e-12

    def test_monotone_in_temperature(self, rng):
        a, b = pair(rng, 5, 3)
        values = [soft_dtw(a, b, DtwConfig(temperature=tau)).value
                  for tau in (1e-3, 1e-2, 0.1, 0.5, 1.0, 3.0)]
        assert all(x >= y - 1e-12 for x, y in zip(values, values[1:]))

    def test_free_warping_not_worse_than_l1(self, rng):
        for t in range(1, 9):
            a, b = pair(rng, t, 3)
            assert hard_dtw(a, b, DtwConfig(warp_penalty=0.0)).value <= l1_spectrogram_loss(a, b)[0] + 1e-12

    def test_large_penalty_is_l1(self, rng):
        for t in range(1, 7):
            a, b = pair(rng, t, 2)
            w = t * frame_cost_matrix(a, b).max() + 1.0
            assert hard_dtw(a, b, DtwConfig(warp_penalty=w)).value == pytest.approx(
                l1_spectrogram_loss(a, b)[0], abs=1e-12)

    def test_gradient_against_finite_differences(self, rng):
        a, b = pair(rng, 4, 3)
        cfg = DtwConfig(temperature=0.5)
        grad = soft_dtw(a, b, cfg).grad_gen
        h = 1e-6
        fd = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            e = np.zeros_like(a)
            e[idx] = h
            fd[idx] = (soft_dtw(a + e, b, cfg).value - soft_dtw(a - e, b, cfg).value) / (2 * h)
        np.testing.assert_allclose(grad, fd, atol=1e-7)

    def test_gradient_wrt_target(self, rng):
        a, b = pair(rng, 3, 2, 4)
        cfg = DtwConfig(temperature=0.5)
        _, _, grad_gt = soft_dtw_batch(a, b, cfg, with_gt=True)
        h = 1e-6
        for idx in np.ndindex(b.shape):
            e = np.zeros_like(b)
            e[idx] = h
            fd = (soft_dtw(a, b + e, cfg).value - soft_dtw(a, b - e, cfg).value) / (2 * h)
            assert grad_gt[0][idx] == pytest.approx(fd, abs=1e-7)

    def test_sentinel_saturates(self, rng):
        a, b = pair(rng, 3, 1)
        assert soft_dtw(a, b, DtwConfig(band=0)).value < SENTINEL


class TestHardDtw:
    def test_identical_diagonal(self, rng):
        a = rng.normal(size=(6, 2))
        result = hard_dtw(a, a)
        assert result.value == 0.0
        assert result.path == [(i, i) for i in range(6)]
        assert result.path_length == 6
        np.testing.assert_array_equal(result.grad_gen, 0.0)

    def test_worked_example(self):
        result = hard_dtw([[0.0], [1.0]], [[0.0], [0.0]])
        assert result.value == 1.0
        assert result.path == [(0, 0), (1, 1)]

    def test_path_length_bounds(self, rng):
        for _ in range(200):
            t = int(rng.integers(1, 9))
            a, b = pair(rng, t, 2)
            k = hard_dtw(a, b, DtwConfig(warp_penalty=float(rng.uniform(0, 0.5)))).path_length
            assert t <= k <= 2 * t - 1

    def test_path_is_monotone_and_cost_matches(self, rng):
        for _ in range(20):
            a, b = pair(rng, 5, 2, 4)
            result = hard_dtw(a, b, DtwConfig(warp_penalty=0.2))
            assert result.path[0] == (0, 0) and result.path[-1] == (4, 3)
            for (i0, j0), (i1, j1) in zip(result.path, result.path[1:]):
                assert (i1 - i0, j1 - j0) in {(1, 1), (0, 1), (1, 0)}
            assert path_cost(a, b, result.path, 0.2) == pytest.approx(result.value, abs=1e-12)
            assert result.value == pytest.approx(brute_force_hard_dtw(a, b, 0.2), abs=1e-12)

    def test_tie_order(self):
        # every cell costs 0 and warping is free, so all paths tie
        z = np.zeros((3, 1))
        assert hard_dtw(z, z, DtwConfig(warp_penalty=0.0)).path == [(0, 0), (1, 1), (2, 2)]
        result = hard_dtw(np.zeros((2, 1)), np.zeros((3, 1)), DtwConfig(warp_penalty=0.0))
        assert result.path == [(0, 0), (0, 1), (1, 2)]

    def test_batch_rejected(self):
        with pytest.raises(ShapeError):
            hard_dtw(np.zeros((2, 3, 1)), np.zeros((2, 3, 1)))


class TestTorchWrapper:
    def test_value_and_grad(self, rng):
        a, b = pair(rng, 5, 3)
        gen = torch.tensor(a[None], requires_grad=True)
        value = soft_dtw_torch(gen, torch.tensor(b[None]))
        value.sum().backward()
        reference = soft_dtw(a, b)
        assert value.item() == pytest.approx(reference.value, abs=1e-12)
        np.testing.assert_allclose(gen.grad[0].numpy(), reference.grad_gen, atol=1e-12)

    def test_upstream_gradient_scales(self, rng):
        a, b = pair(rng, 4, 2)
        gen = torch.tensor(a[None], requires_grad=True)
        (3.0 * soft_dtw_torch(gen, torch.tensor(b[None]))).sum().backward()
        np.testing.assert_allclose(gen.grad[0].numpy(), 3.0 * soft_dtw(a, b).grad_gen, atol=1e-12)

    def test_float32_input(self, rng):
        a, b = pair(rng, 4, 2)
        value = soft_dtw_torch(torch.tensor(a[None], dtype=torch.float32),
                               torch.tensor(b[None], dtype=torch.float32))
        assert value.dtype == torch.float32
