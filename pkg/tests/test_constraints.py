import numpy as np
import pytest

from prog3d import ContractViolation
from prog3d.constraints import (ConstraintWeights, InitSchedule,
                                consistency_loss, initialization_loss,
                                naive_consistency_loss)
from prog3d.region import MaskSet


def rand_maps(rng, h=6, w=5):
    return rng.random((h, w, 3)), rng.random((h, w))


def rand_masks(rng, h=6, w=5):
    return MaskSet(rng.integers(0, 2, (h, w)), rng.integers(0, 2, (h, w)))


class TestSchedule:
    def test_kappa_shape(self):
        s = InitSchedule(strength=0.5, k_max=100)
        assert s.kappa(0) == 0.5
        assert s.kappa(50) == 0.25
        assert s.kappa(100) == 0.0
        assert s.kappa(250) == 0.0

    def test_kappa_non_increasing(self):
        s = InitSchedule(strength=0.7, k_max=17)
        vals = [s.kappa(k) for k in range(40)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert all(v >= 0 for v in vals)

    def test_invalid_schedule(self):
        with pytest.raises(ContractViolation):
            InitSchedule(strength=-0.1, k_max=10)
        with pytest.raises(ContractViolation):
            InitSchedule(strength=0.5, k_max=0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractViolation):
            ConstraintWeights(w_consist=-1.0)


class TestConsistency:
    def test_consistent_scene_is_free(self):
        rng = np.random.default_rng(0)
        color_s, _ = rand_maps(rng)
        masks = MaskSet(np.zeros((6, 5)), np.zeros((6, 5)))
        loss, dc, do = consistency_loss(color_s.copy(), np.zeros((6, 5)), color_s, masks)
        assert loss == 0.0
        assert not np.any(dc)
        assert not np.any(do)

    def test_single_pixel_color_term(self):
        color_s = np.zeros((1, 1, 3))
        color_t = np.array([[[0.1, 0.0, 0.0]]])
        masks = MaskSet(np.zeros((1, 1)), np.ones((1, 1)))
        loss, dc, do = consistency_loss(color_t, np.ones((1, 1)), color_s, masks)
        assert loss == pytest.approx(0.01, abs=1e-15)
        assert np.allclose(dc, [[[0.2, 0.0, 0.0]]], atol=1e-15)
        assert do[0, 0] == 0.0

    def test_single_pixel_empty_term(self):
        masks = MaskSet(np.zeros((1, 1)), np.zeros((1, 1)))
        loss, dc, do = consistency_loss(np.zeros((1, 1, 3)), np.array([[0.3]]),
                                        np.zeros((1, 1, 3)), masks)
        assert loss == pytest.approx(0.09, abs=1e-15)
        assert do[0, 0] == pytest.approx(0.6, abs=1e-15)
        assert not np.any(dc)

    def test_editable_pixels_unconstrained(self):
        rng = np.random.default_rng(1)
        color_s, _ = rand_maps(rng)
        color_t, opacity_t = rand_maps(rng)
        masks = MaskSet(np.ones((6, 5)), rng.integers(0, 2, (6, 5)))
        loss, dc, do = consistency_loss(color_t, opacity_t, color_s, masks)
        assert loss == 0.0
        assert not np.any(dc) and not np.any(do)

    def test_gate_disjointness(self):
        # A pixel feeds the color term or the empty term, never both.
        rng = np.random.default_rng(2)
        color_s, _ = rand_maps(rng)
        color_t, opacity_t = rand_maps(rng)
        masks = rand_masks(rng)
        _, dc, do = consistency_loss(color_t, opacity_t, color_s, masks)
        color_active = np.any(dc != 0, axis=-1)
        empty_active = do != 0
        assert not np.any(color_active & empty_active)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ContractViolation):
            consistency_loss(rng.random((4, 5, 3)), rng.random((6, 5)),
                             rng.random((6, 5, 3)), rand_masks(rng))

    def test_pixel_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        color_s, _ = rand_maps(rng)
        color_t, opacity_t = rand_maps(rng)
        masks = rand_masks(rng)
        _, dc, do = consistency_loss(color_t, opacity_t, color_s, masks)
        h = 1e-6
        for _ in range(6):
            i, j = rng.integers(0, 6), rng.integers(0, 5)
            ch = rng.integers(0, 3)

            def at(cb=0.0, ob=0.0):
                c = color_t.copy()
                o = opacity_t.copy()
                c[i, j, ch] += cb
                o[i, j] += ob
                return consistency_loss(c, o, color_s, masks)[0]

            fd_c = (at(cb=h) - at(cb=-h)) / (2 * h)
            fd_o = (at(ob=h) - at(ob=-h)) / (2 * h)
            assert dc[i, j, ch] == pytest.approx(fd_c, rel=1e-6, abs=1e-9)
            assert do[i, j] == pytest.approx(fd_o, rel=1e-6, abs=1e-9)


class TestNaiveConsistency:
    def test_identical_renders(self):
        rng = np.random.default_rng(5)
        color, opacity = rand_maps(rng)
        loss, dc, do = naive_consistency_loss(color.copy(), opacity, color, rand_masks(rng))
        assert loss == 0.0
        assert not np.any(dc)
        assert not np.any(do)

    def test_single_pixel_hand_value(self):
        masks = MaskSet(np.zeros((1, 1)), np.ones((1, 1)))
        loss, dc, _ = naive_consistency_loss(np.array([[[0.0, 0.2, 0.0]]]),
                                             np.ones((1, 1)),
                                             np.zeros((1, 1, 3)), masks)
        assert loss == pytest.approx(0.04, abs=1e-15)
        assert np.allclose(dc, [[[0.0, 0.4, 0.0]]], atol=1e-15)

    def test_collapses_to_split_loss_on_full_content(self):
        rng = np.random.default_rng(6)
        color_s, _ = rand_maps(rng)
        color_t, opacity_t = rand_maps(rng)
        masks = MaskSet(rng.integers(0, 2, (6, 5)), np.ones((6, 5)))
        full, dc_full, _ = consistency_loss(color_t, opacity_t, color_s, masks)
        naive, dc_naive, _ = naive_consistency_loss(color_t, opacity_t, color_s, masks)
        assert naive == pytest.approx(full, rel=1e-12)
        assert np.allclose(dc_full, dc_naive, atol=1e-15)

    def test_pixel_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        color_s, _ = rand_maps(rng)
        color_t, opacity_t = rand_maps(rng)
        masks = rand_masks(rng)
        _, dc, _ = naive_consistency_loss(color_t, opacity_t, color_s, masks)
        i, j, ch = 2, 3, 1
        h = 1e-6
        c_hi = color_t.copy(); c_hi[i, j, ch] += h
        c_lo = color_t.copy(); c_lo[i, j, ch] -= h
        hi = naive_consistency_loss(c_hi, opacity_t, color_s, masks)[0]
        lo = naive_consistency_loss(c_lo, opacity_t, color_s, masks)[0]
        assert dc[i, j, ch] == pytest.approx((hi - lo) / (2 * h), rel=1e-6, abs=1e-9)


class TestInitialization:
    def test_cutoff(self):
        rng = np.random.default_rng(8)
        opacity = rng.random((4, 4))
        masks = MaskSet(np.ones((4, 4)), np.zeros((4, 4)))
        sched = InitSchedule(strength=0.5, k_max=25)
        for k in (25, 26, 1000):
            loss, do = initialization_loss(opacity, masks, k, sched)
            assert loss == 0.0
            assert not np.any(do)

    def test_single_pixel_hand_value(self):
        opacity = np.array([[0.25]])
        masks = MaskSet(np.ones((1, 1)), np.zeros((1, 1)))
        sched = InitSchedule(strength=0.5, k_max=100)
        loss, do = initialization_loss(opacity, masks, 0, sched)
        assert loss == pytest.approx(0.28125, abs=1e-15)
        assert do[0, 0] == pytest.approx(-0.75, abs=1e-15)

    def test_outside_region_untouched(self):
        rng = np.random.default_rng(9)
        opacity = rng.random((4, 4))
        masks = MaskSet(np.zeros((4, 4)), np.ones((4, 4)))
        loss, do = initialization_loss(opacity, masks, 0,
                                       InitSchedule(strength=0.5, k_max=10))
        assert loss == 0.0
        assert not np.any(do)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        opacity = rng.random((4, 4))
        masks = MaskSet(rng.integers(0, 2, (4, 4)), np.zeros((4, 4)))
        sched = InitSchedule(strength=0.8, k_max=40)
        _, do = initialization_loss(opacity, masks, 13, sched)
        i, j = 1, 2
        h = 1e-6
        hi = opacity.copy(); hi[i, j] += h
        lo = opacity.copy(); lo[i, j] -= h
        fd = (initialization_loss(hi, masks, 13, sched)[0]
              - initialization_loss(lo, masks, 13, sched)[0]) / (2 * h)
        assert do[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_losses_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            color_s, _ = rand_maps(rng)
            color_t, opacity_t = rand_maps(rng)
            masks = rand_masks(rng)
            assert consistency_loss(color_t, opacity_t, color_s, masks)[0] >= 0.0
            assert naive_consistency_loss(color_t, opacity_t, color_s, masks)[0] >= 0.0
            assert initialization_loss(opacity_t, masks, 3,
                                       InitSchedule(strength=0.5, k_max=10))[0] >= 0.0
