"""Seeded noise streams and support transforms."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcvi.reparam import (
    RngState,
    SupportTransform,
    constrain,
    constrain_with_derivative,
    positive_mask,
    reparameterize,
    seed_rng,
    standard_normal,
)

IDENT = SupportTransform.IDENTITY
EXPP = SupportTransform.EXP_POSITIVE


class TestStreams:
    def test_same_state_same_draws(self):
        s = seed_rng(123)
        np.testing.assert_array_equal(s.normal(64), s.normal(64))

    def test_seed_changes_stream(self):
        assert not np.array_equal(seed_rng(1).normal(16), seed_rng(2).normal(16))

    @given(st.integers(min_value=0, max_value=2**64 - 1), st.integers(0, 2**32))
    def test_fork_is_deterministic(self, seed, tag):
        a = seed_rng(seed).fork(tag)
        b = seed_rng(seed).fork(tag)
        assert a == b

    def test_fork_tags_are_order_sensitive(self):
        s = seed_rng(9)
        assert s.fork(1, 2) != s.fork(2, 1)
        assert not np.array_equal(s.fork(1, 2).normal(8), s.fork(2, 1).normal(8))

    def test_fork_resets_lanes(self):
        s = seed_rng(4)
        assert s.split(17).fork(1) == s.fork(1)

    def test_split_lanes_give_distinct_streams(self):
        s = seed_rng(0)
        draws = [s.split(lane).normal(32) for lane in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not np.array_equal(draws[i], draws[j])

    def test_split_depth_capped(self):
        with pytest.raises(ValueError):
            seed_rng(0).split(1, 2, 3, 4)
        # three lanes, built up incrementally, are fine
        seed_rng(0).split(1).split(2).split(3).normal(1)

    def test_forked_streams_look_independent(self):
        s = seed_rng(2024)
        a = s.fork(1).normal(200_000)
        b = s.fork(2).normal(200_000)
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.01

    def test_standard_normal_moments(self):
        x = standard_normal(seed_rng(5), 100_000)
        assert x.shape == (100_000,)
        assert abs(x.mean()) < 4.0 / np.sqrt(x.size)
        assert abs(x.std() - 1.0) < 0.01

    def test_standard_normal_rejects_negative_count(self):
        with pytest.raises(ValueError):
            standard_normal(seed_rng(0), -1)


class TestReparameterize:
    @given(
        st.integers(0, 2**32),
        st.lists(st.floats(-50, 50), min_size=1, max_size=6),
        st.lists(st.floats(-3, 3), min_size=1, max_size=6),
    )
    def test_location_scale_formula(self, seed, means, log_scales):
        d = min(len(means), len(log_scales))
        mu = np.array(means[:d])
        rho = np.array(log_scales[:d])
        eps = seed_rng(seed).normal((7, d))
        theta = reparameterize(eps, mu, rho)
        np.testing.assert_array_equal(theta, mu + np.exp(rho) * eps)

    def test_shape_mismatches_raise(self):
        with pytest.raises(ValueError):
            reparameterize(np.zeros((3, 2)), np.zeros(2), np.zeros(3))
        with pytest.raises(ValueError):
            reparameterize(np.zeros((3, 2)), np.zeros(3), np.zeros(3))


class TestConstrain:
    def test_identity_is_passthrough(self):
        theta = np.array([[1.0, -2.0], [0.5, 3.0]])
        out, log_jac = constrain(theta, (IDENT, IDENT))
        np.testing.assert_array_equal(out, theta)
        np.testing.assert_array_equal(log_jac, np.zeros(2))

    def test_exp_coordinate_and_jacobian(self):
        theta = np.array([0.3, -1.2, 2.0])
        out, log_jac = constrain(theta, (IDENT, EXPP, EXPP))
        np.testing.assert_allclose(out, [0.3, np.exp(-1.2), np.exp(2.0)])
        # log |d exp(v) / dv| = v, summed over transformed coordinates
        assert log_jac == pytest.approx(-1.2 + 2.0)

    def test_jacobian_shift_identity(self):
        # moving an EXP coordinate by c moves the log-Jacobian by exactly c
        theta = np.array([0.1, 0.7])
        _, j0 = constrain(theta, (IDENT, EXPP))
        _, j1 = constrain(theta + np.array([0.0, 0.25]), (IDENT, EXPP))
        assert j1 - j0 == pytest.approx(0.25, abs=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            constrain(np.zeros(3), (IDENT, IDENT))

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=5))
    def test_vectorized_matches_constrain(self, values):
        theta = np.array(values)
        transforms = tuple(EXPP if i % 2 else IDENT for i in range(theta.size))
        pos = positive_mask(transforms)
        ref_c, ref_j = constrain(theta[None, :], transforms)
        out_c, dtheta, out_j = constrain_with_derivative(theta[None, :], pos)
        np.testing.assert_array_equal(out_c, ref_c)
        np.testing.assert_array_equal(out_j, ref_j)
        # elementwise derivative: exp on transformed coordinates, 1 elsewhere
        np.testing.assert_array_equal(dtheta[0, ~pos], np.ones((~pos).sum()))
        np.testing.assert_array_equal(dtheta[0, pos], np.exp(theta[pos]))

    def test_positive_mask(self):
        mask = positive_mask((IDENT, EXPP, IDENT))
        np.testing.assert_array_equal(mask, [False, True, False])
