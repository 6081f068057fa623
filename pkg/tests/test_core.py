import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgekit.core import (
    ConditionalDrift,
    DiffusionConfig,
    PinnedPathSpec,
    SampleBatch,
    brownian_bridge_path,
    custom_path,
    eval_conditional_drift,
    eval_conditional_drift_batch,
    kinetic_drift,
    linear_path,
    pinned_mean_std,
    pinned_mean_std_batch,
    sample_pinned,
    sample_pinned_batch,
)
from bridgekit.errors import DomainError, ShapeError


def make_drift(kind, sigma_ref=1.0, sigma=1.0, t_clip=1e-3):
    path = brownian_bridge_path(sigma_ref=sigma_ref)
    diff = DiffusionConfig(sigma=sigma, sigma_ref=sigma_ref, dim=2)
    return ConditionalDrift(kind, path, diff, t_clip=t_clip)


class TestPinnedPath:
    def test_linear_midpoint(self):
        spec = linear_path(sigma_min=0.1)
        mean, std = pinned_mean_std(spec, [0.0, 0.0], [2.0, 2.0], 0.5)
        np.testing.assert_allclose(mean, [1.0, 1.0])
        assert std == pytest.approx(0.1)

    def test_brownian_std_quarter(self):
        spec = brownian_bridge_path(sigma_ref=2.0)
        _, std = pinned_mean_std(spec, [0.0], [1.0], 0.25)
        assert std == pytest.approx(2.0 * math.sqrt(0.25 * 0.75), rel=1e-12)

    def test_boundaries_exact(self):
        spec = brownian_bridge_path()
        x0 = np.array([1.5, -2.0])
        x1 = np.array([-0.5, 3.0])
        m0, s0 = pinned_mean_std(spec, x0, x1, 0.0)
        m1, s1 = pinned_mean_std(spec, x0, x1, 1.0)
        assert np.array_equal(m0, x0) and s0 == 0.0
        assert np.array_equal(m1, x1) and s1 == 0.0

    @given(
        x0=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4),
        x1=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4),
        kind=st.sampled_from(["linear_sigma_min", "brownian_bridge"]),
    )
    @settings(max_examples=60, deadline=None)
    def test_boundary_pinning_property(self, x0, x1, kind):
        d = min(len(x0), len(x1))
        x0, x1 = np.array(x0[:d]), np.array(x1[:d])
        spec = PinnedPathSpec(kind=kind)
        m0, _ = pinned_mean_std(spec, x0, x1, 0.0)
        m1, _ = pinned_mean_std(spec, x0, x1, 1.0)
        np.testing.assert_array_equal(m0, x0)
        np.testing.assert_array_equal(m1, x1)

    def test_sample_at_zero_is_x0_exactly(self):
        spec = brownian_bridge_path()
        rng = np.random.default_rng(3)
        x0 = np.array([0.25, -1.0])
        out = sample_pinned(spec, x0, [5.0, 5.0], 0.0, rng)
        assert np.array_equal(out, x0)

    def test_sample_moments(self):
        spec = brownian_bridge_path(sigma_ref=1.0)
        rng = np.random.default_rng(11)
        n = 40000
        x0 = np.tile([0.0], (n, 1))
        x1 = np.tile([2.0], (n, 1))
        draws = sample_pinned_batch(spec, x0, x1, 0.6, rng)
        want_mean, want_std = 1.2, math.sqrt(0.6 * 0.4)
        se = want_std / math.sqrt(n)
        assert abs(draws.mean() - want_mean) < 4 * se
        assert abs(draws.std() - want_std) < 0.01

    def test_custom_schedule_matches_builtin(self):
        spec = custom_path(lambda t: (1.0 - t, t), lambda t: 0.5 * math.sqrt(t * (1.0 - t)))
        ref = brownian_bridge_path(sigma_ref=0.5)
        for t in (0.0, 0.2, 0.5, 0.9, 1.0):
            m_c, s_c = pinned_mean_std(spec, [1.0], [3.0], t)
            m_r, s_r = pinned_mean_std(ref, [1.0], [3.0], t)
            np.testing.assert_allclose(m_c, m_r)
            assert s_c == pytest.approx(s_r, abs=1e-12)

    def test_custom_schedule_must_pin(self):
        with pytest.raises(DomainError):
            custom_path(lambda t: (1.0 - 0.5 * t, t), lambda t: 0.1)

    def test_time_domain_errors(self):
        spec = linear_path()
        for bad in (-0.1, 1.2, float("nan")):
            with pytest.raises(DomainError):
                pinned_mean_std(spec, [0.0], [1.0], bad)

    def test_shape_errors(self):
        spec = linear_path()
        with pytest.raises(ShapeError):
            pinned_mean_std(spec, [0.0, 1.0], [1.0], 0.5)
        with pytest.raises(ShapeError):
            pinned_mean_std_batch(spec, np.zeros((3, 2)), np.zeros((4, 2)), 0.5)

    def test_batch_matches_scalar(self):
        spec = brownian_bridge_path(sigma_ref=1.3)
        X0 = np.array([[0.0, 1.0], [2.0, -1.0]])
        X1 = np.array([[1.0, 1.0], [0.0, 0.5]])
        ts = np.array([0.3, 0.8])
        means, stds = pinned_mean_std_batch(spec, X0, X1, ts)
        for i in range(2):
            m, s = pinned_mean_std(spec, X0[i], X1[i], float(ts[i]))
            np.testing.assert_array_equal(means[i], m)
            assert stds[i] == s


class TestConditionalDrifts:
    def test_constant_line(self):
        d = make_drift("constant_line")
        out = eval_conditional_drift(d, [0.0, 0.0], [1.0, 1.0], [3.0, 5.0], 0.5)
        np.testing.assert_array_equal(out, [2.0, 4.0])

    def test_doob_forward_value(self):
        d = make_drift("doob_forward")
        out = eval_conditional_drift(d, [0.0, 0.0], [9.0, 9.0], [1.0, 1.0], 0.5)
        np.testing.assert_allclose(out, [2.0, 2.0])

    def test_doob_reverse_value(self):
        d = make_drift("doob_reverse")
        out = eval_conditional_drift(d, [1.0, 1.0], [0.0, 0.0], [9.0, 9.0], 0.5)
        np.testing.assert_allclose(out, [-2.0, -2.0])

    def test_sb_bridge_midpoint_is_line(self):
        d = make_drift("sb_bridge")
        out = eval_conditional_drift(d, [7.0, -7.0], [1.0, 1.0], [3.0, 5.0], 0.5)
        np.testing.assert_allclose(out, [2.0, 4.0])

    def test_doob_reverse_mirrors_forward(self):
        fwd = make_drift("doob_forward")
        rev = make_drift("doob_reverse")
        rng = np.random.default_rng(5)
        X, X0, X1 = rng.normal(size=(3, 8, 2))
        ts = rng.uniform(0.05, 0.95, size=8)
        a = eval_conditional_drift_batch(rev, X, X0, X1, ts)
        b = eval_conditional_drift_batch(fwd, X, X1, X0, 1.0 - ts)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_kinetic_equals_doob_on_brownian_path(self):
        # analytic schedules make the identity exact to round-off
        kin = make_drift("kinetic")
        doob = make_drift("doob_forward")
        rng = np.random.default_rng(0)
        n = 2000
        X, X0, X1 = rng.normal(size=(3, n, 2))
        ts = rng.uniform(0.01, 0.99, size=n)
        a = eval_conditional_drift_batch(kin, X, X0, X1, ts)
        b = eval_conditional_drift_batch(doob, X, X0, X1, ts)
        assert np.max(np.abs(a - b)) < 1e-9

    def test_kinetic_pull_coefficient_at_half(self):
        # a_t = -1/(1-t) for the unit Brownian schedule: slope -2 at t=0.5
        kin = make_drift("kinetic")
        origin = np.zeros(2)
        out = eval_conditional_drift(kin, [1.0, 0.0], origin, origin, 0.5)
        np.testing.assert_allclose(out, [-2.0, 0.0], atol=1e-12)

    def test_custom_fd_matches_analytic_kinetic(self):
        kin = make_drift("kinetic")
        x, x0, x1 = np.array([0.3, -0.2]), np.zeros(2), np.array([1.0, 2.0])
        got = kinetic_drift(lambda t: (1.0 - t, t),
                            lambda t: math.sqrt(t * (1.0 - t)),
                            1.0, x, x0, x1, 0.37)
        want = eval_conditional_drift(kin, x, x0, x1, 0.37)
        np.testing.assert_allclose(got, want, atol=1e-7)

    def test_kinetic_zero_std_domain_error(self):
        spec = custom_path(lambda t: (1.0 - t, t), lambda t: 0.0)
        diff = DiffusionConfig(sigma=0.0, sigma_ref=1.0, dim=1)
        d = ConditionalDrift("kinetic", spec, diff)
        with pytest.raises(DomainError):
            eval_conditional_drift(d, [0.0], [0.0], [1.0], 0.5)

    def test_clamp_near_singularity(self):
        d = make_drift("doob_forward", t_clip=1e-3)
        out = eval_conditional_drift(d, [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 1.0)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1000.0, 1000.0])
        assert d.clamp_events == 1
        eval_conditional_drift(d, [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 0.5)
        assert d.clamp_events == 1

    def test_finite_inside_clip_band(self):
        for kind in ("sb_bridge", "doob_forward", "doob_reverse", "kinetic"):
            d = make_drift(kind)
            ts = np.linspace(d.t_clip, 1.0 - d.t_clip, 41)
            X = np.tile([0.7, -0.1], (41, 1))
            X0 = np.tile([0.0, 0.0], (41, 1))
            X1 = np.tile([1.0, 1.0], (41, 1))
            out = eval_conditional_drift_batch(d, X, X0, X1, ts)
            assert np.all(np.isfinite(out))

    def test_evaluation_is_pure(self):
        d = make_drift("sb_bridge")
        args = (np.array([0.2, 0.4]), np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.3)
        a = eval_conditional_drift(d, *args)
        b = eval_conditional_drift(d, *args)
        assert np.array_equal(a, b)

    def test_unknown_kind_rejected(self):
        with pytest.raises(DomainError):
            make_drift("banana")


class TestConfigTypes:
    def test_diffusion_config_validation(self):
        with pytest.raises(DomainError):
            DiffusionConfig(sigma=-1.0)
        with pytest.raises(DomainError):
            DiffusionConfig(sigma=0.0, sigma_ref=0.0)
        with pytest.raises(DomainError):
            DiffusionConfig(sigma=0.0, dim=0)

    def test_sample_batch_validation(self):
        with pytest.raises(ShapeError):
            SampleBatch(np.zeros(3))
        with pytest.raises(DomainError):
            SampleBatch(np.array([[np.inf, 0.0]]))
        with pytest.raises(DomainError):
            SampleBatch(np.zeros((2, 1)), weights=np.array([0.7, 0.7]))
        b = SampleBatch(np.zeros((4, 2)))
        np.testing.assert_allclose(b.effective_weights(), 0.25)
