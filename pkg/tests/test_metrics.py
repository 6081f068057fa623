import numpy as np
import pytest

from bridgekit.core import (
    ConditionalDrift,
    DiffusionConfig,
    SampleBatch,
    brownian_bridge_path,
    linear_path,
)
from bridgekit.coupling import Coupling
from bridgekit.errors import DensityUnderflowError, DomainError, ShapeError
from bridgekit.metrics import (
    MetricRecord,
    energy_distance,
    gaussian_eot_oracle,
    marginal_check,
    marginal_drift_oracle,
    path_kinetic_energy,
    read_metrics_csv,
    same_distribution_baseline,
    write_metrics_csv,
)
from bridgekit.rng import make_generator
from bridgekit.sim import TimeGrid


def brute_force_energy_distance(a, b):
    """Direct O(n^2) double sums with explicit loops."""
    cross = sum(np.linalg.norm(x - y) for x in a for y in b) / (len(a) * len(b))
    wa = sum(np.linalg.norm(x - y) for x in a for y in a) / len(a) ** 2
    wb = sum(np.linalg.norm(x - y) for x in b for y in b) / len(b) ** 2
    return 2 * cross - wa - wb


class TestEnergyDistance:
    def test_identical_batches_give_zero(self):
        pts = make_generator(0).normal(size=(6, 3))
        assert energy_distance(SampleBatch(pts), SampleBatch(pts.copy())) == 0.0

    def test_point_masses(self):
        a = SampleBatch(np.array([[0.0]]))
        b = SampleBatch(np.array([[1.0]]))
        assert abs(energy_distance(a, b) - 2.0) < 1e-15

    def test_matches_brute_force_on_three_point_sets(self):
        rng = make_generator(5)
        for _ in range(5):
            a = rng.normal(size=(3, 2))
            b = rng.normal(size=(3, 2))
            got = energy_distance(SampleBatch(a), SampleBatch(b))
            want = brute_force_energy_distance(a, b)
            assert abs(got - want) < 1e-12

    def test_symmetry(self):
        rng = make_generator(6)
        a, b = SampleBatch(rng.normal(size=(10, 2))), SampleBatch(rng.normal(size=(8, 2)))
        assert abs(energy_distance(a, b) - energy_distance(b, a)) < 1e-14

    def test_guards(self):
        a = SampleBatch(np.zeros((2, 1)))
        with pytest.raises(ShapeError):
            energy_distance(a, SampleBatch(np.zeros((2, 2))))
        with pytest.raises(DomainError):
            energy_distance(a, SampleBatch(np.zeros((5000, 1))))

    def test_baseline_positive_and_scales(self):
        sampler = lambda n, rng: rng.normal(size=(n, 1))
        base = same_distribution_baseline(sampler, 128, make_generator(7))
        assert 0 < base < 0.5
        # a shifted distribution should exceed the same-distribution baseline
        a = SampleBatch(make_generator(8).normal(size=(128, 1)))
        b = SampleBatch(make_generator(9).normal(size=(128, 1)) + 3.0)
        assert energy_distance(a, b) > base


class TestMarginalDriftOracle:
    def setup_method(self):
        self.path = brownian_bridge_path(sigma_ref=1.0)
        self.drift = ConditionalDrift("doob_forward", self.path,
                                      DiffusionConfig(sigma=1.0))

    def test_single_pair_constant_in_x(self):
        coup = Coupling(SampleBatch(np.array([[0.0]])), SampleBatch(np.array([[2.0]])),
                        np.array([[1.0]]), "independent")
        for x in (-3.0, 0.2, 4.0):
            got = marginal_drift_oracle(coup, self.path, self.drift, 0.5,
                                        np.array([x]))
            assert abs(got[0] - (2.0 - x) / 0.5) < 1e-12

    def test_symmetric_pairs_average_at_symmetry_point(self):
        pts = np.array([[-1.0], [1.0]])
        coup = Coupling(SampleBatch(pts), SampleBatch(pts), np.eye(2) / 2,
                        "independent")
        got = marginal_drift_oracle(coup, self.path, self.drift, 0.5,
                                    np.array([0.0]))
        assert abs(got[0]) < 1e-12

    def test_matches_direct_density_computation(self):
        # independent recomputation: plain-space Gaussian densities, no
        # log-space tricks, dotted with per-pair drifts
        rng = make_generator(11)
        x0 = rng.normal(size=(3, 2))
        x1 = rng.normal(size=(3, 2))
        mass = np.diag([0.5, 0.3, 0.2])
        coup = Coupling(SampleBatch(x0, np.array([0.5, 0.3, 0.2])),
                        SampleBatch(x1, np.array([0.5, 0.3, 0.2])),
                        mass, "exact_ot")
        t = 0.37
        gamma = self.path.std(t)
        w0, w1 = self.path.mean_weights(t)
        for _ in range(10):
            x = rng.normal(scale=0.8, size=2)
            mus = w0 * x0 + w1 * x1
            dens = np.array([0.5, 0.3, 0.2]) * np.exp(
                -np.sum((x - mus) ** 2, axis=1) / (2 * gamma**2)) / (2 * np.pi * gamma**2)
            resp = dens / dens.sum()
            drifts = (x1 - x) / (1 - t)
            want = resp @ drifts
            got = marginal_drift_oracle(coup, self.path, self.drift, t, x)
            assert np.abs(got - want).max() < 1e-10

    def test_underflow_raises(self):
        coup = Coupling(SampleBatch(np.array([[0.0]])), SampleBatch(np.array([[0.0]])),
                        np.array([[1.0]]), "independent")
        tight = linear_path(sigma_min=1e-4)
        drift = ConditionalDrift("constant_line", tight, DiffusionConfig(sigma=0.0))
        with pytest.raises(DensityUnderflowError):
            marginal_drift_oracle(coup, tight, drift, 0.5, np.array([100.0]))

    def test_vector_shape_required(self):
        coup = Coupling(SampleBatch(np.array([[0.0]])), SampleBatch(np.array([[1.0]])),
                        np.array([[1.0]]), "independent")
        with pytest.raises(ShapeError):
            marginal_drift_oracle(coup, self.path, self.drift, 0.5,
                                  np.array([[0.0]]))


class TestGaussianEOTOracle:
    def test_large_eps_decorrelates(self):
        cov, _ = gaussian_eot_oracle(0.0, 1.0, 0.0, 1.0, sigma_ref=10.0)
        assert abs(cov) < 0.02

    def test_small_eps_approaches_identity_map(self):
        cov, _ = gaussian_eot_oracle(0.0, 1.0, 0.0, 1.0, sigma_ref=0.3)
        assert cov > 0.9

    def test_marginal_moments_recovered(self):
        _, mom = gaussian_eot_oracle(1.0, 2.0, -3.0, 0.5, sigma_ref=1.0)
        assert abs(mom.mean0 - 1.0) < 1e-6
        assert abs(mom.mean1 + 3.0) < 1e-6
        assert abs(mom.var0 - 2.0) < 1e-3
        assert abs(mom.var1 - 0.5) < 1e-3

    def test_grid_refinement_stability(self):
        a, _ = gaussian_eot_oracle(0.0, 1.0, 4.0, 1.0, sigma_ref=1.0, n_grid=512)
        b, _ = gaussian_eot_oracle(0.0, 1.0, 4.0, 1.0, sigma_ref=1.0, n_grid=1024)
        assert abs(a - b) < 1e-3

    def test_rejects_bad_arguments(self):
        with pytest.raises(DomainError):
            gaussian_eot_oracle(0.0, -1.0, 0.0, 1.0, 1.0)
        with pytest.raises(DomainError):
            gaussian_eot_oracle(0.0, 1.0, 0.0, 1.0, 1.0, n_grid=100)


class TestPathKineticEnergy:
    def test_zero_drift_gives_zero(self):
        zero = lambda t, xs: np.zeros_like(xs)
        src = SampleBatch(np.zeros((16, 2)))
        assert path_kinetic_energy(zero, src, 1.0, TimeGrid(20), 1) == 0.0

    def test_constant_drift_closed_form(self):
        const = lambda t, xs: np.full_like(xs, 3.0)
        src = SampleBatch(np.zeros((32, 1)))
        got = path_kinetic_energy(const, src, 2.0, TimeGrid(64), 2)
        assert abs(got - 9.0 / 8.0) < 1e-10

    def test_std_error_shrinks_with_sample_size(self):
        drift = lambda t, xs: xs
        rng = make_generator(3)
        small = SampleBatch(rng.normal(size=(64, 1)))
        big = SampleBatch(rng.normal(size=(1024, 1)))
        _, se_small = path_kinetic_energy(drift, small, 1.0, TimeGrid(32), 4,
                                          return_std_error=True)
        _, se_big = path_kinetic_energy(drift, big, 1.0, TimeGrid(32), 4,
                                        return_std_error=True)
        assert se_big < se_small

    def test_sigma_ref_guard(self):
        src = SampleBatch(np.zeros((4, 1)))
        with pytest.raises(DomainError):
            path_kinetic_energy(lambda t, xs: xs, src, 0.0, TimeGrid(4), 0)


class TestMarginalCheck:
    def test_analytic_drift_passes_at_half_time(self):
        # single pair (0, 2): the doob drift reproduces the bridge marginal
        path = brownian_bridge_path(sigma_ref=1.0)
        coup = Coupling(SampleBatch(np.array([[0.0]])), SampleBatch(np.array([[2.0]])),
                        np.array([[1.0]]), "independent")
        fn = lambda t, xs: (2.0 - xs) / max(1.0 - t, 1e-3)
        recs = marginal_check(fn, path, coup, sigma=1.0, t_list=[0.5], n=512,
                              rng=make_generator(21))
        direct = lambda n, rng: rng.normal(1.0, np.sqrt(0.25), size=(n, 1))
        base = same_distribution_baseline(direct, 512, make_generator(22))
        assert recs[0].value < base
        assert recs[0].name == "marginal_ed_t0.5"

    def test_wrong_drift_fails_negative_control(self):
        path = brownian_bridge_path(sigma_ref=1.0)
        coup = Coupling(SampleBatch(np.array([[0.0]])), SampleBatch(np.array([[2.0]])),
                        np.array([[1.0]]), "independent")
        bad = lambda t, xs: np.full_like(xs, -4.0)
        recs = marginal_check(bad, path, coup, sigma=1.0, t_list=[1.0], n=512,
                              rng=make_generator(23))
        direct = lambda n, rng: rng.normal(2.0, 0.05, size=(n, 1))
        base = same_distribution_baseline(direct, 512, make_generator(24))
        assert recs[0].value > 10 * base

    def test_time_domain_guard(self):
        path = brownian_bridge_path(sigma_ref=1.0)
        coup = Coupling(SampleBatch(np.array([[0.0]])), SampleBatch(np.array([[1.0]])),
                        np.array([[1.0]]), "independent")
        with pytest.raises(DomainError):
            marginal_check(lambda t, xs: xs, path, coup, 1.0, [0.0], 8,
                           make_generator(0))


class TestMetricRecords:
    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            MetricRecord("bad", 0, np.nan)

    def test_csv_round_trip(self, tmp_path):
        recs = [MetricRecord("ed", 0, 0.5, 0.01), MetricRecord("ke", 3, -1.25)]
        f = tmp_path / "metrics.csv"
        write_metrics_csv(f, recs)
        lines = f.read_text().split("\n")
        assert lines[0] == "iteration,name,value,std_error"
        back = read_metrics_csv(f)
        assert back[0] == recs[0]
        assert back[1].std_error is None

    def test_csv_bytes_are_deterministic(self, tmp_path):
        recs = [MetricRecord("a", 1, 1 / 3, 1e-9)]
        f1, f2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        write_metrics_csv(f1, recs)
        write_metrics_csv(f2, recs)
        assert f1.read_bytes() == f2.read_bytes()
