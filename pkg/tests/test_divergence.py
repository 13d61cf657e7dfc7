import numpy as np
import pytest

from gainimpute import bkt
from gainimpute import divergence as dv
from gainimpute.errors import DataError
from gainimpute.tensors import PerformanceTensor


class TestKde:
    def test_mass_is_one(self):
        rng = np.random.default_rng(0)
        est = dv.kde(rng.normal(size=500))
        assert abs(np.trapezoid(est.densities, est.grid) - 1.0) < 1e-3

    def test_symmetric_samples_give_symmetric_density(self):
        rng = np.random.default_rng(1)
        half = rng.uniform(0.0, 0.5, 400)
        samples = np.concatenate([half, 1.0 - half])  # exactly mirrored about 0.5
        est = dv.kde(samples)
        assert np.abs(est.densities - est.densities[::-1]).max() < 1e-6

    def test_standard_normal_peak(self):
        rng = np.random.default_rng(2)
        est = dv.kde(rng.normal(size=100_000))
        at_zero = float(np.interp(0.0, est.grid, est.densities))
        assert abs(at_zero - 0.3989) / 0.3989 < 0.05

    def test_needs_two_samples(self):
        with pytest.raises(DataError):
            dv.kde([0.5])

    def test_zero_spread_uses_bandwidth_floor(self):
        est = dv.kde([0.3, 0.3, 0.3])
        assert est.bandwidth == dv.BANDWIDTH_FLOOR
        assert abs(np.trapezoid(est.densities, est.grid) - 1.0) < 1e-3

    def test_grid_covers_three_bandwidths(self):
        rng = np.random.default_rng(3)
        samples = rng.uniform(0.2, 0.8, 50)
        est = dv.kde(samples)
        assert est.grid[0] <= samples.min() - 3 * est.bandwidth + 1e-12
        assert est.grid[-1] >= samples.max() + 3 * est.bandwidth - 1e-12


class TestKl:
    @staticmethod
    @pytest.fixture(scope="class")
    def gaussian_pair():
        rng = np.random.default_rng(4)
        p = dv.kde(rng.normal(0.0, 1.0, 100_000))
        q = dv.kde(rng.normal(1.0, 1.0, 100_000))
        return p, q

    def test_self_divergence_zero(self, gaussian_pair):
        p, _ = gaussian_pair
        assert dv.kl(p, p) < 1e-6

    def test_unit_mean_shift_gaussians(self, gaussian_pair):
        p, q = gaussian_pair
        assert abs(dv.kl(p, q) - 0.5) / 0.5 < 0.10

    def test_asymmetry(self, gaussian_pair):
        p, q = gaussian_pair
        assert dv.kl(p, q) != dv.kl(q, p)

    def test_non_negative_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = dv.kde(rng.uniform(0, 1, 60))
            q = dv.kde(rng.beta(2, 5, 60))
            assert dv.kl(p, q) >= -1e-9

    def test_grid_refinement_stability(self, gaussian_pair):
        p, q = gaussian_pair
        coarse = dv.kl(p, q)
        fine_p = dv.DensityEstimate(
            grid=np.linspace(p.grid[0], p.grid[-1], 2 * p.grid.size),
            densities=_renorm(p, 2 * p.grid.size),
            bandwidth=p.bandwidth,
        )
        fine_q = dv.DensityEstimate(
            grid=np.linspace(q.grid[0], q.grid[-1], 2 * q.grid.size),
            densities=_renorm(q, 2 * q.grid.size),
            bandwidth=q.bandwidth,
        )
        assert abs(dv.kl(fine_p, fine_q) - coarse) < 1e-3


def _renorm(est, points):
    grid = np.linspace(est.grid[0], est.grid[-1], points)
    dens = np.interp(grid, est.grid, est.densities)
    return dens / np.trapezoid(dens, grid)


class TestPercentWithin:
    def test_direct_count(self):
        assert dv.percent_within([0.2, 1.5, 0.8], 0, 1) == pytest.approx(66.6667, abs=1e-3)

    def test_all_inside(self):
        assert dv.percent_within([0.1, 0.9, 0.5], 0, 1) == 100.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            dv.percent_within([], 0, 1)


class TestParameterDistributions:
    @staticmethod
    def make_tensor(seed=4, shape=(25, 3, 4), p_missing=0.3):
        rng = np.random.default_rng(seed)
        obs = rng.random(shape) >= p_missing
        return PerformanceTensor(
            correct=(rng.random(shape) < 0.6) & obs, observed=obs
        )

    def test_deterministic(self):
        t = self.make_tensor()
        cfg = bkt.BktFitConfig(restarts=1, max_iterations=50)
        s1, _ = dv.parameter_distributions(t, cfg, bootstrap=3, seed=9)
        s2, _ = dv.parameter_distributions(t, cfg, bootstrap=3, seed=9)
        assert all(
            np.array_equal(s1[j][n], s2[j][n]) for j in s1 for n in s1[j]
        )

    def test_all_correct_question_concentrates_high(self):
        correct = np.ones((15, 1, 3), dtype=bool)
        t = PerformanceTensor(correct=correct, observed=np.ones_like(correct))
        samples, _ = dv.parameter_distributions(
            t, bkt.BktFitConfig(restarts=1, max_iterations=50), bootstrap=4, seed=0
        )
        assert np.all(samples[0]["L0"] > 0.9)

    def test_skipped_questions_reported(self):
        observed = np.ones((6, 3, 2), dtype=bool)
        observed[:, 1, :] = False  # question 1 entirely missing
        t = PerformanceTensor(correct=np.zeros_like(observed), observed=observed)
        samples, skipped = dv.parameter_distributions(
            t, bkt.BktFitConfig(restarts=1, max_iterations=30), bootstrap=2, seed=1
        )
        assert skipped == [1]
        assert sorted(samples) == [0, 2]

    def test_paired_seeds_make_identical_tensors_agree(self):
        t = self.make_tensor(seed=8)
        cfg = bkt.BktFitConfig(restarts=1, max_iterations=50)
        s1, sk1 = dv.parameter_distributions(t, cfg, bootstrap=3, seed=5)
        s2, sk2 = dv.parameter_distributions(t, cfg, bootstrap=3, seed=5)
        report = dv.kl_report(s1, s2, sk1)
        assert all(v < 1e-12 for _, _, v in report.entries)


class TestKlReport:
    def test_covers_all_parameters(self):
        rng = np.random.default_rng(6)
        samples_a = {0: {n: rng.uniform(0.2, 0.8, 10) for n in dv.PARAM_NAMES}}
        samples_b = {0: {n: rng.uniform(0.2, 0.8, 10) for n in dv.PARAM_NAMES}}
        report = dv.kl_report(samples_a, samples_b)
        assert sorted(p for _, p, _ in report.entries) == sorted(dv.PARAM_NAMES)

    def test_csv_and_summary_consistent(self):
        rng = np.random.default_rng(7)
        mk = lambda: {
            j: {n: rng.uniform(0.2, 0.8, 8) for n in dv.PARAM_NAMES} for j in range(3)
        }
        report = dv.kl_report(mk(), mk())
        text = report.to_csv()
        rows = text.strip().split("\n")[1:]
        assert len(rows) == len(report.entries)
        # recompute percent_within from the emitted CSV
        by_param = {}
        for row in rows:
            _, name, value = row.split(",")
            by_param.setdefault(name, []).append(float(value))
        summary = report.summary()
        for name, values in by_param.items():
            assert summary[name] == pytest.approx(dv.percent_within(values, 0, 1))
