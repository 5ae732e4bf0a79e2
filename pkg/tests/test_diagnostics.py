import csv

import numpy as np
import pytest

from fedstain.diagnostics import (
    analyze_distribution,
    write_histogram_csv,
    write_qq_csv,
)
from fedstain.errors import DegenerateInputError


class TestAnalyzeDistribution:
    def test_gaussian_self_consistency(self):
        rng = np.random.default_rng(42)
        diag = analyze_distribution(rng.standard_normal(10**5))
        assert abs(diag.skewness) < 0.05
        assert abs(diag.excess_kurtosis) < 0.1
        # Q-Q points hug the diagonal away from the extreme tails
        inner = slice(100, -100)
        assert np.max(np.abs(diag.qq_theoretical[inner] - diag.qq_empirical[inner])) < 0.15

    def test_exponential_closed_form_moments(self):
        # Exp(1): skewness = 2, excess kurtosis = 6
        rng = np.random.default_rng(7)
        diag = analyze_distribution(rng.exponential(size=10**6))
        assert diag.skewness == pytest.approx(2.0, abs=0.05)
        assert diag.excess_kurtosis == pytest.approx(6.0, abs=0.3)
        assert diag.gaussian_fit[0] == pytest.approx(1.0, abs=0.01)
        assert diag.gaussian_fit[1] == pytest.approx(1.0, abs=0.01)

    def test_densities_integrate_to_one(self):
        rng = np.random.default_rng(1)
        diag = analyze_distribution(rng.uniform(size=5000), bins=37)
        widths = np.diff(diag.bin_edges)
        assert np.sum(diag.densities * widths) == pytest.approx(1.0, abs=1e-6)

    def test_qq_monotone_both_coordinates(self):
        rng = np.random.default_rng(2)
        diag = analyze_distribution(rng.normal(size=500))
        assert np.all(np.diff(diag.qq_theoretical) >= 0)
        assert np.all(np.diff(diag.qq_empirical) >= 0)

    def test_qq_uses_half_offset_plotting_positions(self):
        rng = np.random.default_rng(3)
        vals = rng.normal(size=64)
        diag = analyze_distribution(vals)
        from scipy.special import ndtri

        expected = ndtri((np.arange(1, 65) - 0.5) / 64)
        np.testing.assert_allclose(diag.qq_theoretical, expected)

    def test_too_few_or_degenerate(self):
        with pytest.raises(ValueError):
            analyze_distribution(np.zeros(10))
        with pytest.raises(DegenerateInputError):
            analyze_distribution(np.full(64, 1.23))


class TestCsvExport:
    def test_histogram_csv(self, tmp_path):
        rng = np.random.default_rng(4)
        diag = analyze_distribution(rng.normal(size=1000), bins=10)
        path = tmp_path / "hist.csv"
        write_histogram_csv(path, diag)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bin_left", "bin_right", "density"]
        assert len(rows) == 11
        total = sum((float(r[1]) - float(r[0])) * float(r[2]) for r in rows[1:])
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_qq_csv(self, tmp_path):
        rng = np.random.default_rng(5)
        diag = analyze_distribution(rng.normal(size=5000))
        path = tmp_path / "qq.csv"
        write_qq_csv(path, diag, max_points=100)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["theoretical_q", "empirical_q"]
        assert 2 <= len(rows) - 1 <= 100
        emp = [float(r[1]) for r in rows[1:]]
        assert emp == sorted(emp)
