"""Tests for the asymptotic closure-curve fit."""

import math

import numpy as np
import pytest

from vinecc import constants
from vinecc.errors import ArgumentError
from vinecc.regression import (
    AsymptoticModel,
    eval_model,
    fit_asymptotic,
    fraction_at_time,
    jacobian,
    series_points,
    time_to_fraction,
)

TRUE_MODEL = AsymptoticModel(asym=90.0, r0=40.0, rate=0.8)


def exact_points(model, times):
    return [(float(t), float(eval_model(model, t))) for t in times]


class TestModel:
    def test_intercept_is_exact(self):
        assert eval_model(AsymptoticModel(93.67, 52.36, 0.506), 0) == 52.36

    def test_approaches_asymptote(self):
        assert eval_model(TRUE_MODEL, 60.0) == pytest.approx(90.0)

    def test_vectorized(self):
        values = eval_model(TRUE_MODEL, np.array([0.0, 1.0]))
        assert values.shape == (2,)
        assert values[1] == pytest.approx(90 - 50 * math.exp(-0.8))

    def test_jacobian_matches_finite_differences(self):
        t = np.array([0.0, 0.5, 1.7, 3.0])
        jac = jacobian(TRUE_MODEL, t)
        step = 1e-6
        params = TRUE_MODEL.as_array()
        for j in range(3):
            hi, lo = params.copy(), params.copy()
            hi[j] += step
            lo[j] -= step
            numeric = (eval_model(AsymptoticModel(*hi), t) - eval_model(AsymptoticModel(*lo), t)) / (2 * step)
            np.testing.assert_allclose(jac[:, j], numeric, rtol=1e-6, atol=1e-6)

    def test_jacobian_on_random_parameters(self, rng):
        t = np.linspace(0.0, 6.0, 7)
        for _ in range(100):
            model = AsymptoticModel(rng.uniform(60, 100), rng.uniform(10, 60), rng.uniform(0.1, 2.0))
            jac = jacobian(model, t)
            params = model.as_array()
            for j in range(3):
                step = 1e-6 * max(1.0, abs(params[j]))
                hi, lo = params.copy(), params.copy()
                hi[j] += step
                lo[j] -= step
                numeric = (eval_model(AsymptoticModel(*hi), t) - eval_model(AsymptoticModel(*lo), t)) / (2 * step)
                np.testing.assert_allclose(jac[:, j], numeric, rtol=1e-5, atol=1e-6)


class TestFit:
    def test_recovers_exact_parameters(self):
        result = fit_asymptotic(exact_points(TRUE_MODEL, range(7)))
        assert result.converged
        assert result.status == "converged"
        assert result.model.asym == pytest.approx(90.0, abs=1e-6)
        assert result.model.r0 == pytest.approx(40.0, abs=1e-6)
        assert result.model.rate == pytest.approx(0.8, abs=1e-6)
        assert result.rss < 1e-12

    def test_recovers_from_uneven_times(self):
        result = fit_asymptotic(exact_points(TRUE_MODEL, [0, 0.5, 1, 1.5, 2, 3, 4]))
        assert result.model.asym == pytest.approx(90.0, abs=1e-6)
        assert result.model.rate == pytest.approx(0.8, abs=1e-6)

    def test_recovers_from_replicated_times(self):
        points = exact_points(TRUE_MODEL, [0, 0, 2, 2, 4, 4])
        result = fit_asymptotic(points)
        assert result.model.rate == pytest.approx(0.8, abs=1e-6)

    def test_noisy_fit_beats_true_parameters(self, rng):
        times = np.repeat([0.0, 1.0, 2.0, 3.0, 5.0], 6)
        y = eval_model(TRUE_MODEL, times) + rng.normal(0, 2.0, times.size)
        result = fit_asymptotic(list(zip(times, y)))
        true_rss = float(np.sum((y - eval_model(TRUE_MODEL, times)) ** 2))
        assert result.converged
        assert result.rss <= true_rss + 1e-9
        assert result.rss <= result.initial_rss

    def test_noisy_replicates_center_on_true_asymptote(self, rng):
        times = np.arange(7, dtype=np.float64)
        asymptotes = []
        for _ in range(50):
            y = eval_model(TRUE_MODEL, times) + rng.normal(0, 1.0, times.size)
            result = fit_asymptotic(list(zip(times.tolist(), y.tolist())))
            assert result.rss <= result.initial_rss
            asymptotes.append(result.model.asym)
        assert abs(np.mean(asymptotes) - 90.0) < 1.0

    def test_converged_fit_is_stationary(self, rng):
        times = np.repeat(np.arange(7, dtype=np.float64), 3)
        y = eval_model(TRUE_MODEL, times) + rng.normal(0, 1.0, times.size)
        result = fit_asymptotic(list(zip(times.tolist(), y.tolist())))
        assert result.converged
        residual = y - eval_model(result.model, times)
        gradient = jacobian(result.model, times).T @ residual
        assert np.max(np.abs(gradient)) < 1e-2

    def test_input_order_does_not_matter(self, rng):
        times = np.repeat([0.0, 1.0, 2.0, 4.0], 3)
        y = eval_model(TRUE_MODEL, times) + rng.normal(0, 1.0, times.size)
        points = list(zip(times.tolist(), y.tolist()))
        shuffled = [points[i] for i in rng.permutation(len(points))]
        assert fit_asymptotic(points) == fit_asymptotic(shuffled)

    def test_flat_data_is_unidentifiable(self):
        result = fit_asymptotic([(0, 50.0), (1, 50.0), (2, 50.0), (3, 50.0)])
        assert result.status == "unidentifiable"
        assert not result.converged
        assert math.isnan(result.model.rate)
        assert result.to_report()["time_to_fraction_weeks"] is None

    def test_too_few_points(self):
        with pytest.raises(ArgumentError):
            fit_asymptotic([(0, 40.0), (1, 60.0), (2, 70.0)])

    def test_too_few_distinct_times(self):
        with pytest.raises(ArgumentError):
            fit_asymptotic([(0, 40.0), (0, 41.0), (1, 60.0), (1, 61.0)])

    def test_non_finite_input(self):
        with pytest.raises(ArgumentError):
            fit_asymptotic([(0, 40.0), (1, float("nan")), (2, 70.0), (3, 80.0)])

    def test_report_keys(self):
        result = fit_asymptotic(exact_points(TRUE_MODEL, [0, 1, 2, 3]))
        report = result.to_report(0.95)
        assert set(report) == {
            "asym", "intercept", "rate", "time_to_fraction_p",
            "time_to_fraction_weeks", "rss", "n_points", "converged",
        }
        assert report["n_points"] == 4
        assert report["time_to_fraction_weeks"] == pytest.approx(-math.log(0.05) / 0.8, rel=1e-6)


class TestFraction:
    def test_time_to_fraction(self):
        model = AsymptoticModel(94.58, 42.24, 1.29)
        assert time_to_fraction(model, 0.95) == pytest.approx(-math.log(0.05) / 1.29)

    def test_fraction_round_trip(self):
        model = AsymptoticModel(93.67, 52.36, 0.506)
        assert fraction_at_time(model, time_to_fraction(model, 0.8)) == pytest.approx(0.8)

    def test_reference_rows_imply_high_fraction(self):
        for row in constants.REFERENCE_FITS.values():
            model = AsymptoticModel(row["asym"], row["intercept"], row["rate"])
            p = fraction_at_time(model, row["time_to_asymptote_weeks"])
            assert 0.85 < p < 1.0

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
    def test_invalid_fraction(self, p):
        with pytest.raises(ArgumentError):
            time_to_fraction(TRUE_MODEL, p)

    def test_degenerate_model(self):
        with pytest.raises(ArgumentError):
            time_to_fraction(AsymptoticModel(50.0, 50.0, 1.0))


def test_series_points_modes():
    obs, means = [(0.0, 1.0)], [(0.0, 2.0)]
    assert series_points(obs, means, "points") is obs
    assert series_points(obs, means, "means") is means
    with pytest.raises(ArgumentError):
        series_points(obs, means, "median")
