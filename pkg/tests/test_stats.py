import cmath
import math

import numpy as np
import pytest

from core.errors import DegenerateDesign, TooFewSamples
from modules.crem.phases import m_of_t
from modules.crem.stats import (
    gaussianity_ratio,
    isotropy_tests,
    mean_ratio,
    slope_fit,
    successive_ratios,
    summarize,
    tail_index_hill,
    z_score,
)


def test_summarize_unit_circle_points():
    summary = summarize([1, 1j, -1, -1j])
    assert summary.n == 4
    assert abs(summary.mean) < 1e-15
    assert summary.abs2_mean == pytest.approx(1.0)
    assert summary.abs4_mean == pytest.approx(1.0)
    assert summary.stderr_abs2 == pytest.approx(0.0, abs=1e-12)


def test_summarize_permutation_invariant(isotropic_gaussian):
    z = isotropic_gaussian(500, seed=4)
    a = summarize(z)
    b = summarize(np.random.default_rng(1).permutation(z))
    assert a.mean == pytest.approx(b.mean, abs=1e-12)
    assert a.abs2_mean == pytest.approx(b.abs2_mean, rel=1e-12)
    assert a.stderr_abs2 == pytest.approx(b.stderr_abs2, rel=1e-9)


def test_summarize_needs_two_samples():
    with pytest.raises(TooFewSamples):
        summarize([1.0])


def test_standard_errors_scale_like_root_n(isotropic_gaussian):
    n = 2500
    summary = summarize(isotropic_gaussian(n, seed=5))
    assert summary.stderr_abs2 == pytest.approx(1.0 / math.sqrt(n), rel=0.2)
    assert summary.stderr_mean == pytest.approx(1.0 / math.sqrt(n), rel=0.2)


def test_isotropic_sample_passes(isotropic_gaussian):
    report = isotropy_tests(isotropic_gaussian(4000, seed=11))
    assert report.ks_phase_p > 1e-4
    assert report.max_abs_z < 5.0
    assert sorted(report.mixed_moment_z) == [(1, 0), (2, 0), (2, 1), (3, 1)]
    assert list(report.table().columns) == ["a", "b", "z"]


def test_positive_reals_fail_isotropy():
    samples = np.random.default_rng(2).uniform(0.5, 2.0, 500)
    report = isotropy_tests(samples)
    assert report.ks_phase_p < 1e-6
    assert report.mixed_moment_z[(1, 0)] > 10


def test_mixed_moment_scores_rotation_invariant(isotropic_gaussian):
    z = isotropic_gaussian(300, seed=8) + 0.2
    base = isotropy_tests(z).mixed_moment_z
    turned = isotropy_tests(z * cmath.exp(0.7j)).mixed_moment_z
    for key, score in base.items():
        assert turned[key] == pytest.approx(score, rel=1e-9)


def test_isotropy_needs_samples(isotropic_gaussian):
    with pytest.raises(TooFewSamples):
        isotropy_tests(isotropic_gaussian(50))


def test_gaussianity_ratio(isotropic_gaussian):
    ratio = gaussianity_ratio(isotropic_gaussian(20000, seed=3))
    assert ratio.value == pytest.approx(2.0, abs=0.15)
    assert ratio.stderr > 0
    phases = np.random.default_rng(0).uniform(0, 2 * math.pi, 200)
    assert gaussianity_ratio(np.exp(1j * phases)).value == pytest.approx(1.0)


def test_mean_ratio_paired():
    est = mean_ratio([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
    assert est.value == pytest.approx(2.0)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TooFewSamples):
        mean_ratio([1.0, 2.0], [1.0])


def test_slope_fit_exact_line():
    fit = slope_fit([(t, 2.0 * t + 1.0) for t in (1.0, 2.0, 5.0, 9.0)])
    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(1.0)
    assert fit.resid == pytest.approx(0.0, abs=1e-9)


def test_slope_fit_of_centering_is_root_two():
    fit = slope_fit([(t, m_of_t(t)) for t in (50.0, 100.0, 200.0)])
    assert abs(fit.slope - math.sqrt(2.0)) < 0.02


def test_slope_fit_needs_three_horizons():
    with pytest.raises(DegenerateDesign):
        slope_fit([(1.0, 2.0), (1.0, 2.5), (2.0, 3.0)])


def test_hill_estimate_on_pareto():
    samples = np.random.default_rng(6).pareto(1.5, 20000) + 1.0
    assert tail_index_hill(samples) == pytest.approx(1.5, abs=0.45)
    with pytest.raises(TooFewSamples):
        tail_index_hill([1.0, 2.0, 3.0])


def test_z_score_and_ratios():
    assert z_score(1.3, 0.1, 1.0) == pytest.approx(3.0)
    assert z_score(1.0, 0.0, 1.0) == 0.0
    assert z_score(2.0, 0.0, 1.0) == math.inf
    assert successive_ratios([1.0, 2.0, 3.0]) == [2.0, 1.5]


def test_shifted_isotropic_sample_passes_once_centered(isotropic_gaussian):
    shift = 0.8 + 0.3j
    samples = isotropic_gaussian(3000, seed=21) + shift
    raw = isotropy_tests(samples)
    assert raw.mixed_moment_z[(1, 0)] > 10.0
    assert raw.ks_phase_p < 1e-6
    centered = isotropy_tests(samples, center=shift)
    assert centered.max_abs_z < 5.0
    assert centered.ks_phase_p > 1e-4
    ratio = gaussianity_ratio(samples, center=shift)
    assert abs(ratio.value - 2.0) <= 4.0 * ratio.stderr


def test_known_pseudo_moment_is_tested_against_its_target(isotropic_gaussian):
    g = isotropic_gaussian(4000, seed=22)
    a, b = 1.0, 0.3
    samples = a * g + b * np.conj(g)
    assert isotropy_tests(samples).mixed_moment_z[(2, 0)] > 10.0
    report = isotropy_tests(samples, targets={(2, 0): 2.0 * a * b})
    assert report.mixed_moment_z[(2, 0)] < 4.0
    assert report.mixed_moment_z[(1, 0)] < 4.0
