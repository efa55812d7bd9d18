import math

import numpy as np
import pytest

from core.errors import DomainError, MalformedKnots, NotAttained
from modules.crem.speedfn import SpeedFunction, identity, parse_speed, validate


def test_exp3_validates_strict(exp3):
    report = validate(exp3, grid_n=100, strict=True)
    assert report.ok, report.conditions()


def test_identity_fails_strict_but_passes_non_strict():
    assert "A(x)<x fails" in validate(identity(), strict=True).conditions()
    assert validate(identity(), strict=False).ok


def test_piecewise_above_diagonal_reports_the_knot():
    A = SpeedFunction.piecewise([(0, 0), (0.5, 0.6), (1, 1)])
    report = validate(A, strict=True)
    bad = [v for v in report.violations if v.condition == "A(x)<x fails"]
    assert bad and bad[0].x == pytest.approx(0.5)


def test_non_increasing_knots_are_rejected():
    with pytest.raises(MalformedKnots):
        SpeedFunction.piecewise([(0, 0), (0.6, 0.3), (0.5, 0.4), (1, 1)])


def test_knots_must_span_unit_interval():
    with pytest.raises(MalformedKnots):
        SpeedFunction.piecewise([(0, 0), (0.9, 1.0)])


def test_decreasing_values_are_a_validation_error():
    A = SpeedFunction.piecewise([(0, 0), (0.5, 0.4), (0.7, 0.2), (1, 1)])
    assert "A non-decreasing fails" in validate(A).conditions()


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (1.0, 1.0), (0.5, 0.18243)])
def test_exp3_eval(exp3, x, expected):
    assert exp3.eval(x) == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("x", [-0.1, 1.1])
def test_eval_outside_domain(exp3, x):
    with pytest.raises(DomainError):
        exp3.eval(x)


def test_endpoint_slopes_match_closed_forms(exp3):
    a = 3.0
    assert exp3.sigma_b_sq == pytest.approx(a / (math.exp(a) - 1), abs=1e-9)
    assert exp3.sigma_e_sq == pytest.approx(a * math.exp(a) / (math.exp(a) - 1), abs=1e-9)
    assert exp3.sigma_b_sq == pytest.approx(0.157187, abs=1e-6)
    assert exp3.sigma_e_sq == pytest.approx(3.157187, abs=1e-6)


def test_variance_profile_examples(exp3):
    assert exp3.variance_profile(6.0, 6.0) == pytest.approx(6.0)
    assert exp3.variance_profile(0.0, 6.0) == 0.0
    assert exp3.variance_profile(3.0, 6.0) == pytest.approx(1.0946, abs=1e-4)


def test_inverse_variance_profile(exp3):
    assert exp3.inverse_variance_profile(0.0, 6.0) == 0.0
    assert exp3.inverse_variance_profile(6.0, 6.0) == pytest.approx(6.0, abs=1e-8)
    assert exp3.inverse_variance_profile(1.0946, 6.0) == pytest.approx(3.0, abs=1e-3)
    with pytest.raises(NotAttained):
        exp3.inverse_variance_profile(6.5, 6.0)


@pytest.mark.parametrize("s", [0.1, 1.0, 2.5, 4.0, 5.9])
def test_variance_profile_round_trip(exp3, s):
    t = 6.0
    v = exp3.variance_profile(s, t)
    assert exp3.inverse_variance_profile(v, t) == pytest.approx(s, abs=1e-8 * t)


def test_flat_span_resolves_to_left_endpoint():
    A = SpeedFunction.piecewise([(0, 0), (0.2, 0.1), (0.6, 0.1), (1, 1)])
    assert A.inverse_variance_profile(0.1 * 10, 10.0) == pytest.approx(2.0, abs=1e-6)


def test_eval_is_monotone_on_sorted_input(exp3):
    xs = np.linspace(0, 1, 257)
    assert (np.diff(exp3.eval_many(xs)) >= 0).all()


def test_identity_variance_profile_is_exact():
    assert identity().variance_profile(1.2345, 6.0) == 1.2345
    assert identity().is_identity


def test_parse_speed_forms():
    assert parse_speed("exp:3.0").sigma_e_sq == pytest.approx(3.157187, abs=1e-6)
    pwl = parse_speed("pwl:0,0;0.5,0.4;1,1")
    assert pwl.eval(0.5) == pytest.approx(0.4)
    assert parse_speed("pwl:0,0;0.5,0.4;1,1|inf").sigma_e_sq == math.inf
    assert parse_speed("bbm").is_identity
    with pytest.raises(DomainError):
        parse_speed("cubic:2")
    with pytest.raises(MalformedKnots):
        parse_speed("pwl:0,0;0.5;1,1")


def test_infinite_end_slope_is_noted_not_violated():
    report = validate(parse_speed("pwl:0,0;0.5,0.2;1,1|inf"))
    assert report.ok
    assert any("infinite" in note for note in report.notes)
