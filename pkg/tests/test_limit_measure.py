import math
import warnings

import numpy as np
import pytest

from magspec.fields import ElectricTerm, FieldModel, MagneticTerm, zero_model
from magspec.limit_measure import (Arc, MeasureGrid, MeasureReport, measure_report, moment_certified, mu_arc,
                                   mu_arcs, mu_moment_estimate, mu_tilde_interval, tail_moment_check, wrap_phase)
from oracles import gaussian_stream_M, line_moment, lorentzian_stream_M, preimage_length


@pytest.mark.parametrize("a, b", [(-1.0, 0.0), (-0.5, 0.5), (-4.0, -1.0), (1.0, 1.0)])
def test_invalid_arcs(a, b):
    with pytest.raises(ValueError):
        Arc(a, b)


def test_arc_helpers():
    arc = Arc(-1.5, -1.0)
    assert arc.gap == 1.0
    assert arc.conjugate() == Arc(1.0, 1.5)
    parts = arc.partition(4)
    assert parts[0].a == -1.5 and parts[-1].b == -1.0
    assert list(arc.contains([-1.5, -1.0, -1.2])) == [True, False, True]
    np.testing.assert_allclose(wrap_phase([math.pi, -math.pi, 3 * math.pi / 2]), [-math.pi, -math.pi, -math.pi / 2])


def test_zero_field_has_no_mass():
    assert mu_arc(zero_model(2), Arc(0.5, 1.0)) == 0.0


@pytest.mark.parametrize("arc", [Arc(-1.5, -1.0), Arc(-1.0, -0.2), Arc(0.3, 1.4)])
def test_gaussian_arc_masses(gaussian_stream, arc):
    expected = preimage_length(gaussian_stream_M, arc.a, arc.b, 1.0)
    assert math.isclose(mu_arc(gaussian_stream, arc), expected, rel_tol=1e-8)


def test_lorentzian_arc_mass(lorentzian_stream):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = mu_arc(lorentzian_stream, Arc(-1.0, -0.5))
    assert math.isclose(got, 2 * math.sqrt(3), rel_tol=1e-6)


def test_masses_are_additive(gaussian_stream):
    arc = Arc(-1.4, -0.3)
    parts = mu_arcs(gaussian_stream, arc.partition(5))
    assert math.isclose(float(np.sum(parts)), mu_arc(gaussian_stream, arc), rel_tol=1e-10)


def test_conjugate_symmetry_for_odd_profile(gaussian_stream):
    arc = Arc(-1.2, -0.7)
    assert math.isclose(mu_arc(gaussian_stream, arc), mu_arc(gaussian_stream, arc.conjugate()), rel_tol=1e-10)


def test_off_centre_model_matches_centred():
    """Translating the field does not change the measure (the line family is translation invariant)."""
    a = FieldModel(2, (MagneticTerm("stream_gaussian", (0.0, 0.0)),))
    b = FieldModel(2, (MagneticTerm("stream_gaussian", (0.7, -0.4)),))
    arc = Arc(-1.5, -1.0)
    assert math.isclose(mu_arc(b, arc, MeasureGrid(n_omega=32)), mu_arc(a, arc), rel_tol=1e-8)


@pytest.mark.parametrize("l1, l2", [(1, 1), (2, 2), (2, 1)])
def test_gaussian_moments(gaussian_stream, l1, l2):
    est = mu_moment_estimate(gaussian_stream, l1, l2)
    exact = line_moment(gaussian_stream_M, l1, l2)
    assert est.certified
    assert abs(est.value - exact) <= 1e-8 * abs(exact)


def test_lorentzian_moment_and_certification(lorentzian_stream):
    assert not moment_certified(lorentzian_stream, 1, 0)
    assert moment_certified(lorentzian_stream, 1, 1)
    est = mu_moment_estimate(lorentzian_stream, 1, 1)
    assert math.isclose(est.value.real, line_moment(lorentzian_stream_M, 1, 1).real, rel_tol=1e-8)


def test_rescaled_measure(gaussian_V):
    c = 0.5 * math.sqrt(2 * math.pi)
    s = lambda x: math.sqrt(-2 * math.log(x / c))  # noqa: E731
    expected = 2 * (s(0.8) - s(1.2))
    assert math.isclose(mu_tilde_interval(gaussian_V, (-1.2, -0.8)), expected, rel_tol=1e-8)


def test_rescaled_measure_needs_zero_A(gaussian_stream):
    with pytest.raises(ValueError):
        mu_tilde_interval(gaussian_stream, (-1.2, -0.8))


def test_lorentzian_tail_partials(lorentzian_stream):
    rep = tail_moment_check(lorentzian_stream, 2, radii=(1.0, 10.0, 100.0, 1e3))
    for R, p in zip(rep.radii, rep.partials):
        assert math.isclose(p, line_moment(lorentzian_stream_M, 1, 1, R).real, rel_tol=1e-7)
    assert rep.predicted_convergent and rep.observed_convergent and rep.tail_exponent < 0


def test_measure_report_roundtrip(gaussian_stream):
    rep = measure_report(gaussian_stream, [Arc(-1.5, -1.0)], [(1, 1)])
    again = MeasureReport.from_dict(rep.as_dict())
    assert again.moments == rep.moments and again.masses == rep.masses


def test_three_dimensional_measure_positive():
    m3 = FieldModel(3, (MagneticTerm("stream_gaussian", (0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0)),))
    grid = MeasureGrid(n_omega=8, n_polar=6, n_alpha=8, n_scan=1024)
    mass = mu_arc(m3, Arc(-1.0, -0.2), grid)
    assert mass > 0 and math.isfinite(mass)
    assert mu_arc(FieldModel(3, (), (ElectricTerm("gaussian", (0.0, 0.0, 0.0), 1.0, 1.0),)), Arc(-1.0, -0.2), grid) == 0
