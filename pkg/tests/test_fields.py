import numpy as np
import pytest

from magspec.fields import (ElectricTerm, FieldError, FieldModel, MagneticTerm, apply_gauge, curl_and_flux,
                            eval_fields, jacobian_fd_check, magnetic_field, potential_A, stream_function,
                            term_from_mapping, term_to_mapping, zero_model)


def test_negative_width_rejected():
    with pytest.raises(FieldError):
        MagneticTerm("stream_gaussian", (0.0, 0.0), 1.0, -1.0)


def test_unknown_kind_rejected():
    with pytest.raises(FieldError):
        MagneticTerm("dipole", (0.0, 0.0))
    with pytest.raises(FieldError):
        ElectricTerm("coulomb", (0.0, 0.0), 1.0, 1.0)


def test_stream_potentials_have_zero_flux(mixed_model):
    _, flux = curl_and_flux(mixed_model)
    assert abs(flux) <= 1e-12


def test_flux_needs_plane():
    m3 = FieldModel(3, (MagneticTerm("stream_gaussian", (0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0)),))
    with pytest.raises(FieldError):
        curl_and_flux(m3)


def test_analytic_jacobian_matches_finite_differences(mixed_model):
    pts = np.random.default_rng(1).uniform(-3, 3, size=(100, 2))
    assert jacobian_fd_check(mixed_model, pts) <= 1e-6


def test_stream_function_generates_A(gaussian_stream):
    """A = (d2 psi, -d1 psi) checked by central differences of psi."""
    term = gaussian_stream.magnetic_terms[0]
    pts = np.array([[0.3, -0.7], [1.5, 0.2], [-2.0, 1.0]])
    h = 1e-5
    d1 = (stream_function(term, pts + [h, 0]) - stream_function(term, pts - [h, 0])) / (2 * h)
    d2 = (stream_function(term, pts + [0, h]) - stream_function(term, pts - [0, h])) / (2 * h)
    A = potential_A(gaussian_stream, pts)
    np.testing.assert_allclose(A, np.stack([d2, -d1], axis=1), atol=1e-8)


def test_magnetic_field_is_curl(mixed_model):
    pts = np.array([[0.2, 0.1], [-1.0, 0.5]])
    h = 1e-5
    dA2_dx1 = (potential_A(mixed_model, pts + [h, 0])[:, 1] - potential_A(mixed_model, pts - [h, 0])[:, 1]) / (2 * h)
    dA1_dx2 = (potential_A(mixed_model, pts + [0, h])[:, 0] - potential_A(mixed_model, pts - [0, h])[:, 0]) / (2 * h)
    np.testing.assert_allclose(magnetic_field(mixed_model, pts), dA1_dx2 - dA2_dx1, atol=1e-7)


def test_gauge_leaves_B_unchanged(gaussian_stream):
    g = MagneticTerm("gauge_gradient", (0.5, -0.2), 0.9, 0.8)
    gauged = apply_gauge(gaussian_stream, g)
    pts = np.random.default_rng(3).normal(size=(20, 2))
    np.testing.assert_allclose(magnetic_field(gauged, pts), magnetic_field(gaussian_stream, pts), atol=1e-12)
    assert not gauged.rotation_invariant


def test_zero_gauge_is_identity(gaussian_stream):
    g = MagneticTerm("gauge_gradient", (0.0, 0.0), 0.0, 1.0)
    assert apply_gauge(gaussian_stream, g) is gaussian_stream


def test_gauge_requires_gradient_term(gaussian_stream):
    with pytest.raises(FieldError):
        apply_gauge(gaussian_stream, MagneticTerm("stream_gaussian", (0.0, 0.0)))


def test_zero_model_is_zero():
    m = zero_model(2)
    assert m.magnetic_is_zero and m.electric_is_zero
    jet = eval_fields(m, [[0.3, 0.4]], order=1)
    assert np.all(jet.A == 0) and np.all(jet.V == 0)


def test_decay_orders(mixed_model, lorentzian_stream):
    assert lorentzian_stream.rho == 2.0
    assert mixed_model.rho == 2.0
    heavy = FieldModel(2, (), (ElectricTerm("lorentzian_power", (0.0, 0.0), 1.0, 1.0, 3.5),))
    assert heavy.rho == 3.5


def test_term_mapping_roundtrip(mixed_model):
    for t in mixed_model.magnetic_terms:
        assert term_from_mapping(term_to_mapping(t), True) == t
    for t in mixed_model.electric_terms:
        assert term_from_mapping(term_to_mapping(t), False) == t
