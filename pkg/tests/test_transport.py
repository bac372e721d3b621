import math

import numpy as np
import pytest

from magspec.fields import MagneticTerm, apply_gauge, eval_fields
from magspec.transport import (AmplitudeFrame, amplitude_b0, effective_potential_V1, f0_batch, transport_v1,
                               v1_batch)
from magspec.xray import LineFrame, eikonal_batch, xray_M_batch, xray_X_batch


def _dirs(th):
    th = np.asarray(th, dtype=float)
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def test_f0_equals_grouped_form(mixed_model):
    """f0 = |grad phi - A|^2 + V + i(div A - lap phi)."""
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 2))
    om = _dirs(rng.uniform(0, 2 * math.pi, 6))
    for sign in (1, -1):
        jet = eikonal_batch(mixed_model, x, om, sign, order=2)
        fj = eval_fields(mixed_model, x, order=1)
        grouped = (np.sum((jet.grad - fj.A) ** 2, axis=1) + fj.V + 1j * (fj.divA - jet.lap))
        np.testing.assert_allclose(f0_batch(mixed_model, x, om, sign), grouped, atol=1e-10)


def test_v1_electric_only_identity(gaussian_V):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10, 2))
    om = _dirs(rng.uniform(0, 2 * math.pi, 10))
    diff = v1_batch(gaussian_V, x, om, 1) - v1_batch(gaussian_V, x, om, -1)
    np.testing.assert_allclose(diff, 2 * xray_X_batch(gaussian_V, om, x), atol=1e-8)


def test_transport_jet_fields(gaussian_stream):
    jet = transport_v1(gaussian_stream, [0.2, 0.1], [0.0, 2.0], 1)
    assert jet.omega == (0.0, 1.0) and jet.sign == 1
    assert jet.V1 == effective_potential_V1(gaussian_stream, [0.2, 0.1])


def test_transport_rejects_nonfinite(gaussian_stream):
    with pytest.raises(ValueError):
        transport_v1(gaussian_stream, [math.nan, 0.0], [1.0, 0.0], 1)


@pytest.mark.parametrize("sign", [1, -1])
def test_v1_decays_along_outgoing_rays(lorentzian_stream, sign):
    tau = np.geomspace(10, 100, 6)
    u = _dirs(0.4)
    v = v1_batch(lorentzian_stream, sign * tau[:, None] * u, np.tile([1.0, 0.0], (6, 1)), sign)
    assert np.polyfit(np.log(tau), np.log(np.abs(v)), 1)[0] <= -0.9


def test_amplitude_frame_cone_condition():
    with pytest.raises(ValueError):
        AmplitudeFrame([1.0, 0.0], [0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        AmplitudeFrame([1.0, 0.0], [1.0, 0.0], [1.0, 0.0], delta=1.5)


def test_diagonal_jacobian():
    w0, w = _dirs(0.0), _dirs(0.6)
    af = AmplitudeFrame(w0, w, w)
    assert math.isclose(af.jacobian(), 1.0 / float(w @ w0), rel_tol=1e-12)


def test_linear_map_lands_on_omega0_plane():
    af = AmplitudeFrame(_dirs(0.1), _dirs(0.5), _dirs(-0.4))
    x = af.x_of_xi(np.random.default_rng(0).normal(size=(5, 2)))
    np.testing.assert_allclose(x @ af.omega0, 0, atol=1e-13)


def test_diagonal_amplitude_is_leading_symbol(mixed_model):
    w = _dirs(0.35)
    af = AmplitudeFrame(_dirs(0.0), w, w)
    xi = np.linspace(-2, 2, 9)
    b0 = amplitude_b0(mixed_model, af, xi)
    frame = LineFrame.from_omega(w)
    M = xray_M_batch(mixed_model, np.tile(w, (9, 1)), xi[:, None] * frame.basis[0])
    np.testing.assert_allclose(b0, np.exp(1j * M) - 1, atol=1e-8)


def test_b0_gauge_invariant_on_diagonal(gaussian_stream):
    gauged = apply_gauge(gaussian_stream, MagneticTerm("gauge_gradient", (0.2, 0.3), 0.8, 0.9))
    w = _dirs(-0.3)
    af = AmplitudeFrame(_dirs(0.1), w, w)
    xi = np.linspace(-1.5, 1.5, 7)
    np.testing.assert_allclose(amplitude_b0(gauged, af, xi), amplitude_b0(gaussian_stream, af, xi), atol=1e-9)


def test_f0_negligible_far_from_gaussian_field(gaussian_stream):
    """Beside or behind the vortex (relative to the ray direction) every factor is Gaussian-small."""
    om = np.tile([0.0, 1.0], (2, 1))
    for sign in (1, -1):
        x = np.array([[20.0, 0.0], [0.0, 20.0 * sign]])
        assert np.max(np.abs(f0_batch(gaussian_stream, x, om, sign))) < 1e-40


def test_f0_persists_on_incoming_side(gaussian_stream):
    """At x = -20 omega the phase has crossed the whole vortex: |grad phi|^2 = (dM/ds)^2 = 2 pi."""
    f = f0_batch(gaussian_stream, [[0.0, -20.0]], [[0.0, 1.0]], 1)
    assert abs(f[0] - 2 * math.pi) <= 1e-9


def test_f0_without_magnetic_field_is_V(gaussian_V):
    x = np.random.default_rng(8).normal(size=(5, 2))
    om = np.tile([1.0, 0.0], (5, 1))
    from magspec.fields import potential_V
    np.testing.assert_allclose(f0_batch(gaussian_V, x, om, 1), potential_V(gaussian_V, x), atol=1e-15)
