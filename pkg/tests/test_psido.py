import math

import numpy as np
import pytest

from magspec.fields import FieldModel, MagneticTerm, zero_model
from magspec.psido import (AliasingWarning, CutoffSpec, GridRule, ResolutionError, SymbolSpec, build_operator,
                           decode_matrix, encode_matrix, minimal_N, norm_estimate, operator_from_bytes,
                           operator_hash, operator_to_bytes, operator_trace, resolution_N, symbol_eval,
                           symbol_extent, trace_formula_reference)
from oracles import TEN_SQRT_PI

TEST = SymbolSpec("test")


@pytest.fixture(scope="module")
def off_centre():
    return FieldModel(2, (MagneticTerm("stream_gaussian", (0.6, -0.3), 1.0, 0.9),), name="off_centre")


def test_cutoff_profile():
    chi = CutoffSpec()
    t = np.array([0.0, 1.0, math.pi / 2, 2.0, 3 * math.pi / 4, 3.0])
    v = chi(t)
    assert v[0] == v[1] == v[2] == 1.0 and v[4] == v[5] == 0.0 and 0 < v[3] < 1
    np.testing.assert_array_equal(chi(-t), v)
    assert np.all(CutoffSpec(enabled=False)(t) == 1.0)
    with pytest.raises(ValueError):
        CutoffSpec(plateau=2.0, support=1.0)


def test_symbol_modes(gaussian_stream, gaussian_V):
    from oracles import gaussian_stream_M, gaussian_V_X

    s = np.linspace(-3, 3, 7)
    lead = symbol_eval(SymbolSpec("leading_magnetic", gaussian_stream), 0.3, s)
    np.testing.assert_allclose(lead[0], np.exp(1j * gaussian_stream_M(s)) - 1, atol=1e-10)
    heur = symbol_eval(SymbolSpec("electric_heuristic", gaussian_V), 0.3, s, k=20.0)
    np.testing.assert_allclose(heur[0], np.exp(1j * gaussian_V_X(s) / 20.0) - 1, atol=1e-10)
    with pytest.raises(ValueError):
        SymbolSpec("leading_magnetic")
    with pytest.raises(ValueError):
        SymbolSpec("bogus", gaussian_stream)


def test_symbol_extent_and_default_N(gaussian_stream):
    spec = SymbolSpec("leading_magnetic", gaussian_stream)
    ext = symbol_extent(spec)
    assert abs(symbol_eval(spec, 0.0, np.array([ext]))[0]) <= 1.01e-12
    assert resolution_N(spec, 40.0) >= 4 * 40 * ext
    assert resolution_N(spec, 40.0) % 2 == 0


def test_test_symbol_trace():
    op = build_operator(TEST, 10.0)
    assert abs(operator_trace(op) - TEN_SQRT_PI) <= 1e-6 * TEN_SQRT_PI


@pytest.mark.filterwarnings("ignore::magspec.psido.AliasingWarning")
def test_test_symbol_entries():
    """Gaussian symbol: kernel entries are (k/N) chi(dtheta) sqrt(pi) exp(-(k sin dtheta)^2 / 4)."""
    k = 10.0
    op = build_operator(TEST, k, 128)
    th = op.theta
    d = (th[:, None] - th[None, :] + math.pi) % (2 * math.pi) - math.pi
    ref = (k / op.N) * CutoffSpec()(d) * math.sqrt(math.pi) * np.exp(-0.25 * (k * np.sin(d)) ** 2)
    np.testing.assert_allclose(op.matrix, ref, atol=1e-8)


def test_zero_field_operator_vanishes():
    op = build_operator(SymbolSpec("leading_magnetic", zero_model(2)), 20.0)
    assert not np.any(op.matrix)


def test_resolution_guards(gaussian_stream):
    spec = SymbolSpec("leading_magnetic", gaussian_stream)
    s_max = symbol_extent(spec)
    with pytest.raises(ResolutionError):
        build_operator(spec, 20.0, 64)
    with pytest.raises(ResolutionError):
        build_operator(spec, 20.0, 513)
    with pytest.warns(AliasingWarning):
        build_operator(spec, 20.0, 512)
    assert minimal_N(s_max, 20.0) <= 512 < 4 * 20 * s_max


def test_circulant_for_rotation_invariant(gaussian_stream):
    op = build_operator(SymbolSpec("leading_magnetic", gaussian_stream), 10.0)
    assert op.meta["circulant"]
    np.testing.assert_allclose(np.roll(np.roll(op.matrix, 3, 0), 3, 1), op.matrix, atol=1e-14)


def test_general_model_trace_matches_reference(off_centre):
    spec = SymbolSpec("leading_magnetic", off_centre)
    op = build_operator(spec, 10.0)
    assert not op.meta["circulant"]
    ref = trace_formula_reference(spec, 10.0)
    assert abs(operator_trace(op) - ref) <= 1e-6 * abs(ref)


def test_general_model_row_matches_direct_transform(off_centre):
    """Entry (j, l) is chi * (k/N) * int sigma(theta_j, s) exp(-i k sin(theta_j - theta_l) s) ds."""
    from scipy.integrate import quad

    spec = SymbolSpec("leading_magnetic", off_centre)
    k = 10.0
    op = build_operator(spec, k)
    th, j = op.theta, 7
    for l in (0, 3, 9, 20, 40):
        d = (th[j] - th[l] + math.pi) % (2 * math.pi) - math.pi
        eta = k * math.sin(d)

        def f(s, part):
            v = symbol_eval(spec, th[j], s) * np.exp(-1j * eta * s)
            return v.real if part == 0 else v.imag

        val = complex(*(quad(f, -12, 12, args=(p,), limit=400, epsabs=1e-13)[0] for p in (0, 1)))
        ref = CutoffSpec()(np.array([d]))[0] * k / op.N * val
        assert abs(op.matrix[j, l] - ref) <= 1e-10


def test_norm_bound_dominates(gaussian_stream):
    op = build_operator(SymbolSpec("leading_magnetic", gaussian_stream), 10.0)
    assert norm_estimate(op) <= op.norm_bound * (1 + 1e-12)
    assert math.isclose(norm_estimate(op), np.linalg.norm(op.matrix, 2), rel_tol=1e-6)


def test_hash_covers_cutoff(gaussian_stream):
    spec = SymbolSpec("leading_magnetic", gaussian_stream)
    h1 = operator_hash(spec, 20.0, 512, CutoffSpec())
    h2 = operator_hash(spec, 20.0, 512, CutoffSpec(plateau=math.pi / 3))
    assert h1 != h2 and h1 == operator_hash(spec, 20.0, 512, CutoffSpec())
    assert h1 != operator_hash(spec, 20.0, 512, CutoffSpec(), GridRule(beta=5))


def test_serialization_roundtrip_and_corruption(gaussian_stream):
    op = build_operator(SymbolSpec("leading_magnetic", gaussian_stream), 6.0)
    raw = operator_to_bytes(op)
    back = operator_from_bytes(raw, op.spec_hash)
    np.testing.assert_array_equal(back.matrix, op.matrix)
    assert back.k == op.k and back.meta == op.meta
    with pytest.raises(ValueError):
        operator_from_bytes(raw[:-8])
    with pytest.raises(ValueError):
        operator_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        operator_from_bytes(raw, "0" * 64)


def test_matrix_codec_is_little_endian():
    data = np.array([[1 + 2j]])
    raw = encode_matrix(data, 3.0, "ab" * 32)
    assert raw[:4] == b"MSPO"
    out, k, h, meta = decode_matrix(raw)
    assert out[0, 0] == 1 + 2j and k == 3.0 and h == "ab" * 32


def test_reference_example_norm_bound(gaussian_stream):
    with pytest.warns(AliasingWarning):
        op = build_operator(SymbolSpec("leading_magnetic", gaussian_stream), 20.0, 512)
    assert np.all(np.isfinite(np.abs(op.matrix).sum(axis=1)))
    assert norm_estimate(op) <= op.norm_bound
