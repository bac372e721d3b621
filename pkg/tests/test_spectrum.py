import math

import numpy as np
import pytest

from magspec.limit_measure import Arc, MeasureGrid
from magspec.psido import OperatorMatrix, CutoffSpec, SymbolSpec, build_operator
from magspec.spectrum import (SolverError, SpectralResult, convergence_experiment, counting_measure, eigen_moment,
                              eigenphases, fit_order, inverse_k_fit, monotone_with_slack, rescaled_counting,
                              spectrum_from_bytes, spectrum_key, spectrum_to_bytes, trace_moment, trace_moments)


def _assembled(model, k, mode="leading_magnetic"):
    op = build_operator(SymbolSpec(mode, model), k)
    op.matrix[np.diag_indices_from(op.matrix)] += 1.0
    op.includes_identity = True
    return op


def test_phase_convention():
    lam = np.exp(1j * np.array([0.1, -2.0, math.pi, 0.5]))
    res = SpectralResult.from_eigenvalues(lam, 1.0)
    assert np.all(res.phases >= -math.pi) and np.all(res.phases < math.pi)
    np.testing.assert_allclose(res.phases, [-math.pi, -2.0, 0.5, 0.1])


def test_dense_and_circulant_agree(gaussian_stream):
    S = _assembled(gaussian_stream, 10.0)
    a = eigenphases(S, "dense")
    b = eigenphases(S, "circulant")
    np.testing.assert_allclose(np.sort(a.phases), np.sort(b.phases), atol=1e-9)


def test_circulant_refused_for_general_matrix(mixed_model):
    S = _assembled(mixed_model.with_terms(electric=()), 6.0)
    with pytest.raises(ValueError):
        eigenphases(S, "circulant")


def test_eigenphases_need_identity(gaussian_stream):
    with pytest.raises(ValueError):
        eigenphases(build_operator(SymbolSpec("leading_magnetic", gaussian_stream), 5.0))


def test_solver_failure_is_reported():
    bad = OperatorMatrix(np.full((4, 4), np.nan, dtype=complex), 1.0, CutoffSpec(), "x", True)
    with pytest.raises(SolverError):
        eigenphases(bad)


def test_counting_gate():
    res = SpectralResult.from_eigenvalues([np.exp(-1.2j), 0.5 * np.exp(-1.2j), np.exp(0.3j)], 10.0)
    c = counting_measure(res, Arc(-1.5, -1.0))
    assert (c.gated, c.raw, int(c)) == (1, 2, 1)


def test_trace_moments_match_products(gaussian_stream):
    S = _assembled(gaussian_stream, 8.0)
    B = S.op_part()
    got = trace_moments(S, [(1, 1), (2, 1), (1, 0), (0, 2)])
    assert np.isclose(got[(1, 1)], np.trace(B @ B.conj().T))
    assert np.isclose(got[(2, 1)], np.trace(B @ B @ B.conj().T))
    assert np.isclose(got[(1, 0)], np.trace(B))
    assert np.isclose(got[(0, 2)], np.trace(B.conj().T @ B.conj().T))
    assert trace_moment(S, 1, 1) == got[(1, 1)]


def test_eigen_moments_for_normal_matrix(gaussian_stream):
    """Circulant matrices are normal, so trace and eigenvalue moments coincide."""
    S = _assembled(gaussian_stream, 8.0)
    res = eigenphases(S, "circulant")
    assert np.isclose(eigen_moment(res, 2, 2), trace_moment(S, 2, 2), rtol=1e-10)


def test_rescaled_counting(gaussian_V, gaussian_stream):
    S = _assembled(gaussian_V, 20.0, "electric_heuristic")
    res = eigenphases(S)
    assert rescaled_counting(res, 20.0, (-1.2, -0.8)) >= 0
    with pytest.raises(ValueError):
        rescaled_counting(res, 20.0, (-1.0, 1.0))
    with pytest.raises(ValueError):
        rescaled_counting(eigenphases(_assembled(gaussian_stream, 5.0)), 5.0, (-1.2, -0.8))


def test_fit_helpers():
    ks = np.array([20.0, 40.0, 80.0, 160.0])
    assert math.isclose(fit_order(ks, 3.0 / ks), 1.0, rel_tol=1e-12)
    assert fit_order([1.0], [0.5]) is None
    C, dev = inverse_k_fit(ks, 2.5 / ks)
    assert math.isclose(C, 2.5, rel_tol=1e-12) and dev < 1e-12
    assert monotone_with_slack([4, 3, 3.5, 1], 1)
    assert not monotone_with_slack([4, 5, 3, 3.5], 1)


def test_spectrum_codec(gaussian_stream):
    res = eigenphases(_assembled(gaussian_stream, 6.0))
    key = spectrum_key(res.spec_hash, "dense")
    back = spectrum_from_bytes(spectrum_to_bytes(res, key), key)
    np.testing.assert_array_equal(back.eigenvalues, res.eigenvalues)
    assert back.meta == res.meta
    with pytest.raises(ValueError):
        spectrum_from_bytes(spectrum_to_bytes(res, key), spectrum_key("other", "dense"))


def test_small_convergence_experiment(gaussian_stream):
    table = convergence_experiment(gaussian_stream, "leading_magnetic", [5, 10, 20], arcs=[Arc(-1.5, -1.0)],
                                   moments=[(1, 1)], grid=MeasureGrid(n_omega=16))
    errs = table.moment_errors(1, 1)
    assert len(errs) == 3 and errs[-1] < errs[0]
    assert len(table.arc_errors(Arc(-1.5, -1.0))) == 3
    assert not table.failures
    with pytest.raises(ValueError):
        convergence_experiment(gaussian_stream, "leading_magnetic", [10, 5, 20])
