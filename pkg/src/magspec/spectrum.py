"""Eigenphases, counting measures, trace moments and convergence tables."""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .fields import FieldModel
from .limit_measure import Arc, MeasureGrid, mu_arcs, mu_moment_estimate
from .psido import (CutoffSpec, GridRule, OperatorMatrix, SymbolSpec, build_operator, decode_matrix,
                    encode_matrix)

log = logging.getLogger(__name__)

DEFAULT_GATE = 0.2


class SolverError(RuntimeError):
    """The dense eigensolver failed."""


@dataclass
class SpectralResult:
    """Eigenvalues of one assembled scattering matrix.

    ``phases`` lie in [-pi, pi) and all arrays are sorted by decreasing |phase|.
    """

    k: float
    eigenvalues: np.ndarray
    phases: np.ndarray
    moduli: np.ndarray
    spec_hash: str
    N: int
    cutoff: dict
    method: str = "dense"
    meta: dict = field(default_factory=dict)

    @property
    def unitarity_deviation(self) -> float:
        return float(np.max(np.abs(self.moduli - 1.0))) if self.N else 0.0

    @classmethod
    def from_eigenvalues(cls, lam, k, spec_hash="", cutoff=None, method="dense", meta=None):
        lam = np.asarray(lam, dtype=complex).ravel()
        ph = np.angle(lam)
        ph = np.where(ph >= math.pi, -math.pi, ph)
        order = np.lexsort((ph, -np.abs(ph)))
        lam, ph = lam[order], ph[order]
        return cls(float(k), lam, ph, np.abs(lam), spec_hash, lam.size,
                   dict(cutoff or {}), method, dict(meta or {}))


def eigenphases(S: OperatorMatrix, method: str = "dense") -> SpectralResult:
    """Eigenphases of I + Op.

    ``method="dense"`` runs a full non-Hermitian eigensolver.
    ``method="circulant"`` reads the eigenvalues off the FFT of the first
    column; it is exact only for matrices built from theta-independent symbols.
    """
    if not S.includes_identity:
        raise ValueError("eigenphases expects an assembled I + Op matrix")
    if method == "dense":
        try:
            lam = scipy.linalg.eigvals(S.matrix, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"eigensolver failed for matrix {S.spec_hash}: {exc}") from exc
    elif method == "circulant":
        if not S.meta.get("circulant", False):
            raise ValueError("circulant eigenvalues need a theta-independent symbol")
        lam = np.fft.fft(S.matrix[:, 0])
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    return SpectralResult.from_eigenvalues(lam, S.k, S.spec_hash, S.cutoff.as_dict(), method, S.meta)


@dataclass(frozen=True)
class ArcCount:
    """Number of eigenphases in an arc, with and without the modulus gate."""

    gated: int
    raw: int

    def __int__(self) -> int:
        return self.gated


def counting_measure(res: SpectralResult, arc: Arc, modulus_gate: float = DEFAULT_GATE) -> ArcCount:
    """Count phases in the half-open arc [a, b)."""
    arc = arc if isinstance(arc, Arc) else Arc(*arc)
    inside = arc.contains(res.phases)
    ok = np.abs(res.moduli - 1.0) <= modulus_gate
    return ArcCount(int(np.count_nonzero(inside & ok)), int(np.count_nonzero(inside)))


def rescaled_counting(res: SpectralResult, k: float, delta, modulus_gate: float | None = None) -> int:
    """#{n : k * theta_n in delta} for spectra of the A = 0 heuristic mode."""
    if res.meta.get("mode") != "electric_heuristic" or not res.meta.get("magnetic_zero", False):
        raise ValueError("rescaled counting needs a spectrum from the electric_heuristic mode with A = 0")
    lo, hi = (float(v) for v in delta)
    if not lo < hi or lo <= 0 <= hi:
        raise ValueError(f"interval [{lo}, {hi}) must be nonempty and separated from 0")
    x = k * res.phases
    mask = (x >= lo) & (x < hi)
    if modulus_gate is not None:
        mask &= np.abs(res.moduli - 1.0) <= modulus_gate
    return int(np.count_nonzero(mask))


def _check_pair(l1, l2):
    l1, l2 = int(l1), int(l2)
    if l1 < 0 or l2 < 0 or l1 + l2 < 1:
        raise ValueError("moment indices must be nonnegative with l1 + l2 >= 1")
    return l1, l2


def trace_moments(S: OperatorMatrix, pairs: Sequence[tuple[int, int]]) -> dict:
    """Tr[(S - I)^l1 (S* - I)^l2] for several pairs, sharing matrix powers.

    Uses Tr(B^l1 (B^l2)^*) = sum(B^l1 * conj(B^l2)), so no product beyond
    the powers themselves is formed.
    """
    pairs = [_check_pair(*p) for p in pairs]
    B = S.op_part()
    top = max((max(p) for p in pairs), default=0)
    powers = {1: B}
    for n in range(2, top + 1):
        powers[n] = powers[n - 1] @ B
    out = {}
    for l1, l2 in pairs:
        if l2 == 0:
            out[(l1, l2)] = complex(np.trace(powers[l1]))
        elif l1 == 0:
            out[(l1, l2)] = complex(np.conj(np.trace(powers[l2])))
        else:
            out[(l1, l2)] = complex(np.vdot(powers[l2], powers[l1]))
    return out


def trace_moment(S: OperatorMatrix, l1: int, l2: int) -> complex:
    """Tr[(S - I)^l1 (S* - I)^l2] by matrix products."""
    return trace_moments(S, [(l1, l2)])[(int(l1), int(l2))]


def eigen_moment(res: SpectralResult, l1: int, l2: int) -> complex:
    """sum_n (lambda_n - 1)^l1 (conj(lambda_n) - 1)^l2."""
    l1, l2 = _check_pair(l1, l2)
    z = res.eigenvalues - 1.0
    return complex(np.sum(z**l1 * np.conj(z) ** l2))


def fit_order(ks, errors) -> float | None:
    """p in err ~ C k^(-p) by log-log least squares; None if fewer than 2 positive errors."""
    ks = np.asarray(ks, dtype=float)
    err = np.asarray(errors, dtype=float)
    ok = np.isfinite(err) & (err > 0)
    if np.count_nonzero(ok) < 2:
        return None
    return float(-np.polyfit(np.log(ks[ok]), np.log(err[ok]), 1)[0])


def inverse_k_fit(ks, values) -> tuple[float, float]:
    """Fit values ~ C / k; returns (C, max relative deviation)."""
    ks = np.asarray(ks, dtype=float)
    v = np.asarray(values, dtype=float)
    C = float(np.exp(np.mean(np.log(ks * v))))
    return C, float(np.max(np.abs(ks * v / C - 1.0)))


def monotone_with_slack(errors, allowed: int = 1) -> bool:
    """True if the sequence decreases except for at most ``allowed`` steps."""
    e = np.asarray(errors, dtype=float)
    return int(np.count_nonzero(np.diff(e) > 0)) <= allowed


@dataclass
class ConvergenceTable:
    """Per-k normalized counts and moments against their limits."""

    ks: list
    arc_rows: list = field(default_factory=list)
    moment_rows: list = field(default_factory=list)
    orders: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    heuristic: bool = False

    def arc_errors(self, arc: Arc) -> list:
        return [r["rel_err"] for r in self.arc_rows if (r["a"], r["b"]) == arc.as_tuple()]

    def moment_errors(self, l1: int, l2: int) -> list:
        return [r["rel_err"] for r in self.moment_rows if (r["l1"], r["l2"]) == (l1, l2)]

    def as_dict(self) -> dict:
        def enc(row):
            return {k: (v if not isinstance(v, complex) else [v.real, v.imag]) for k, v in row.items()}

        return {
            "ks": list(self.ks),
            "arcs": [enc(r) for r in self.arc_rows],
            "moments": [enc(r) for r in self.moment_rows],
            "orders": {str(k): v for k, v in self.orders.items()},
            "failures": {str(k): v for k, v in self.failures.items()},
            "heuristic": self.heuristic,
        }


def _rel_err(value: complex, limit: complex) -> float:
    if limit == 0:
        return abs(value)
    return abs(value - limit) / abs(limit)


@dataclass
class KStage:
    """Per-k products needed by a convergence table."""

    k: float
    moments: dict = field(default_factory=dict)
    spectrum: SpectralResult | None = None
    error: str | None = None


def run_k_stage(op: OperatorMatrix, moments=(), want_spectrum: bool = False,
                eigen_method: str = "dense", spectrum_provider: Callable | None = None) -> KStage:
    """Moments from the Op part, then (optionally) the eigenphases of I + Op.

    ``op`` is consumed: its matrix is turned into I + Op in place before the
    eigensolver runs, so that only one N x N array is alive at a time.
    """
    stage = KStage(op.k)
    if moments:
        stage.moments = trace_moments(op, moments)
    if want_spectrum:
        if not op.includes_identity:
            op.matrix[np.diag_indices_from(op.matrix)] += 1.0
            op.includes_identity = True
        stage.spectrum = (spectrum_provider(op, eigen_method) if spectrum_provider
                          else eigenphases(op, eigen_method))
    return stage


def assemble_table(ks, stages: dict, arcs=(), arc_limits=(), moments=(), mom_limits=None,
                   modulus_gate: float = DEFAULT_GATE, heuristic: bool = False) -> ConvergenceTable:
    """Rows, relative errors and fitted orders (last three k) from per-k stages."""
    table = ConvergenceTable(list(ks), heuristic=heuristic)
    mom_limits = mom_limits or {}
    for k in ks:
        st = stages.get(k)
        if st is None or st.error:
            table.failures[k] = st.error if st else "missing"
            continue
        for p in moments:
            if p not in st.moments:
                continue
            lim = mom_limits[p]
            lhs = st.moments[p]
            table.moment_rows.append({
                "k": k, "l1": p[0], "l2": p[1], "lhs": lhs, "normalized": lhs / k,
                "limit": lim.value, "rel_err": _rel_err(lhs / k, lim.value),
                "certified": lim.certified,
            })
        if st.spectrum is not None:
            for arc, lim in zip(arcs, arc_limits):
                c = counting_measure(st.spectrum, arc, modulus_gate)
                table.arc_rows.append({
                    "k": k, "a": arc.a, "b": arc.b, "count": c.gated, "count_raw": c.raw,
                    "normalized": c.gated / k, "limit": float(lim),
                    "rel_err": _rel_err(c.gated / k, float(lim)),
                    "unitarity_deviation": st.spectrum.unitarity_deviation,
                })
    last = list(ks)[-3:]
    for p in moments:
        rows = [r for r in table.moment_rows if (r["l1"], r["l2"]) == p and r["k"] in last]
        table.orders[p] = fit_order([r["k"] for r in rows], [r["rel_err"] for r in rows])
    for arc in arcs:
        rows = [r for r in table.arc_rows if (r["a"], r["b"]) == arc.as_tuple() and r["k"] in last]
        table.orders[arc.as_tuple()] = fit_order([r["k"] for r in rows], [r["rel_err"] for r in rows])
    return table


def convergence_experiment(
    model: FieldModel,
    mode: str,
    ks: Sequence[float],
    arcs: Sequence = (),
    moments: Sequence[tuple[int, int]] = (),
    cutoff: CutoffSpec = CutoffSpec(),
    rule: GridRule = GridRule(),
    grid: MeasureGrid = MeasureGrid(),
    modulus_gate: float = DEFAULT_GATE,
    operator_provider: Callable | None = None,
    spectrum_provider: Callable | None = None,
    eigen_method: str = "dense",
) -> ConvergenceTable:
    """Normalized counts k^{-1} mu_k(arc) and moments k^{-1} Tr[...] against their limits.

    Parameters
    ----------
    operator_provider : callable, optional
        ``(spec, k, cutoff, rule) -> OperatorMatrix`` for the Op part; lets
        callers plug in a cache.  Defaults to :func:`build_operator`.
    spectrum_provider : callable, optional
        ``(S, method) -> SpectralResult``; by default :func:`eigenphases`.

    Notes
    -----
    A failure at one k is recorded in ``table.failures`` and the remaining
    k values are still processed.
    """
    ks = [float(k) for k in ks]
    if len(ks) < 3 or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k list must be increasing with at least 3 values")
    arcs = [a if isinstance(a, Arc) else Arc(*a) for a in arcs]
    moments = [_check_pair(*p) for p in moments]
    spec = SymbolSpec(mode, model)

    t0 = time.perf_counter()
    arc_limits = mu_arcs(model, arcs, grid) if arcs else np.zeros(0)
    mom_limits = {p: mu_moment_estimate(model, *p, grid) for p in moments}
    timings = {"limits": time.perf_counter() - t0}

    build = operator_provider or (lambda sp, k, c, r: build_operator(sp, k, None, c, r))
    stages = {}
    for k in ks:
        t1 = time.perf_counter()
        try:
            op = build(spec, k, cutoff, rule)
            stages[k] = run_k_stage(op, moments, bool(arcs), eigen_method, spectrum_provider)
        except Exception as exc:  # keep going; the table reports the failure
            log.error("k=%g failed: %s", k, exc)
            stages[k] = KStage(k, error=f"{type(exc).__name__}: {exc}")
        timings[f"k{k:g}"] = time.perf_counter() - t1
    table = assemble_table(ks, stages, arcs, arc_limits, moments, mom_limits, modulus_gate, spec.heuristic)
    table.timings = timings
    return table


def spectrum_key(op_hash: str, method: str) -> str:
    """Cache key of the spectrum of a given matrix and solver."""
    return hashlib.sha256(f"{op_hash}:{method}:spectrum".encode()).hexdigest()


def spectrum_to_bytes(res: SpectralResult, key: str) -> bytes:
    meta = {"method": res.method, "cutoff": res.cutoff, "op_hash": res.spec_hash, "meta": res.meta}
    return encode_matrix(res.eigenvalues, res.k, key, meta)


def spectrum_from_bytes(raw: bytes, key: str | None = None) -> SpectralResult:
    data, k, _h, meta = decode_matrix(raw, key)
    if data.shape[1] != 1:
        raise ValueError("spectrum payload must be a single column")
    return SpectralResult.from_eigenvalues(data[:, 0], k, meta["op_hash"], meta["cutoff"],
                                           meta["method"], meta["meta"])
