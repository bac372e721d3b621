"""Stage orchestration for configuration-driven runs."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import ArtifactCache
from .config import ExperimentConfig, load_config
from .fields import curl_and_flux, jacobian_fd_check
from .limit_measure import Arc, measure_report, mu_arcs, mu_moment_estimate, mu_tilde_intervals
from .psido import (SymbolSpec, build_operator, operator_from_bytes, operator_hash, operator_to_bytes,
                    operator_trace, resolution_N, trace_formula_reference)
from .quadrature import QuadratureError
from .report import RunReport, Table, export_report, versions
from .spectrum import (KStage, SolverError, assemble_table, counting_measure, eigenphases, inverse_k_fit, monotone_with_slack,
                       rescaled_counting, spectrum_from_bytes, spectrum_key, spectrum_to_bytes, trace_moments)
from .xray import LineFrame, xray_M_batch, xray_X_batch

log = logging.getLogger(__name__)

HIST_BINS = 64


class StageFailure(RuntimeError):
    """A numerical stage failed for at least one k (solver or quadrature)."""


@dataclass
class _KResult:
    k: float
    N: int = 0
    s_max: float = math.nan
    trace: complex | None = None
    reference: complex | None = None
    norm_bound: float = math.nan
    stage: KStage = None
    timings: dict = field(default_factory=dict)


def _fmt_k(k: float) -> str:
    return f"{k:g}"


class Runner:
    """Executes the stages of one configuration."""

    def __init__(self, config: ExperimentConfig, cache: ArtifactCache | None = None, jobs: int = 1):
        self.cfg = config
        self.jobs = max(1, int(jobs))
        if cache is None:
            cache = ArtifactCache(config.cache_dir, enabled=config.cache)
        self.cache = cache
        self.report = RunReport(config.content_hash(), config.to_mapping(), versions())

    # -- entry point -------------------------------------------------------------------

    def run(self) -> RunReport:
        stages = self.cfg.stages
        t0 = time.perf_counter()
        if "fields" in stages:
            self._timed("fields", self._fields)
        if "xray" in stages:
            self._timed("xray", self._xray)
        if "measure" in stages:
            self._timed("measure", self._measure)
        if any(s in stages for s in ("operator", "spectrum", "converge")):
            self._timed("per_k", self._per_k)
        self.report.timings["total"] = time.perf_counter() - t0
        self.report.cache = {"hits": self.cache.stats.hits, "misses": self.cache.stats.misses,
                             "corrupt": self.cache.stats.corrupt,
                             "events": [list(e) for e in self.cache.stats.events]}
        return self.report

    def _timed(self, name, fn):
        t = time.perf_counter()
        fn()
        self.report.timings[name] = time.perf_counter() - t

    # -- fields -------------------------------------------------------------------------

    def _fields(self):
        m = self.cfg.model
        tol = self.cfg.assertions
        rows = []
        info = {"tolerances": {"flux_abs": tol["flux_abs"], "jacobian_rel": tol["jacobian_rel"]}}
        if m.dimension == 2:
            _, flux = curl_and_flux(m)
            rows.append(["flux", flux])
            info["flux"] = flux
            self.report.add_assertion("fields.zero_flux", abs(flux) <= tol["flux_abs"], abs(flux), tol["flux_abs"])
        if not m.magnetic_is_zero:
            rng = np.random.default_rng(self.cfg.seed)
            widths = max(t.width for t in m.magnetic_terms)
            pts = rng.uniform(-2 * widths, 2 * widths, size=(100, m.dimension))
            jac = jacobian_fd_check(m, pts)
            rows.append(["jacobian_fd_rel", jac])
            info["jacobian_fd_rel"] = jac
            self.report.add_assertion("fields.jacobian_fd", jac <= tol["jacobian_rel"], jac, tol["jacobian_rel"])
        rows.append(["rho", m.rho])
        info["rho"] = m.rho
        self.report.tables["fields"] = Table(["quantity", "value"], rows)
        self.report.stages["fields"] = info

    # -- xray ---------------------------------------------------------------------------

    def _xray(self):
        m, quad = self.cfg.model, self.cfg.quad
        d = m.dimension
        s = np.round(np.linspace(-3.0, 3.0, 61), 12)
        if d == 2:
            th = 2 * math.pi * np.arange(16) / 16
            omegas = np.stack([np.cos(th), np.sin(th)], axis=1)
        else:
            i = np.arange(16) + 0.5
            z = 1 - 2 * i / 16
            phi = math.pi * (1 + 5**0.5) * i
            r = np.sqrt(1 - z * z)
            omegas = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        frames = [LineFrame.from_omega(w) for w in omegas]
        om = np.repeat(omegas, s.size, axis=0)
        pts = np.concatenate([s[:, None] * f.basis[0] for f in frames])
        M = xray_M_batch(m, om, pts, quad)
        X = xray_X_batch(m, om, pts, quad)
        Mrev = xray_M_batch(m, -om, pts, quad)
        rev = float(np.max(np.abs(M + Mrev))) if M.size else 0.0
        comps = ["ox", "oy", "oz"][:d]
        rows = [[j // s.size, *om[j].tolist(), s[j % s.size], M[j], X[j]] for j in range(om.shape[0])]
        self.report.tables["xray"] = Table(["direction", *comps, "s", "M", "X"], rows)
        self.report.stages["xray"] = {"direction_reversal_max": rev,
                                      "tolerances": {"abs_tol": quad.abs_tol, "rel_tol": quad.rel_tol}}
        self.report.add_assertion("xray.direction_reversal", rev <= 1e-9, rev, 1e-9)

    # -- measure ------------------------------------------------------------------------

    def _measure(self):
        cfg = self.cfg
        rep = measure_report(cfg.model, cfg.arcs, cfg.moments, cfg.grid, cfg.quad)
        self.report.stages["measure"] = rep.as_dict()
        if cfg.arcs:
            self.report.tables["arcs"] = Table(
                ["a", "b", "mass"], [[a.a, a.b, mass] for a, mass in zip(rep.arcs, rep.masses)])
        if cfg.moments:
            self.report.tables["measure_moments"] = Table(
                ["l1", "l2", "value", "value_imag", "certified"],
                [[l1, l2, v.real, v.imag, rep.certified[(l1, l2)]] for (l1, l2), v in sorted(rep.moments.items())])
        if cfg.rescaled:
            masses = mu_tilde_intervals(cfg.model, cfg.rescaled, cfg.grid, cfg.quad)
            self.report.tables["rescaled"] = Table(
                ["lo", "hi", "mass"], [[lo, hi, float(mv)] for (lo, hi), mv in zip(cfg.rescaled, masses)])
            self.report.stages["measure"]["rescaled"] = [float(v) for v in masses]

    # -- operator / spectrum / convergence ---------------------------------------------------

    def _spec(self) -> SymbolSpec:
        return SymbolSpec(self.cfg.mode, self.cfg.model)

    def _one_k(self, k: float) -> _KResult:
        cfg = self.cfg
        spec = self._spec()
        stages = cfg.stages
        N = cfg.N if cfg.N is not None else resolution_N(spec, k, cfg.rule)
        key = operator_hash(spec, k, N, cfg.cutoff, cfg.rule)
        out = _KResult(k, N)
        state = {}

        def operator():
            if "op" not in state:
                t = time.perf_counter()
                state["op"] = self.cache.get_or_compute(
                    "operator", key,
                    lambda: build_operator(spec, k, N, cfg.cutoff, cfg.rule, cfg.quad),
                    operator_to_bytes,
                    lambda raw: operator_from_bytes(raw, key),
                )
                out.timings["operator"] = time.perf_counter() - t
            return state["op"]

        want_moments = "converge" in stages and cfg.moments
        want_spectrum = "spectrum" in stages or ("converge" in stages and (cfg.arcs or cfg.rescaled))
        stage = KStage(k)
        if "operator" in stages:
            op = operator()
            out.trace = operator_trace(op)
            out.reference = trace_formula_reference(spec, k, cfg.rule)
            out.norm_bound = op.norm_bound
            out.s_max = op.meta.get("s_max", math.nan)
        if want_moments:
            op = operator()
            out.s_max = op.meta.get("s_max", math.nan)
            stage.moments = trace_moments(op, cfg.moments)
        if want_spectrum:
            skey = spectrum_key(key, cfg.eigen_method)

            def solve():
                op = operator()
                op.matrix[np.diag_indices_from(op.matrix)] += 1.0
                op.includes_identity = True
                t = time.perf_counter()
                res = eigenphases(op, cfg.eigen_method)
                out.timings["eig"] = time.perf_counter() - t
                return res

            stage.spectrum = self.cache.get_or_compute(
                "spectrum", skey, solve,
                lambda r: spectrum_to_bytes(r, skey),
                lambda raw: spectrum_from_bytes(raw, skey),
            )
        state.clear()
        out.stage = stage
        return out

    def _per_k(self):
        cfg = self.cfg
        results, failures = {}, {}

        def task(k):
            try:
                return k, self._one_k(k), None
            except (SolverError, QuadratureError, np.linalg.LinAlgError, MemoryError) as exc:
                log.error("k=%g failed: %s", k, exc)
                return k, None, f"{type(exc).__name__}: {exc}"

        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                done = list(pool.map(task, cfg.ks))
        else:
            done = [task(k) for k in cfg.ks]
        for k, res, err in done:
            if err:
                failures[k] = err
            else:
                results[k] = res
                for name, t in res.timings.items():
                    self.report.timings[f"{name}_k{_fmt_k(k)}"] = t
        self.report.stages["failures"] = {_fmt_k(k): v for k, v in failures.items()}
        if failures:
            self.report.add_assertion("numerics.solver", False, len(failures), 0,
                                      "; ".join(f"k={_fmt_k(k)}: {v}" for k, v in failures.items()))
        stages = cfg.stages
        if "operator" in stages:
            self._emit_operator(results)
        if "spectrum" in stages:
            self._emit_spectrum(results)
        if "converge" in stages:
            self._emit_converge(results, failures)

    def _emit_operator(self, results):
        tol = self.cfg.assertions["trace_rel"]
        rows = []
        for k in sorted(results):
            r = results[k]
            ref = r.reference
            err = abs(r.trace - ref) / abs(ref) if ref else abs(r.trace)
            rows.append([k, r.N, r.s_max, r.trace.real, r.trace.imag, ref.real, ref.imag, err, r.norm_bound])
            self.report.add_assertion(f"operator.trace_k{_fmt_k(k)}", err <= tol, err, tol)
        self.report.tables["operators"] = Table(
            ["k", "N", "s_max", "trace", "trace_imag", "reference", "reference_imag", "rel_err", "norm_bound"], rows)
        self.report.stages["operator"] = {"tolerances": {"trace_rel": tol}, "cutoff": self.cfg.cutoff.as_dict(),
                                          "rule": self.cfg.rule.as_dict()}

    def _histogram(self, res, k):
        edges = -math.pi + 2 * math.pi * np.arange(HIST_BINS + 1) / HIST_BINS
        bins = [Arc(a, b) for a, b in zip(edges[:-1], edges[1:]) if not (a < 1e-12 and b > -1e-12)]
        width = 2 * math.pi / HIST_BINS
        ok = np.abs(res.moduli - 1.0) <= self.cfg.modulus_gate
        counts = [int(np.count_nonzero(b.contains(res.phases) & ok)) for b in bins]
        limit = None
        if self.cfg.mode == "leading_magnetic" and not self.cfg.model.magnetic_is_zero:
            limit = mu_arcs(self.cfg.model, bins, self.cfg.grid, self.cfg.quad)
        rows = []
        for i, b in enumerate(bins):
            rows.append([0.5 * (b.a + b.b), counts[i] / (k * width),
                         (float(limit[i]) / width) if limit is not None else None])
        return Table(["theta", "empirical_density", "limit_density"], rows)

    def _emit_spectrum(self, results):
        cfg = self.cfg
        count_rows, resc_rows = [], []
        for k in sorted(results):
            res = results[k].stage.spectrum
            name = f"phases_k{_fmt_k(k)}"
            self.report.tables[name] = Table(
                ["index", "theta", "modulus"],
                [[i, float(t), float(mo)] for i, (t, mo) in enumerate(zip(res.phases, res.moduli))])
            self.report.plots[f"phase_hist_k{_fmt_k(k)}"] = self._histogram(res, k)
            for arc in cfg.arcs:
                c = counting_measure(res, arc, cfg.modulus_gate)
                count_rows.append([k, arc.a, arc.b, c.gated, c.raw])
            for lo, hi in cfg.rescaled:
                n = rescaled_counting(res, k, (lo, hi))
                resc_rows.append([k, lo, hi, n, n / k])
            self.report.stages.setdefault("spectrum", {})[_fmt_k(k)] = {
                "N": res.N, "unitarity_deviation": res.unitarity_deviation,
                "max_abs_phase": float(np.max(np.abs(res.phases))) if res.N else 0.0,
                "method": res.method, "heuristic": bool(res.meta.get("heuristic", False)),
            }
        if cfg.arcs:
            self.report.tables["counts"] = Table(["k", "a", "b", "count", "count_raw"], count_rows)
        if cfg.rescaled:
            self.report.tables["rescaled_counts"] = Table(["k", "lo", "hi", "count", "normalized"], resc_rows)

    def _emit_converge(self, results, failures):
        cfg = self.cfg
        tol = cfg.assertions
        ks = list(cfg.ks)
        arc_limits = mu_arcs(cfg.model, cfg.arcs, cfg.grid, cfg.quad) if cfg.arcs else []
        mom_limits = {p: mu_moment_estimate(cfg.model, *p, cfg.grid) for p in cfg.moments}
        stages = {k: r.stage for k, r in results.items()}
        for k, err in failures.items():
            stages[k] = KStage(k, error=err)
        table = assemble_table(ks, stages, cfg.arcs, arc_limits, cfg.moments, mom_limits,
                               cfg.modulus_gate, cfg.mode == "electric_heuristic")
        self.report.stages["converge"] = table.as_dict()
        self.report.stages["converge"]["tolerances"] = {k: tol[k] for k in
                                                       ("moment_final_rel", "arc_final_rel", "order_band",
                                                        "monotone_slack", "rescaled_final_rel")}
        if cfg.moments:
            self.report.tables["moments"] = Table(
                ["k", "l1", "l2", "lhs", "limit", "rel_err", "lhs_imag", "limit_imag", "trace", "trace_imag"],
                [[r["k"], r["l1"], r["l2"], r["normalized"].real, r["limit"].real, r["rel_err"],
                  r["normalized"].imag, r["limit"].imag, r["lhs"].real, r["lhs"].imag] for r in table.moment_rows])
        if cfg.arcs:
            self.report.tables["convergence"] = Table(
                ["k", "a", "b", "count", "count_raw", "normalized", "limit", "rel_err"],
                [[r["k"], r["a"], r["b"], r["count"], r["count_raw"], r["normalized"], r["limit"], r["rel_err"]]
                 for r in table.arc_rows])
        lo, hi = tol["order_band"]
        for p in cfg.moments:
            rows = [r for r in table.moment_rows if (r["l1"], r["l2"]) == p]
            errs = [r["rel_err"] for r in rows]
            self.report.plots[f"error_moment_{p[0]}_{p[1]}"] = Table(["k", "rel_err"], [[r["k"], r["rel_err"]] for r in rows])
            if not mom_limits[p].certified or not errs:
                continue
            name = f"converge.moment_{p[0]}_{p[1]}"
            self.report.add_assertion(f"{name}.final", errs[-1] <= tol["moment_final_rel"], errs[-1], tol["moment_final_rel"])
            self.report.add_assertion(f"{name}.monotone", monotone_with_slack(errs, tol["monotone_slack"]), errs,
                                      tol["monotone_slack"])
            order = table.orders.get(p)
            self.report.add_assertion(f"{name}.order", order is not None and lo <= order <= hi, order, [lo, hi])
        for arc in cfg.arcs:
            rows = [r for r in table.arc_rows if (r["a"], r["b"]) == arc.as_tuple()]
            tag = f"arc_{arc.a:g}_{arc.b:g}"
            self.report.plots[f"error_{tag}"] = Table(["k", "rel_err"], [[r["k"], r["rel_err"]] for r in rows])
            if rows and cfg.mode == "leading_magnetic":
                e = rows[-1]["rel_err"]
                self.report.add_assertion(f"converge.{tag}.final", e <= tol["arc_final_rel"], e, tol["arc_final_rel"])
        if cfg.rescaled and results:
            limits = mu_tilde_intervals(cfg.model, cfg.rescaled, cfg.grid, cfg.quad)
            kmax = max(results)
            res = results[kmax].stage.spectrum
            for (a, b), lim in zip(cfg.rescaled, limits):
                n = rescaled_counting(res, kmax, (a, b)) / kmax
                e = abs(n - lim) / lim if lim else abs(n)
                self.report.add_assertion(f"converge.rescaled_{a:g}_{b:g}.final", e <= tol["rescaled_final_rel"], e,
                                          tol["rescaled_final_rel"], "heuristic symbol")
        if cfg.mode == "electric_heuristic" and len(results) >= 2:
            kk = sorted(results)
            mx = [float(np.max(np.abs(results[k].stage.spectrum.phases))) for k in kk]
            C, dev = inverse_k_fit(kk, mx)
            self.report.stages["converge"]["max_phase_fit"] = {"C": C, "deviation": dev, "max_phase": mx}
            self.report.add_assertion("converge.max_phase_inverse_k", dev <= 0.2, dev, 0.2, "heuristic symbol")


def run_config(config, out_dir=None, cache: ArtifactCache | None = None, jobs: int = 1,
               force: bool = False, export: bool = True) -> RunReport:
    """Run every stage of a configuration and export the report.

    Parameters
    ----------
    config : ExperimentConfig or path-like
    out_dir : path-like, optional
        Overrides the configured output directory.
    export : bool
        Write CSV, JSON and plot-data files (atomically) when True.
    """
    if not isinstance(config, ExperimentConfig):
        config = load_config(config)
    report = Runner(config, cache, jobs).run()
    if export:
        export_report(report, Path(out_dir or config.output_dir), force=force)
    return report
