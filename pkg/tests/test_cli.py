import csv

import pytest

import magspec.runner
from magspec.cli import main
from magspec.spectrum import SolverError

SMALL = """\
name: small
model:
  dimension: 2
  magnetic:
    - {kind: stream_gaussian, center: [0.0, 0.0], amplitude: 1.0, width: 1.0}
mode: leading_magnetic
k: [5, 10, 20]
arcs:
  - [-1.5, -1.0]
moments:
  - [1, 1]
measure: {n_omega: 16}
assertions: {order_band: [1.5, 2.5]}
"""

ZERO = """\
name: zero
model:
  dimension: 2
k: [5, 10, 20]
arcs:
  - [0.5, 1.0]
stages: [fields, measure, operator, spectrum]
"""


@pytest.fixture
def cfg(tmp_path):
    def write(text, name="c.yaml"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def _run(*argv):
    return main([str(a) for a in argv])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_zero_field_gives_zero_masses(cfg, tmp_path):
    out = tmp_path / "zero"
    assert _run("run", "--config", cfg(ZERO), "--out", out, "--cache-dir", tmp_path / "c") == 0
    assert all(float(r["mass"]) == 0.0 for r in _rows(out / "arcs.csv"))
    assert all(int(r["count"]) == 0 for r in _rows(out / "counts.csv"))


def test_malformed_config_exit_code(cfg, tmp_path, capsys):
    bad = cfg(SMALL.replace("width: 1.0}", "width: -1.0}"))
    assert _run("measure", "--config", bad, "--out", tmp_path / "o") == 2
    assert "width" in capsys.readouterr().err


def test_usage_error_exit_code():
    assert main(["frobnicate"]) == 2


def test_measure_only_emits_no_operator_files(cfg, tmp_path):
    out = tmp_path / "m"
    assert _run("measure", "--config", cfg(SMALL), "--out", out, "--no-cache") == 0
    names = {p.name for p in out.iterdir()}
    assert "arcs.csv" in names and "measure_moments.csv" in names
    assert not any(n.startswith(("operators", "phases", "moments.csv")) for n in names)


def test_full_run_schema_cache_and_determinism(cfg, tmp_path, capsys):
    c = cfg(SMALL)
    cache = tmp_path / "cache"
    assert _run("run", "--config", c, "--out", tmp_path / "a", "--cache-dir", cache) == 0
    first = capsys.readouterr().out
    assert "6 misses" in first and "[PASS] converge.moment_1_1.final" in first
    assert _run("run", "--config", c, "--out", tmp_path / "b", "--cache-dir", cache, "--jobs", 2) == 0
    assert "6 hits, 0 misses" in capsys.readouterr().out
    a, b = tmp_path / "a", tmp_path / "b"
    for p in a.iterdir():
        if p.suffix in (".csv", ".dat"):
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name
    moments = _rows(a / "moments.csv")
    assert list(moments[0])[:6] == ["k", "l1", "l2", "lhs", "limit", "rel_err"]
    phases = _rows(a / "phases_k20.csv")
    assert list(phases[0]) == ["index", "theta", "modulus"]
    from magspec.psido import SymbolSpec, resolution_N
    from magspec.config import load_config
    spec = SymbolSpec("leading_magnetic", load_config(c).model)
    assert len(phases) == resolution_N(spec, 20.0)
    hist = (a / "plot_phase_hist_k20.dat").read_text().splitlines()
    assert hist[0] == "# theta empirical_density limit_density"


def test_existing_output_needs_force(cfg, tmp_path):
    c = cfg(SMALL)
    out = tmp_path / "o"
    assert _run("fields", "check", "--config", c, "--out", out) == 0
    assert _run("fields", "check", "--config", c, "--out", out) == 2
    assert _run("fields", "check", "--config", c, "--out", out, "--force") == 0


def test_cutoff_change_misses_cache(cfg, tmp_path, capsys):
    cache = tmp_path / "cache"
    assert _run("operator", "build", "--config", cfg(SMALL), "--out", tmp_path / "a", "--cache-dir", cache) == 0
    capsys.readouterr()
    other = cfg(SMALL + "cutoff: {plateau: 1.2}\n", "d.yaml")
    assert _run("operator", "build", "--config", other, "--out", tmp_path / "b", "--cache-dir", cache) == 0
    assert "0 hits, 3 misses" in capsys.readouterr().out


def test_truncated_cache_entry_is_rebuilt(cfg, tmp_path, capsys):
    cache = tmp_path / "cache"
    c = cfg(SMALL)
    assert _run("operator", "build", "--config", c, "--out", tmp_path / "a", "--cache-dir", cache) == 0
    victim = sorted((cache / "operator").glob("*.bin"))[0]
    size = victim.stat().st_size
    victim.write_bytes(victim.read_bytes()[: size // 2])
    capsys.readouterr()
    assert _run("operator", "build", "--config", c, "--out", tmp_path / "b", "--cache-dir", cache) == 0
    assert "2 hits, 1 misses" in capsys.readouterr().out
    assert victim.stat().st_size == size


def test_assertion_failure_exit_code(cfg, tmp_path, capsys):
    strict = cfg(SMALL.replace("assertions: {order_band: [1.5, 2.5]}", "assertions: {trace_rel: 1.0e-30}"))
    assert _run("operator", "build", "--config", strict, "--out", tmp_path / "o", "--no-cache") == 3
    assert "[FAIL] operator.trace_k" in capsys.readouterr().out


def test_solver_failure_exit_code(cfg, tmp_path, monkeypatch):
    def boom(*_a, **_k):
        raise SolverError("forced")

    monkeypatch.setattr(magspec.runner, "eigenphases", boom)
    assert _run("spectrum", "--config", cfg(SMALL), "--out", tmp_path / "o", "--no-cache") == 4


def test_report_export(cfg, tmp_path):
    out = tmp_path / "m"
    assert _run("measure", "--config", cfg(SMALL), "--out", out, "--no-cache") == 0
    assert _run("report", "export", "--from", out, "--out", tmp_path / "e", "--format", "csv") == 0
    assert (tmp_path / "e" / "arcs.csv").read_bytes() == (out / "arcs.csv").read_bytes()
    assert not (tmp_path / "e" / "report.json").exists()
