"""Run reports and their export to CSV, JSON and plain plot-data columns.

Tables are stored as (columns, rows) so a saved ``report.json`` can be
re-exported without recomputation.  Floats are written with ``repr`` so
identical runs produce byte-identical files.
"""
from __future__ import annotations

import io
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .cache import atomic_write_bytes

FORMATS = ("csv", "json", "plot")
REPORT_NAME = "report.json"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Table:
    columns: list
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_cell(v) for v in row) + "\n")
        return buf.getvalue()


@dataclass
class Assertion:
    name: str
    passed: bool
    value: object = None
    threshold: object = None
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: value={self.value!r} threshold={self.threshold!r} {self.detail}".rstrip()


@dataclass
class RunReport:
    """Everything one run produced, in export-ready form."""

    config_hash: str
    config: dict
    versions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def add_assertion(self, name, passed, value=None, threshold=None, detail="") -> Assertion:
        a = Assertion(name, bool(passed), value, threshold, detail)
        self.assertions.append(a)
        return a

    def as_dict(self, include_timings: bool = True) -> dict:
        out = {
            "config_hash": self.config_hash,
            "config": self.config,
            "versions": self.versions,
            "stages": self.stages,
            "tables": {k: {"columns": t.columns, "rows": t.rows} for k, t in self.tables.items()},
            "plots": {k: {"columns": t.columns, "rows": t.rows} for k, t in self.plots.items()},
            "assertions": [a.__dict__ for a in self.assertions],
            "passed": self.passed,
        }
        if include_timings:
            out["timings"] = self.timings
            out["cache"] = self.cache
        return _jsonable(out)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        rep = cls(data["config_hash"], data.get("config", {}), data.get("versions", {}),
                  data.get("timings", {}), data.get("stages", {}), cache=data.get("cache", {}))
        rep.tables = {k: Table(v["columns"], v["rows"]) for k, v in data.get("tables", {}).items()}
        rep.plots = {k: Table(v["columns"], v["rows"]) for k, v in data.get("plots", {}).items()}
        rep.assertions = [Assertion(**a) for a in data.get("assertions", [])]
        return rep


def versions() -> dict:
    from . import __version__

    return {"magspec": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def load_report(path) -> RunReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_NAME
    return RunReport.from_dict(json.loads(path.read_text()))


def _plot_text(t: Table) -> str:
    lines = ["# " + " ".join(t.columns)]
    lines += [" ".join(_cell(v) for v in row) for row in t.rows]
    return "\n".join(lines) + "\n"


def planned_files(report: RunReport, formats=FORMATS) -> dict:
    """File name -> bytes for the requested formats."""
    files = {}
    if "csv" in formats:
        for name, t in report.tables.items():
            files[f"{name}.csv"] = t.to_csv().encode()
    if "plot" in formats:
        for name, t in report.plots.items():
            files[f"plot_{name}.dat"] = _plot_text(t).encode()
    if "json" in formats:
        text = json.dumps(report.as_dict(), indent=2, sort_keys=True, allow_nan=False)
        files[REPORT_NAME] = (text + "\n").encode()
    return files


def export_report(report: RunReport, out_dir, formats=FORMATS, force: bool = False) -> list:
    """Write report files atomically; refuses to overwrite unless ``force``."""
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown formats {sorted(bad)}")
    out = Path(out_dir)
    files = planned_files(report, formats)
    clash = [n for n in files if (out / n).exists()]
    if clash and not force:
        raise FileExistsError(f"refusing to overwrite {', '.join(sorted(clash))} in {out} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(files):
        atomic_write_bytes(out / name, files[name])
        written.append(out / name)
    return written
