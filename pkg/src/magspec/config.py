"""Experiment configuration documents (YAML).

A document declares the field model, the symbol mode, the k list, grid and
cutoff parameters, the arcs and moments to study, and which stages to run.
Parsing validates every field and reports the offending key together with
its line in the source document.  :meth:`ExperimentConfig.to_mapping`
emits a canonical mapping with all defaults filled in; parse -> emit ->
parse is the identity, and the content hash is taken over the canonical
JSON form of the numerical part (output location and cache toggles are
excluded so that moving a run does not change its identity).
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .fields import FieldError, FieldModel, term_from_mapping, term_to_mapping
from .limit_measure import Arc, MeasureGrid
from .psido import MODES, CutoffSpec, GridRule
from .quadrature import QuadratureSpec

STAGES = ("fields", "xray", "measure", "operator", "spectrum", "converge")
EIGEN_METHODS = ("dense", "circulant")
DEFAULT_ASSERTIONS = {
    "flux_abs": 1e-10,
    "jacobian_rel": 1e-6,
    "trace_rel": 1e-6,
    "moment_final_rel": 0.05,
    "arc_final_rel": 0.10,
    "rescaled_final_rel": 0.15,
    "order_band": [0.6, 1.4],
    "monotone_slack": 1,
}
_PI_EXPR = re.compile(r"^\s*(-)?\s*(\d+(?:\.\d*)?)?\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


class ConfigError(ValueError):
    """Invalid configuration; carries the dotted key path and source line."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = f" (line {line})" if line is not None else ""
        key = f"{path}: " if path else ""
        super().__init__(f"{key}{message}{where}")


def _number(value, path):
    """Float from a number or a multiple of pi written like '3*pi/4'."""
    if isinstance(value, bool):
        raise ConfigError("expected a number, got a boolean", path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_EXPR.match(value)
        if m:
            sign = -1.0 if m.group(1) else 1.0
            num = float(m.group(2)) if m.group(2) else 1.0
            den = float(m.group(3)) if m.group(3) else 1.0
            return sign * num * math.pi / den
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"expected a number, got {value!r}", path)


def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    return int(value)


def _line_index(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers from a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, val_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            out[path] = key_node.start_mark.line + 1
            _line_index(val_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = item.start_mark.line + 1
            _line_index(item, path, out)
    return out


def _lookup_line(lines: dict, path: str):
    while path:
        if path in lines:
            return lines[path]
        cut = max(path.rfind("."), path.rfind("["))
        path = path[:cut] if cut > 0 else ""
    return None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description."""

    name: str
    model: FieldModel
    mode: str = "leading_magnetic"
    ks: tuple = (20.0, 40.0, 80.0)
    N: int | None = None
    rule: GridRule = field(default_factory=GridRule)
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    arcs: tuple = ()
    moments: tuple = ()
    rescaled: tuple = ()
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    grid: MeasureGrid = field(default_factory=MeasureGrid)
    stages: tuple = STAGES
    modulus_gate: float = 0.2
    eigen_method: str = "dense"
    output_dir: str = "out"
    cache: bool = True
    cache_dir: str | None = None
    seed: int = 0
    assertions: dict = field(default_factory=lambda: dict(DEFAULT_ASSERTIONS))

    # -- serialization -------------------------------------------------------

    def to_mapping(self) -> dict:
        """Canonical mapping with every default spelled out."""
        return {
            "name": self.name,
            "model": {
                "dimension": self.model.dimension,
                "magnetic": [term_to_mapping(t) for t in self.model.magnetic_terms],
                "electric": [term_to_mapping(t) for t in self.model.electric_terms],
            },
            "mode": self.mode,
            "k": list(self.ks),
            "resolution": {"N": self.N, **self.rule.as_dict()},
            "cutoff": self.cutoff.as_dict(),
            "arcs": [list(a.as_tuple()) for a in self.arcs],
            "moments": [list(p) for p in self.moments],
            "rescaled_intervals": [list(iv) for iv in self.rescaled],
            "quadrature": {"abs_tol": self.quad.abs_tol, "rel_tol": self.quad.rel_tol,
                           "max_evals": self.quad.max_evals, "tail_factor": self.quad.tail_factor},
            "measure": self.grid.as_dict(),
            "stages": list(self.stages),
            "modulus_gate": self.modulus_gate,
            "eigen_method": self.eigen_method,
            "output": {"dir": self.output_dir, "cache": self.cache, "cache_dir": self.cache_dir},
            "seed": self.seed,
            "assertions": dict(self.assertions),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False, default_flow_style=None)

    def content_hash(self) -> str:
        data = self.to_mapping()
        data.pop("output")
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_stages(self, stages) -> "ExperimentConfig":
        return replace(self, stages=tuple(stages))


def _model(data, lines) -> FieldModel:
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", "model", _lookup_line(lines, "model"))
    dim = data.get("dimension", 2)
    if dim not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {dim!r}", "model.dimension",
                          _lookup_line(lines, "model.dimension"))
    terms = {}
    for key, magnetic in (("magnetic", True), ("electric", False)):
        items = data.get(key) or []
        if not isinstance(items, list):
            raise ConfigError("expected a list of terms", f"model.{key}", _lookup_line(lines, f"model.{key}"))
        built = []
        for i, item in enumerate(items):
            path = f"model.{key}[{i}]"
            if not isinstance(item, dict):
                raise ConfigError("expected a mapping", path, _lookup_line(lines, path))
            item = dict(item)
            for num_key in ("amplitude", "width", "exponent"):
                if num_key in item and item[num_key] is not None:
                    item[num_key] = _number(item[num_key], f"{path}.{num_key}")
            try:
                built.append(term_from_mapping(item, magnetic, dim))
            except FieldError as exc:
                bad = next((f for f in ("width", "exponent", "amplitude", "kind", "profile", "center", "axis")
                            if f in str(exc)), None)
                sub = f"{path}.{bad}" if bad else path
                raise ConfigError(str(exc), sub, _lookup_line(lines, sub)) from None
        terms[key] = built
    unknown = set(data) - {"dimension", "magnetic", "electric", "name"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "model", _lookup_line(lines, "model"))
    try:
        return FieldModel(dim, tuple(terms["magnetic"]), tuple(terms["electric"]), str(data.get("name", "")))
    except FieldError as exc:
        raise ConfigError(str(exc), "model", _lookup_line(lines, "model")) from None


_TOP_KEYS = {"name", "model", "mode", "k", "resolution", "cutoff", "arcs", "moments", "rescaled_intervals",
             "quadrature", "measure", "stages", "modulus_gate", "eigen_method", "output", "seed", "assertions"}


def config_from_mapping(data: dict, lines: dict | None = None, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a plain mapping into an :class:`ExperimentConfig`."""
    lines = lines or {}

    def err(msg, path):
        return ConfigError(msg, path, _lookup_line(lines, path))

    if not isinstance(data, dict):
        raise ConfigError("configuration document must be a mapping", "", 1)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise err(f"unknown key {key!r}", key)
    if "model" not in data:
        raise ConfigError("missing required key 'model'", "model", 1)
    model = _model(data["model"], lines)

    mode = data.get("mode", "leading_magnetic")
    if mode not in MODES:
        raise err(f"mode must be one of {MODES}, got {mode!r}", "mode")
    if mode != "test" and model.dimension != 2 and any(s in data.get("stages", STAGES) for s in ("operator", "spectrum", "converge")):
        raise err("operator stages need a d = 2 model", "stages")

    ks_raw = data.get("k", [20, 40, 80])
    if not isinstance(ks_raw, list) or not ks_raw:
        raise err("k must be a nonempty list", "k")
    ks = tuple(_number(v, f"k[{i}]") for i, v in enumerate(ks_raw))
    if any(not (v > 0 and math.isfinite(v)) for v in ks):
        raise err("k values must be positive", "k")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise err("k values must be strictly increasing", "k")

    res = dict(data.get("resolution") or {})
    N = res.pop("N", None)
    if N is not None:
        N = _int(N, "resolution.N")
        if N < 4 or N % 2:
            raise err("N must be an even integer >= 4", "resolution.N")
    try:
        rule = GridRule(**{k: (_number(v, f"resolution.{k}") if k not in ("cheb_max",) else _int(v, f"resolution.{k}"))
                           for k, v in res.items()})
    except TypeError as exc:
        raise err(str(exc), "resolution") from None
    except ValueError as exc:
        raise err(str(exc), "resolution") from None

    cut = dict(data.get("cutoff") or {})
    try:
        cutoff = CutoffSpec(
            plateau=_number(cut.pop("plateau", math.pi / 2), "cutoff.plateau"),
            support=_number(cut.pop("support", 3 * math.pi / 4), "cutoff.support"),
            enabled=bool(cut.pop("enabled", True)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise err(str(exc), "cutoff") from None
    if cut:
        raise err(f"unknown keys {sorted(cut)}", "cutoff")

    arcs = []
    for i, a in enumerate(data.get("arcs") or []):
        path = f"arcs[{i}]"
        if not isinstance(a, list) or len(a) != 2:
            raise err("arc must be a pair [a, b]", path)
        try:
            arcs.append(Arc(_number(a[0], path), _number(a[1], path)))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise err(str(exc), path) from None

    moments = []
    for i, p in enumerate(data.get("moments") or []):
        path = f"moments[{i}]"
        if not isinstance(p, list) or len(p) != 2:
            raise err("moment must be a pair [l1, l2]", path)
        l1, l2 = _int(p[0], path), _int(p[1], path)
        if l1 < 0 or l2 < 0 or l1 + l2 < 1:
            raise err("moment indices must be nonnegative with l1 + l2 >= 1", path)
        moments.append((l1, l2))

    rescaled = []
    for i, iv in enumerate(data.get("rescaled_intervals") or []):
        path = f"rescaled_intervals[{i}]"
        if not isinstance(iv, list) or len(iv) != 2:
            raise err("interval must be a pair [lo, hi]", path)
        lo, hi = _number(iv[0], path), _number(iv[1], path)
        if not lo < hi or lo <= 0 <= hi:
            raise err("interval must be nonempty and separated from 0", path)
        rescaled.append((lo, hi))
    if rescaled and not (mode == "electric_heuristic" and model.magnetic_is_zero):
        raise err("rescaled intervals need mode electric_heuristic and A = 0", "rescaled_intervals")

    q = dict(data.get("quadrature") or {})
    try:
        quad = QuadratureSpec(
            abs_tol=_number(q.pop("abs_tol", 1e-11), "quadrature.abs_tol"),
            rel_tol=_number(q.pop("rel_tol", 1e-11), "quadrature.rel_tol"),
            max_evals=_int(q.pop("max_evals", 1_000_000), "quadrature.max_evals"),
            tail_factor=_number(q.pop("tail_factor", 8.0), "quadrature.tail_factor"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise err(str(exc), "quadrature") from None
    if q:
        raise err(f"unknown keys {sorted(q)}", "quadrature")

    m = dict(data.get("measure") or {})
    try:
        grid = MeasureGrid(**m)
    except (TypeError, ValueError) as exc:
        raise err(str(exc), "measure") from None

    stages = data.get("stages", list(STAGES))
    if not isinstance(stages, list) or any(s not in STAGES for s in stages):
        raise err(f"stages must be a list drawn from {STAGES}", "stages")

    gate = _number(data.get("modulus_gate", 0.2), "modulus_gate")
    if not gate > 0:
        raise err("modulus_gate must be positive", "modulus_gate")
    method = data.get("eigen_method", "dense")
    if method not in EIGEN_METHODS:
        raise err(f"eigen_method must be one of {EIGEN_METHODS}", "eigen_method")

    out = dict(data.get("output") or {})
    out_dir = str(out.pop("dir", "out"))
    cache = bool(out.pop("cache", True))
    cache_dir = out.pop("cache_dir", None)
    if out:
        raise err(f"unknown keys {sorted(out)}", "output")

    seed = _int(data.get("seed", 0), "seed")
    assertions = dict(DEFAULT_ASSERTIONS)
    for key, val in (data.get("assertions") or {}).items():
        if key not in DEFAULT_ASSERTIONS:
            raise err(f"unknown assertion {key!r}", f"assertions.{key}")
        if key == "order_band":
            if not isinstance(val, list) or len(val) != 2:
                raise err("order_band must be [lo, hi]", "assertions.order_band")
            val = [_number(v, "assertions.order_band") for v in val]
        elif key == "monotone_slack":
            val = _int(val, f"assertions.{key}")
        else:
            val = _number(val, f"assertions.{key}")
        assertions[key] = val

    return ExperimentConfig(
        name=str(data.get("name", "experiment")), model=model, mode=mode, ks=ks, N=N, rule=rule,
        cutoff=cutoff, arcs=tuple(arcs), moments=tuple(moments), rescaled=tuple(rescaled), quad=quad,
        grid=grid, stages=tuple(stages), modulus_gate=gate, eigen_method=method, output_dir=out_dir,
        cache=cache, cache_dir=None if cache_dir is None else str(cache_dir), seed=seed,
        assertions=assertions,
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse a YAML document."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", "", mark.line + 1 if mark else None) from None
    lines = _line_index(node) if node is not None else {}
    return config_from_mapping(data if data is not None else {}, lines)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def bundled_config_path(name: str) -> Path:
    """Path of a configuration shipped with the package."""
    p = Path(__file__).parent / "configs" / f"{name}.yaml"
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p
