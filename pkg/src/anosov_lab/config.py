"""Experiment config files: strict TOML schema, parsing and rendering.

A config is a TOML document::

    output_dir = "reports"        # optional
    parallel_jobs = 1             # experiments run concurrently
    warn_only_inconclusive = false
    [tolerances]                  # global overrides, per-experiment wins
    equality_tol = 1e-3

    [[experiment]]
    name = "inequality-h1"
    kind = "inequality"
    T = 50.0
    seed = 0
    [experiment.model]
    kind = "hyperbolic"
    c = 1.0
    [experiment.grid]
    count = 20

Unknown keys anywhere are an error naming the dotted key.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import tomli
import tomlkit

from .errors import ParseError, ValidationError
from .metric_models import CHART_REGISTRY, WARPING_REGISTRY
from .rigidity_experiments import CURVE_FAMILIES, DEFAULT_TOLERANCES, EXPERIMENTS, ExperimentSpec

TOP_KEYS = {"output_dir", "parallel_jobs", "warn_only_inconclusive", "tolerances", "experiment"}
EXPERIMENT_KEYS = {"name", "kind", "T", "seed", "curvature_grid", "model", "grid", "tolerances", "options"}
GRID_KEYS = {"count", "box", "include"}
INCLUDE_KEYS = {"p", "v", "angle"}
BUMP_KEYS = {"center", "radius", "amplitude"}

MODEL_KEYS = {
    "hyperbolic": {"c", "dim"},
    "conformal": {"c", "eps", "bump"},
    "warped": {"f", "rate", "weight"},
    "sphere": set(),
    "custom": {"g", "c", "dim", "radius"},
}

_COMMON_OPTIONS = {"parallel_points"}
OPTION_KEYS = {
    "inequality": {"box", "fit_window"},
    "rigidity_probe": {"box", "fit_window", "eps_values"},
    "exponent_rigidity": {"box", "fit_window"},
    "distance_derivative": {"p", "angle", "steps", "families"},
    "stable_leaf": {"p", "offsets", "leaf", "check_time", "fit_window"},
}


@dataclass
class RunConfig:
    experiments: List[ExperimentSpec] = field(default_factory=list)
    output_dir: Optional[str] = None
    parallel_jobs: int = 1
    tolerances: Dict[str, float] = field(default_factory=dict)
    warn_only_inconclusive: bool = False

    def effective(self, spec: ExperimentSpec) -> ExperimentSpec:
        """Copy of ``spec`` with the global tolerances merged underneath."""
        out = copy.deepcopy(spec)
        out.tolerances = {**self.tolerances, **spec.tolerances}
        return out


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def _unknown(mapping, allowed, where):
    for k in mapping:
        if k not in allowed:
            raise ValidationError(f"unknown key {where + k!r}", key=where + k)


def _table(value, where):
    if not isinstance(value, dict):
        raise ValidationError(f"{where!r} must be a table", key=where)
    return value


def _number(value, where, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where!r} must be a number", key=where)
    value = float(value)
    if positive and not value > 0:
        raise ValidationError(f"{where!r} must be positive", key=where)
    return value


def _integer(value, where, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{where!r} must be an integer", key=where)
    if minimum is not None and value < minimum:
        raise ValidationError(f"{where!r} must be >= {minimum}", key=where)
    return int(value)


def _vector(value, where, length=None):
    if not isinstance(value, list) or (length is not None and len(value) != length):
        n = "" if length is None else f" of length {length}"
        raise ValidationError(f"{where!r} must be a list of numbers{n}", key=where)
    return [_number(x, f"{where}[{i}]") for i, x in enumerate(value)]


def _box(value, where):
    if not isinstance(value, list) or not value:
        raise ValidationError(f"{where!r} must be a list of [lo, hi] pairs", key=where)
    out = []
    for i, pair in enumerate(value):
        lo, hi = _vector(pair, f"{where}[{i}]", 2)
        if not lo < hi:
            raise ValidationError(f"{where}[{i}] needs lo < hi", key=f"{where}[{i}]")
        out.append([lo, hi])
    return out


def _model(raw, where):
    raw = _table(raw, where)
    kind = raw.get("kind")
    if kind not in MODEL_KEYS:
        raise ValidationError(f"unknown model kind {kind!r} at {where + '.kind'!r}", key=where + ".kind")
    _unknown(raw, MODEL_KEYS[kind] | {"kind"}, where + ".")
    out = {"kind": kind}
    for k in ("c", "eps", "rate", "weight", "radius"):
        if k in raw:
            out[k] = _number(raw[k], f"{where}.{k}", positive=(k != "eps"))
    if "dim" in raw:
        out["dim"] = _integer(raw["dim"], where + ".dim", minimum=2)
    if "f" in raw:
        if raw["f"] not in WARPING_REGISTRY:
            raise ValidationError(f"unknown warping function {raw['f']!r}", key=where + ".f")
        out["f"] = raw["f"]
    if "g" in raw:
        if raw["g"] not in CHART_REGISTRY:
            raise ValidationError(f"unknown chart metric {raw['g']!r}", key=where + ".g")
        out["g"] = raw["g"]
    if "bump" in raw:
        b = _table(raw["bump"], where + ".bump")
        _unknown(b, BUMP_KEYS, where + ".bump.")
        bump = {}
        if "center" in b:
            bump["center"] = _vector(b["center"], where + ".bump.center", 2)
        if "radius" in b:
            bump["radius"] = _number(b["radius"], where + ".bump.radius", positive=True)
        if "amplitude" in b:
            bump["amplitude"] = _number(b["amplitude"], where + ".bump.amplitude")
        out["bump"] = bump
    return out


def _grid(raw, where):
    raw = _table(raw, where)
    _unknown(raw, GRID_KEYS, where + ".")
    out = {}
    if "count" in raw:
        out["count"] = _integer(raw["count"], where + ".count", minimum=0)
    if "box" in raw:
        out["box"] = _box(raw["box"], where + ".box")
    if "include" in raw:
        if not isinstance(raw["include"], list):
            raise ValidationError(f"{where + '.include'!r} must be a list of tables", key=where + ".include")
        inc = []
        for i, e in enumerate(raw["include"]):
            w = f"{where}.include[{i}]"
            e = _table(e, w)
            _unknown(e, INCLUDE_KEYS, w + ".")
            if "p" not in e:
                raise ValidationError(f"{w!r} needs a base point 'p'", key=w + ".p")
            if "v" in e and "angle" in e:
                raise ValidationError(f"{w!r} takes 'v' or 'angle', not both", key=w)
            item = {"p": _vector(e["p"], w + ".p")}
            if "v" in e:
                item["v"] = _vector(e["v"], w + ".v", len(item["p"]))
            if "angle" in e:
                item["angle"] = _number(e["angle"], w + ".angle")
            inc.append(item)
        out["include"] = inc
    return out


def _tolerances(raw, where):
    raw = _table(raw, where)
    _unknown(raw, set(DEFAULT_TOLERANCES), where + ".")
    return {k: _number(v, f"{where}.{k}", positive=True) for k, v in raw.items()}


def _options(raw, kind, where):
    raw = _table(raw, where)
    _unknown(raw, OPTION_KEYS[kind] | _COMMON_OPTIONS, where + ".")
    out = {}
    for k, v in raw.items():
        w = f"{where}.{k}"
        if k == "box":
            out[k] = _box(v, w)
        elif k == "fit_window":
            lo, hi = _vector(v, w, 2)
            if not 0 <= lo < hi:
                raise ValidationError(f"{w!r} needs 0 <= lo < hi", key=w)
            out[k] = [lo, hi]
        elif k in ("eps_values", "steps", "offsets"):
            out[k] = _vector(v, w)
            if not out[k]:
                raise ValidationError(f"{w!r} must not be empty", key=w)
            if k == "steps" and min(out[k]) <= 0:
                raise ValidationError(f"{w!r} must be positive", key=w)
        elif k == "p":
            out[k] = _vector(v, w)
        elif k in ("angle",):
            out[k] = _number(v, w)
        elif k == "check_time":
            out[k] = _number(v, w, positive=True)
        elif k == "parallel_points":
            out[k] = _integer(v, w, minimum=1)
        elif k == "leaf":
            if v not in ("stable", "unstable"):
                raise ValidationError(f"{w!r} must be 'stable' or 'unstable'", key=w)
            out[k] = v
        elif k == "families":
            if not isinstance(v, list) or any(f not in CURVE_FAMILIES for f in v):
                raise ValidationError(f"{w!r} must list families from {sorted(CURVE_FAMILIES)}", key=w)
            out[k] = list(v)
    return out


def _experiment(raw, index):
    where = f"experiment[{index}]"
    raw = _table(raw, where)
    _unknown(raw, EXPERIMENT_KEYS, where + ".")
    for req in ("name", "kind", "model"):
        if req not in raw:
            raise ValidationError(f"{where!r} is missing {req!r}", key=f"{where}.{req}")
    name = raw["name"]
    if not isinstance(name, str) or not name or any(ch in name for ch in "/\\"):
        raise ValidationError(f"{where + '.name'!r} must be a non-empty string without slashes",
                              key=where + ".name")
    kind = raw["kind"]
    if kind not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment kind {kind!r}; expected one of {sorted(EXPERIMENTS)}",
                              key=where + ".kind")
    spec = ExperimentSpec(name=name, kind=kind, model=_model(raw["model"], where + ".model"))
    if "T" in raw:
        spec.T = _number(raw["T"], where + ".T", positive=True)
    if "seed" in raw:
        spec.seed = _integer(raw["seed"], where + ".seed", minimum=0)
    if "curvature_grid" in raw:
        spec.curvature_grid = _integer(raw["curvature_grid"], where + ".curvature_grid", minimum=2)
    if "grid" in raw:
        spec.grid = _grid(raw["grid"], where + ".grid")
    if "tolerances" in raw:
        spec.tolerances = _tolerances(raw["tolerances"], where + ".tolerances")
    if "options" in raw:
        spec.options = _options(raw["options"], kind, where + ".options")
    return spec


def validate(doc: dict) -> RunConfig:
    """Turn a decoded TOML mapping into a RunConfig or raise ValidationError."""
    _unknown(doc, TOP_KEYS, "")
    cfg = RunConfig()
    if "output_dir" in doc:
        if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
            raise ValidationError("'output_dir' must be a non-empty string", key="output_dir")
        cfg.output_dir = doc["output_dir"]
    if "parallel_jobs" in doc:
        cfg.parallel_jobs = _integer(doc["parallel_jobs"], "parallel_jobs", minimum=1)
    if "warn_only_inconclusive" in doc:
        if not isinstance(doc["warn_only_inconclusive"], bool):
            raise ValidationError("'warn_only_inconclusive' must be a boolean", key="warn_only_inconclusive")
        cfg.warn_only_inconclusive = doc["warn_only_inconclusive"]
    if "tolerances" in doc:
        cfg.tolerances = _tolerances(doc["tolerances"], "tolerances")
    raw = doc.get("experiment", [])
    if not isinstance(raw, list):
        raise ValidationError("'experiment' must be an array of tables ([[experiment]])", key="experiment")
    seen = set()
    for i, entry in enumerate(raw):
        spec = _experiment(entry, i)
        if spec.name in seen:
            raise ValidationError(f"duplicate name {spec.name!r} at experiment[{i}]", key=f"experiment[{i}].name")
        seen.add(spec.name)
        cfg.experiments.append(spec)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(msg, line=getattr(exc, "lineno", None), column=getattr(exc, "colno", None)) from exc
    return validate(doc)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _inline_list(items):
    arr = tomlkit.array()
    for it in items:
        if isinstance(it, dict):
            t = tomlkit.inline_table()
            t.update(it)
            arr.append(t)
        elif isinstance(it, list):
            arr.append(_inline_list(it))
        else:
            arr.append(it)
    return arr


def _render_table(mapping):
    t = tomlkit.table()
    for k, v in mapping.items():
        if isinstance(v, dict):
            t.add(k, _render_table(v))
        elif isinstance(v, list):
            t.add(k, _inline_list(v))
        else:
            t.add(k, v)
    return t


def render(config: RunConfig) -> str:
    """TOML text such that ``parse_config(render(c)) == c``."""
    doc = tomlkit.document()
    if config.output_dir is not None:
        doc.add("output_dir", config.output_dir)
    doc.add("parallel_jobs", config.parallel_jobs)
    doc.add("warn_only_inconclusive", config.warn_only_inconclusive)
    if config.tolerances:
        doc.add("tolerances", _render_table(config.tolerances))
    if config.experiments:
        aot = tomlkit.aot()
        for spec in config.experiments:
            t = tomlkit.table()
            t.add("name", spec.name)
            t.add("kind", spec.kind)
            t.add("T", float(spec.T))
            t.add("seed", int(spec.seed))
            t.add("curvature_grid", int(spec.curvature_grid))
            for key in ("model", "grid", "tolerances", "options"):
                value = getattr(spec, key)
                if value or key == "model":
                    t.add(key, _render_table(value))
            aot.append(t)
        doc.add("experiment", aot)
    return tomlkit.dumps(doc)
