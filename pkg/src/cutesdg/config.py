"""Run configuration: TOML files with a fixed, validated schema.

Example::

    [mesh]
    domain = [-1.0, 1.0, -1.0, 1.0]   # x0, x1, y0, y1
    nx = 16
    ny = 16
    N = 4

    [[curves]]
    type = "circle"
    center = [0.0, 0.0]
    radius = 0.331
    tag = "wall"

    # or a closed chain of line and arc records (angles in radians)
    # [[curves]]
    # type = "piecewise"
    # segments = [
    #   { kind = "line", start = [0.0, 0.0], end = [1.0, 0.0] },
    #   { kind = "arc", center = [1.0, 0.5], radius = 0.5, start_angle = -1.5707963267948966,
    #     end_angle = 1.5707963267948966 },
    #   { kind = "line", start = [1.0, 1.0], end = [0.0, 1.0] },
    #   { kind = "line", start = [0.0, 1.0], end = [0.0, 0.0] },
    # ]

    [law]
    name = "swe"            # or "euler"
    g = 1.0

    [scheme]
    flux = "ES"             # or "EC"

    [boundary]
    default = "wall"        # applies to every tag not listed
    left = { kind = "freestream", rho = 50.0, u = 1.5, v = 0.0, p = 50.0 }

    [initial]
    h = "where(y >= 0.5, 3.0, 2.0)"   # expressions in x, y; or preset = "mms"
    u = 0.0
    v = 0.0

    [srd]
    enabled = true
    threshold = 0.5

    [time]
    dt0 = 1e-4
    t_end = 1.0

    [output]
    dir = "out"
    snapshot_every = 100

Unknown keys are rejected. Errors name the key path and, when it can be
found, the line of the offending key.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli


class ConfigError(ValueError):
    def __init__(self, message, path=(), line=None):
        where = ".".join(str(p) for p in path)
        text = message
        if where:
            text = f"{where}: {text}"
        if line is not None:
            text = f"line {line}: {text}"
        super().__init__(text)
        self.path = tuple(path)
        self.line = line


_NUM = (int, float)

# key -> (type(s), required, default)
_SCHEMA = {
    "mesh": {
        "domain": (list, True, None),
        "nx": (int, True, None),
        "ny": (int, True, None),
        "N": (int, True, None),
        "curved_face_points": (int, False, None),
    },
    "law": {
        "name": (str, True, None),
        "g": (_NUM, False, 1.0),
        "gamma": (_NUM, False, 1.4),
    },
    "scheme": {
        "flux": (str, False, "ES"),
    },
    "srd": {
        "enabled": (bool, False, False),
        "threshold": (_NUM, False, 0.5),
    },
    "time": {
        "dt0": (_NUM, True, None),
        "t_end": (_NUM, True, None),
        "abstol": (_NUM, False, 1e-8),
        "reltol": (_NUM, False, 1e-6),
        "max_steps": (int, False, None),
    },
    "output": {
        "dir": (str, False, "output"),
        "snapshot_every": (int, False, 0),
        "log_residual": (bool, False, True),
    },
    "mms": {
        "enabled": (bool, False, False),
    },
}
_TOP = set(_SCHEMA) | {"curves", "boundary", "initial", "name", "description"}

_CURVE_KEYS = {
    "circle": {"type", "center", "radius", "tag", "name"},
    "biconvex": {"type", "chord", "thickness", "center", "angle", "tag", "name"},
    "piecewise": {"type", "segments", "tag", "name"},
}
_SEGMENT_KEYS = {
    "line": {"kind", "start", "end"},
    "arc": {"kind", "center", "radius", "start_angle", "end_angle"},
}
_BC_KINDS = ("wall", "extrapolation", "freestream", "prescribed")
_PRESETS = ("mms", "entropy_wave")

_PRIMITIVES = {"swe": ("h", "u", "v"), "euler": ("rho", "u", "v", "p")}


def _find_line(text: str, path) -> Optional[int]:
    """Best-effort line number of the last key in ``path``."""
    if not text or not path:
        return None
    key = str(path[-1])
    section = ".".join(str(p) for p in path[:-1] if not isinstance(p, int))
    lines = text.splitlines()
    in_section = not section
    for i, ln in enumerate(lines, 1):
        s = ln.strip()
        if s.startswith("["):
            name = s.strip("[] ")
            in_section = (name == section) or not section
            if not path[:-1] and name == key:
                return i
            continue
        if in_section and re.match(rf"^{re.escape(key)}\s*=", s):
            return i
    for i, ln in enumerate(lines, 1):
        if re.match(rf"^\s*{re.escape(key)}\s*=", ln) or ln.strip().strip("[] ") == key:
            return i
    return None


@dataclass
class RunConfig:
    """Validated run configuration (raw tables kept for curves/boundary/initial)."""

    name: str
    mesh: dict
    curves: list
    law: dict
    scheme: dict
    boundary: dict
    initial: dict
    srd: dict
    time: dict
    output: dict
    mms: dict
    source_text: str = field(default="", repr=False)

    @property
    def law_name(self) -> str:
        return self.law["name"]

    def as_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in
                ("name", "mesh", "curves", "law", "scheme", "boundary", "initial", "srd",
                 "time", "output", "mms")}


def _check_type(value, types, path, text):
    if types is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif types is bool:
        ok = isinstance(value, bool)
    elif types == _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        name = types.__name__ if isinstance(types, type) else "number"
        raise ConfigError(f"expected {name}, got {value!r}", path, _find_line(text, path))


def _section(raw, name, text):
    schema = _SCHEMA[name]
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError("expected a table", (name,), _find_line(text, (name,)))
    out = {}
    for key in data:
        if key not in schema:
            raise ConfigError("unknown key", (name, key), _find_line(text, (name, key)))
    for key, (types, required, default) in schema.items():
        if key in data:
            _check_type(data[key], types, (name, key), text)
            out[key] = float(data[key]) if types == _NUM else data[key]
        elif required:
            raise ConfigError("missing required key", (name, key), _find_line(text, (name,)))
        else:
            out[key] = default
    return out


def _validate(raw: dict, text: str, name: str) -> RunConfig:
    for key in raw:
        if key not in _TOP:
            raise ConfigError("unknown key", (key,), _find_line(text, (key,)))
    if "law" not in raw:
        raise ConfigError("missing required section", ("law",))
    if "mesh" not in raw:
        raise ConfigError("missing required section", ("mesh",))
    sec = {s: _section(raw, s, text) for s in _SCHEMA}

    m = sec["mesh"]
    dom = m["domain"]
    if len(dom) != 4 or not all(isinstance(v, _NUM) for v in dom) or not (dom[0] < dom[1] and dom[2] < dom[3]):
        raise ConfigError("domain must be [x0, x1, y0, y1] with x0 < x1, y0 < y1",
                          ("mesh", "domain"), _find_line(text, ("mesh", "domain")))
    m["domain"] = [float(v) for v in dom]
    for k in ("nx", "ny"):
        if m[k] < 1:
            raise ConfigError("must be >= 1", ("mesh", k), _find_line(text, ("mesh", k)))
    if m["N"] < 1:
        raise ConfigError("polynomial degree must be >= 1", ("mesh", "N"), _find_line(text, ("mesh", "N")))

    law = sec["law"]
    law["name"] = law["name"].lower()
    if law["name"] not in _PRIMITIVES:
        raise ConfigError(f"unknown law {law['name']!r} (expected swe or euler)", ("law", "name"),
                          _find_line(text, ("law", "name")))
    flux = sec["scheme"]["flux"].upper()
    if flux not in ("EC", "ES"):
        raise ConfigError("flux must be EC or ES", ("scheme", "flux"), _find_line(text, ("scheme", "flux")))
    sec["scheme"]["flux"] = flux
    if not 0 < sec["srd"]["threshold"] <= 1:
        raise ConfigError("threshold must lie in (0, 1]", ("srd", "threshold"),
                          _find_line(text, ("srd", "threshold")))
    tm = sec["time"]
    for k in ("dt0", "abstol", "reltol"):
        if not tm[k] > 0:
            raise ConfigError("must be positive", ("time", k), _find_line(text, ("time", k)))
    if tm["t_end"] < 0:
        raise ConfigError("must be non-negative", ("time", "t_end"), _find_line(text, ("time", "t_end")))
    if sec["output"]["snapshot_every"] < 0:
        raise ConfigError("must be >= 0", ("output", "snapshot_every"),
                          _find_line(text, ("output", "snapshot_every")))

    curves = raw.get("curves", [])
    if not isinstance(curves, list):
        raise ConfigError("expected an array of tables", ("curves",), _find_line(text, ("curves",)))
    for i, c in enumerate(curves):
        if not isinstance(c, dict) or "type" not in c:
            raise ConfigError("curve needs a type", ("curves", i), _find_line(text, ("curves",)))
        allowed = _CURVE_KEYS.get(c["type"])
        if allowed is None:
            raise ConfigError(f"unknown curve type {c['type']!r}", ("curves", i, "type"),
                              _find_line(text, ("curves", "type")))
        for k in c:
            if k not in allowed:
                raise ConfigError("unknown key", ("curves", i, k), _find_line(text, ("curves", k)))
        if c["type"] == "piecewise":
            segs = c.get("segments")
            if not isinstance(segs, list) or not segs or not all(isinstance(r, dict) for r in segs):
                raise ConfigError("expected a non-empty array of segment tables", ("curves", i, "segments"),
                                  _find_line(text, ("curves", "segments")))
            for j, r in enumerate(segs):
                need = _SEGMENT_KEYS.get(r.get("kind"))
                if need is None or set(r) != need:
                    raise ConfigError(f"segment needs exactly {sorted(need) if need else 'kind line|arc'}",
                                      ("curves", i, "segments", j), _find_line(text, ("curves", "segments")))
        elif c["type"] == "circle" and "radius" not in c:
            raise ConfigError("circle needs a radius", ("curves", i), _find_line(text, ("curves",)))

    prims = _PRIMITIVES[law["name"]]
    boundary = raw.get("boundary", {"default": "wall"})
    if not isinstance(boundary, dict):
        raise ConfigError("expected a table", ("boundary",), _find_line(text, ("boundary",)))
    bnd = {}
    for tag, spec in boundary.items():
        if isinstance(spec, str):
            spec = {"kind": spec}
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError("expected a kind string or a table with 'kind'", ("boundary", tag),
                              _find_line(text, ("boundary", tag)))
        if spec["kind"] not in _BC_KINDS:
            raise ConfigError(f"unknown boundary kind {spec['kind']!r}", ("boundary", tag),
                              _find_line(text, ("boundary", tag)))
        extra = set(spec) - {"kind"} - set(prims)
        if extra:
            raise ConfigError(f"unknown key {sorted(extra)[0]!r}", ("boundary", tag),
                              _find_line(text, ("boundary", tag)))
        if spec["kind"] == "freestream":
            miss = [p for p in prims if p not in spec]
            if miss:
                raise ConfigError(f"freestream needs {', '.join(miss)}", ("boundary", tag),
                                  _find_line(text, ("boundary", tag)))
        bnd[tag] = dict(spec)

    initial = raw.get("initial")
    if not isinstance(initial, dict):
        raise ConfigError("missing required section", ("initial",))
    if "preset" in initial:
        if initial["preset"] not in _PRESETS:
            raise ConfigError(f"unknown preset {initial['preset']!r}", ("initial", "preset"),
                              _find_line(text, ("initial", "preset")))
        extra = set(initial) - {"preset"}
        if extra:
            k = sorted(extra)[0]
            raise ConfigError("unknown key", ("initial", k), _find_line(text, ("initial", k)))
    else:
        for k in initial:
            if k not in prims:
                raise ConfigError(f"unknown key (expected {', '.join(prims)})", ("initial", k),
                                  _find_line(text, ("initial", k)))
        miss = [p for p in prims if p not in initial]
        if miss:
            raise ConfigError(f"missing initial fields {', '.join(miss)}", ("initial",),
                              _find_line(text, ("initial",)))
        for k, v in initial.items():
            if not isinstance(v, (str, int, float)) or isinstance(v, bool):
                raise ConfigError("expected a number or an expression string", ("initial", k),
                                  _find_line(text, ("initial", k)))
            if isinstance(v, str):
                try:
                    compile_expression(v)
                except ConfigError as exc:
                    raise ConfigError(str(exc), ("initial", k), _find_line(text, ("initial", k))) from None
    if sec["mms"]["enabled"] and law["name"] != "swe":
        raise ConfigError("manufactured source is only defined for swe", ("mms", "enabled"),
                          _find_line(text, ("mms", "enabled")))

    return RunConfig(name=str(raw.get("name", name)), mesh=m, curves=[dict(c) for c in curves],
                     law=law, scheme=sec["scheme"], boundary=bnd, initial=dict(initial),
                     srd=sec["srd"], time=tm, output=sec["output"], mms=sec["mms"],
                     source_text=text)


def parse_config_text(text: str, name: str = "run", overrides=()) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", (), int(m.group(1)) if m else None) from None
    for ov in overrides:
        apply_override(raw, ov)
    return _validate(raw, text, name)


def parse_config(path, overrides=()) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), p.stem, overrides)


def apply_override(raw: dict, override: str):
    """Apply ``section.key=value`` (value parsed as a TOML value, else a string)."""
    if "=" not in override:
        raise ConfigError(f"override must look like key=value, got {override!r}")
    key, value = override.split("=", 1)
    parts = key.strip().split(".")
    try:
        val = tomli.loads(f"v = {value.strip()}")["v"]
    except tomli.TOMLDecodeError:
        val = value.strip()
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError("cannot override inside a non-table", tuple(parts))
    node[parts[-1]] = val


# --- expressions -------------------------------------------------------------

_EXPR_NAMES = {
    "pi": math.pi, "e": math.e,
    **{f: getattr(np, f) for f in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "where",
                                   "minimum", "maximum", "tanh", "arctan2", "hypot")},
}
_EXPR_OK = re.compile(r"^[\s0-9a-zA-Z_.+\-*/(),<>=!&|%]*$")


def compile_expression(src: str):
    """Compile an expression in ``x, y`` using a small numpy vocabulary."""
    if not _EXPR_OK.match(src) or "__" in src:
        raise ConfigError(f"invalid characters in expression {src!r}")
    try:
        code = compile(src, "<expr>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {src!r}: {exc.msg}") from None
    for n in code.co_names:
        if n not in _EXPR_NAMES and n not in ("x", "y"):
            raise ConfigError(f"unknown name {n!r} in expression {src!r}")

    def fn(x, y):
        return np.broadcast_to(eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "x": x, "y": y}),
                               np.shape(x)).astype(float)

    return fn


def primitive_names(law_name: str):
    return _PRIMITIVES[law_name]
