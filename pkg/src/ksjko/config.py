"""Run configuration: INI documents with [domain], [physics], [scheme] and [output].

Example::

    [domain]
    dimension = 1
    extent = 0 1
    coupling = dirichlet
    n = 100

    [physics]
    chi = 1
    nonlinearity = entropy
    initial = bump(center=0.5, width=0.2, height=1)

    [scheme]
    tau = 0.001
    t0 = 0.1

Extents are ``lo hi`` per axis, axes separated by ``;``; a single pair
applies to every axis.  Vector profile
arguments (2D centres) are space separated.  Every key outside the tables
below is rejected.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import parse_nonlinearity
from .exceptions import ConfigurationError, KsJkoError
from .flow import JkoConfig, check_hypothesis
from .grid import DensityField, DomainSpec, build_grid

# (section, key) -> default; None marks a required key, "" an optional empty value
SCHEMA = {
    "domain": {"dimension": "1", "extent": "0 1", "coupling": "dirichlet", "n": None},
    "physics": {"chi": None, "nonlinearity": "entropy", "initial": "uniform"},
    "scheme": {
        "tau": None,
        "t0": None,
        "lambda": "1.5",
        "eps0": "0.05",
        "entropic_eps": "",
        "inner_tol": "1e-11",
        "fixed_point_tol": "1e-09",
        "max_inner_iters": "200",
        "cap": "",
        "c0_empirical": "0.5",
        "method": "auto",
    },
    "output": {"directory": "run", "stride": "1", "formats": "csv"},
}

PROFILES = ("uniform", "bump", "two_bumps", "from_file")


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(repr=False)
    source_dir: str = "."

    # -- typed accessors ------------------------------------------------------
    def get(self, section, key):
        return self.values[section][key]

    @property
    def domain(self):
        return _domain(self.values["domain"])

    @property
    def n(self):
        return int(self.get("domain", "n"))

    def grid(self):
        return build_grid(self.domain, self.n)

    @property
    def chi(self):
        return float(self.get("physics", "chi"))

    @property
    def nonlinearity(self):
        return parse_nonlinearity(self.get("physics", "nonlinearity"))

    def jko_config(self):
        s = self.values["scheme"]
        opt = lambda v: None if v == "" else float(v)  # noqa: E731
        return JkoConfig(
            chi=self.chi,
            tau=float(s["tau"]),
            t0=float(s["t0"]),
            lambda_monitor=float(s["lambda"]),
            eps0=float(s["eps0"]),
            cap_M=opt(s["cap"]),
            entropic_eps=opt(s["entropic_eps"]),
            inner_tol=float(s["inner_tol"]),
            fixed_point_tol=float(s["fixed_point_tol"]),
            max_inner_iters=int(s["max_inner_iters"]),
            c0_empirical=float(s["c0_empirical"]),
            method=s["method"],
        )

    def initial_density(self):
        return build_initial(self.get("physics", "initial"), self.grid(), self.source_dir)

    @property
    def stride(self):
        return int(self.get("output", "stride"))

    @property
    def formats(self):
        return tuple(f.strip() for f in self.get("output", "formats").split(",") if f.strip())

    @property
    def output_directory(self):
        return self.get("output", "directory")

    def with_value(self, dotted_key, value):
        section, key = resolve_key(dotted_key)
        vals = {s: dict(kv) for s, kv in self.values.items()}
        vals[section][key] = str(value)
        return parse_values(vals, self.source_dir)


def resolve_key(dotted):
    """``section.key`` or a bare key that is unique across sections."""
    if "." in dotted:
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown key {dotted!r}", dotted)
        return section, key
    hits = [s for s, keys in SCHEMA.items() if dotted in keys]
    if len(hits) != 1:
        raise ConfigurationError(f"unknown key {dotted!r}", dotted)
    return hits[0], dotted


def _num(section, key, value, kind=float, positive=False, nonneg=False):
    try:
        v = kind(value)
    except ValueError:
        raise ConfigurationError(f"{section}.{key} = {value!r} is not a valid {kind.__name__}", key) from None
    if positive and not v > 0:
        raise ConfigurationError(f"{section}.{key} must be positive", key)
    if nonneg and not v >= 0:
        raise ConfigurationError(f"{section}.{key} must be nonnegative", key)
    return v


def _domain(d):
    dim = _num("domain", "dimension", d["dimension"], int)
    try:
        axes = [tuple(float(t) for t in ax.split()) for ax in d["extent"].split(";")]
    except ValueError:
        raise ConfigurationError(f"bad extent {d['extent']!r}", "extent") from None
    if any(len(ax) != 2 for ax in axes):
        raise ConfigurationError("extent needs 'lo hi' per axis", "extent")
    if len(axes) == 1:
        axes = axes * dim
    try:
        return DomainSpec(dim, tuple(axes), d["coupling"])
    except KsJkoError as exc:
        key = "coupling" if "coupling" in str(exc) else "extent"
        raise ConfigurationError(str(exc), key) from None


def parse_config(text, source_dir="."):
    """Parse an INI document into a validated :class:`RunConfig`."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}", "") from None
    vals = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]", section)
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]", key)
            vals.setdefault(section, {})[key] = value.strip()
    return parse_values(vals, source_dir)


def parse_values(vals, source_dir="."):
    full = {}
    for section, keys in SCHEMA.items():
        full[section] = {}
        for key, default in keys.items():
            given = vals.get(section, {}).get(key)
            if given is None:
                if default is None:
                    raise ConfigurationError(f"missing required key {section}.{key}", key)
                given = default
            full[section][key] = given
    cfg = RunConfig(full, str(source_dir))
    _validate(cfg)
    return cfg


def _validate(cfg):
    d = cfg.values["domain"]
    _num("domain", "n", d["n"], int, positive=True)
    _domain(d)
    try:
        cfg.grid()
    except KsJkoError as exc:
        raise ConfigurationError(str(exc), "n") from None
    _num("physics", "chi", cfg.get("physics", "chi"), nonneg=True)
    try:
        cfg.nonlinearity
    except KsJkoError as exc:
        raise ConfigurationError(str(exc), "nonlinearity") from None
    s = cfg.values["scheme"]
    for key in ("tau", "t0", "lambda", "eps0", "inner_tol", "fixed_point_tol", "c0_empirical"):
        _num("scheme", key, s[key], nonneg=(key == "t0"), positive=(key != "t0"))
    _num("scheme", "max_inner_iters", s["max_inner_iters"], int, positive=True)
    for key in ("cap", "entropic_eps"):
        if s[key] != "":
            _num("scheme", key, s[key], positive=True)
    o = cfg.values["output"]
    _num("output", "stride", o["stride"], int, positive=True)
    bad = [f for f in cfg.formats if f not in ("csv", "json")]
    if bad or not cfg.formats:
        raise ConfigurationError(f"formats must be csv and/or json, got {o['formats']!r}", "formats")
    jcfg = cfg.jko_config()  # JkoConfig checks lambda > 1 and the method name
    try:
        rho0 = cfg.initial_density()
    except ConfigurationError:
        raise
    except (KsJkoError, OSError, ValueError) as exc:
        raise ConfigurationError(f"initial profile: {exc}", "initial") from None
    check_hypothesis(rho0, jcfg)


def serialize_config(cfg):
    """Canonical text form: every key, schema order, one ``key = value`` per line."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {cfg.values[section][key]}".rstrip())
        lines.append("")
    return "\n".join(lines)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}", "") from None
    return parse_config(text, source_dir=str(path.parent))


# --------------------------------------------------------------------------
# initial profiles
# --------------------------------------------------------------------------
_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _profile_args(body):
    args = {}
    if body and body.strip():
        for part in body.split(","):
            key, sep, value = part.partition("=")
            if not sep:
                raise ConfigurationError(f"profile argument {part.strip()!r} needs key=value", "initial")
            args[key.strip()] = value.strip()
    return args


def _vector(text, dim, name):
    try:
        vals = [float(t) for t in text.split()]
    except ValueError:
        raise ConfigurationError(f"bad {name} {text!r}", "initial") from None
    if len(vals) == 1:
        vals = vals * dim
    if len(vals) != dim:
        raise ConfigurationError(f"{name} needs {dim} components", "initial")
    return np.array(vals)


def raised_cosine(grid, center, width, height):
    """``height (1 + cos(pi r / width)) / 2`` for ``r < width``, zero outside."""
    r = np.sqrt(sum((m - c) ** 2 for m, c in zip(grid.mesh, center)))
    return np.where(r < width, 0.5 * height * (1.0 + np.cos(np.pi * r / width)), 0.0)


def build_initial(spec, grid, source_dir="."):
    """Unit-mass initial density from a profile spec."""
    m = _CALL.match(spec)
    if not m or m.group(1) not in PROFILES:
        raise ConfigurationError(f"unknown initial profile {spec!r}; expected one of {PROFILES}", "initial")
    name, args = m.group(1), _profile_args(m.group(2))
    dim = grid.dimension
    allowed = {
        "uniform": set(),
        "bump": {"center", "width", "height", "background"},
        "two_bumps": {"center1", "center2", "width", "height", "background"},
        "from_file": {"path"},
    }[name]
    extra = set(args) - allowed
    if extra:
        raise ConfigurationError(f"unknown {name} argument(s) {sorted(extra)}", "initial")
    if name == "uniform":
        return DensityField.uniform(grid)
    if name == "from_file":
        if "path" not in args:
            raise ConfigurationError("from_file needs path=...", "initial")
        values = read_profile_file(Path(source_dir) / args["path"], grid)
        return DensityField.from_function(grid, lambda *_: values)
    width = float(args.get("width", 0.1 * min(grid.domain.lengths)))
    height = float(args.get("height", 1.0))
    background = float(args.get("background", 0.0))
    if not width > 0 or height < 0 or background < 0:
        raise ConfigurationError("bump needs width > 0, height >= 0, background >= 0", "initial")
    if name == "bump":
        center = _vector(args.get("center", " ".join(map(str, grid.domain.centroid))), dim, "center")
        vals = background + raised_cosine(grid, center, width, height)
    else:
        lo = np.array([a for a, _ in grid.domain.extent])
        L = np.array(grid.domain.lengths)
        c1 = _vector(args["center1"], dim, "center1") if "center1" in args else lo + 0.3 * L
        c2 = _vector(args["center2"], dim, "center2") if "center2" in args else lo + 0.7 * L
        vals = background + raised_cosine(grid, c1, width, height) + raised_cosine(grid, c2, width, height)
    return DensityField.from_function(grid, lambda *_: vals)


def read_profile_file(path, grid):
    """Cell values from a snapshot CSV (``rho`` column) or a plain list of numbers."""
    text = Path(path).read_text()
    first = text.splitlines()[0] if text.strip() else ""
    if "rho" in first.split(","):
        data = np.genfromtxt(path, delimiter=",", names=True)
        values = np.atleast_1d(data["rho"])
    else:
        values = np.array([float(t) for t in re.split(r"[\s,]+", text.strip()) if t])
    if values.size != grid.size:
        raise ConfigurationError(f"{path} holds {values.size} values, grid has {grid.size} cells", "initial")
    return values.reshape(grid.shape)
