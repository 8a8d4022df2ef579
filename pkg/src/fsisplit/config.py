"""
Run configuration and its key-value file format.

A config file is INI-style with the sections ``mesh``, ``curve``,
``physics``, ``scheme``, ``experiment``, ``reference`` and ``output``.
Every key is optional; unknown sections or keys are rejected so that a
typo never silently falls back to a default. Lists are comma separated
and ``tau`` values may be written as fractions (``1/64``)::

    [mesh]
    nx = 40
    ny = 40

    [curve]
    shape = ellipse
    n_seg = 40

    [scheme]
    scheme = split
    r = 1
    tau = 0.05
    T = 3.0

    [experiment]
    kind = stability
    schemes = strong, split_r1, split_r2
    taus = 0.1, 0.05, 0.01

The canonical text produced by ``to_ini`` is what the config hash is
computed from, so two configs that differ only in formatting or in
explicitly spelled-out defaults share a hash.
"""

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .assembly import PhysicsParams
from .geometry import build_ellipse_curve, build_structured_mesh
from .schemes import SchemeConfig

EXPERIMENTS = ("run", "stability", "spatial", "temporal", "trajectory")
SCHEME_LABELS = ("strong", "explicit", "split_r1", "split_r2")
SHAPES = ("ellipse", "circle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeshSpec:
    nx: int = 40
    ny: int = 40
    box: tuple = (0.0, 1.0, 0.0, 1.0)

    def build(self):
        return build_structured_mesh(self.nx, self.ny, self.box)


@dataclass(frozen=True)
class CurveSpec:
    n_seg: int = 40
    shape: str = "ellipse"
    center: tuple = (0.5, 0.5)
    a: float = 0.25 * 2.0 ** 0.5
    b: float = 0.25 / 2.0 ** 0.5
    radius: float = 0.25

    @property
    def semi_axes(self):
        if self.shape == "circle":
            return self.radius, self.radius
        return self.a, self.b

    def build(self, box):
        a, b = self.semi_axes
        return build_ellipse_curve(self.n_seg, self.center, a, b, box)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "run"
    schemes: tuple = ("strong", "split_r1", "split_r2")
    taus: tuple = ()
    nx_list: tuple = ()
    # curve segments per fluid cell along x in convergence studies
    seg_per_cell: int = 2
    blowup_factor: float = 1e3
    boundary_n_seg: tuple = ()
    boundary_tau_range: tuple = (1e-3, 1.0)
    boundary_bisections: int = 8
    # a boundary probe runs at least this many steps, extending T for large tau
    boundary_min_steps: int = 100


@dataclass(frozen=True)
class ReferenceSpec:
    path: str = ""
    nx: int = 128
    tau: float = 0.0  # 0 means: same as the scheme time step
    linearized: bool = False
    frozen_geometry: bool = False


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    series: tuple = ("energy",)


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    curve: CurveSpec = field(default_factory=CurveSpec)
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def with_scheme(self, **kw):
        return replace(self, scheme=replace(self.scheme, **kw))

    def with_label(self, label, **kw):
        """Copy with the scheme selected by a label such as ``split_r2``."""
        scheme, r = parse_label(label)
        return self.with_scheme(scheme=scheme, r=r, **kw)


SECTIONS = {
    "mesh": MeshSpec,
    "curve": CurveSpec,
    "physics": PhysicsParams,
    "scheme": SchemeConfig,
    "experiment": ExperimentSpec,
    "reference": ReferenceSpec,
    "output": OutputSpec,
}


def parse_label(label):
    if label not in SCHEME_LABELS:
        raise ConfigError(f"unknown scheme label {label!r}; expected one of {SCHEME_LABELS}")
    if label.startswith("split_r"):
        return "split", int(label[-1])
    return label, 1


def _number(text):
    text = text.strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


# element type of every list-valued key
_LISTS = {
    ("mesh", "box"): float,
    ("curve", "center"): float,
    ("experiment", "schemes"): str,
    ("experiment", "taus"): float,
    ("experiment", "nx_list"): int,
    ("experiment", "boundary_n_seg"): int,
    ("experiment", "boundary_tau_range"): float,
    ("output", "series"): str,
}


def _parse_value(text, default, kind=None):
    text = text.strip()
    if kind is not None:
        items = [t.strip() for t in text.split(",") if t.strip()]
        if kind is str:
            return tuple(items)
        if kind is int:
            try:
                return tuple(int(t) for t in items)
            except ValueError as exc:
                raise ConfigError(f"not a list of integers: {text!r}") from exc
        return tuple(_number(t) for t in items)
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"not an integer: {text!r}") from exc
    if isinstance(default, float):
        return _number(text)
    return text


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, tuple):
        return ", ".join(_format_value(t) for t in v)
    return str(v)


def parse_config(text, base_dir=None):
    """Parse config text into a validated ``RunConfig``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    parts = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        defaults = {f.name: f.default for f in fields(cls)}
        kw = {}
        for key, raw in cp.items(name):
            if key not in defaults:
                raise ConfigError(f"unknown key '{key}' in [{name}]")
            kw[key] = _parse_value(raw, defaults[key], _LISTS.get((name, key)))
        try:
            parts[name] = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    cfg = RunConfig(**parts)
    validate(cfg, base_dir)
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)


def validate(cfg, base_dir=None):
    m, c, e = cfg.mesh, cfg.curve, cfg.experiment
    if m.nx < 1 or m.ny < 1:
        raise ConfigError("mesh sizes must be positive")
    if len(m.box) != 4 or not (m.box[0] < m.box[1] and m.box[2] < m.box[3]):
        raise ConfigError("box must be x0, x1, y0, y1 with x0 < x1 and y0 < y1")
    if c.shape not in SHAPES:
        raise ConfigError(f"unknown curve shape {c.shape!r}")
    if c.n_seg < 3:
        raise ConfigError("n_seg must be at least 3")
    if e.kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {e.kind!r}")
    for label in e.schemes:
        parse_label(label)
    if e.kind in ("stability", "temporal", "trajectory") and not e.taus:
        raise ConfigError(f"experiment '{e.kind}' needs a non-empty taus list")
    if any(t <= 0 for t in e.taus):
        raise ConfigError("taus must be positive")
    if e.kind == "spatial":
        if len(e.nx_list) < 2:
            raise ConfigError("spatial convergence needs at least two nx values")
        _check_powers_of_two(list(e.nx_list) + [cfg.reference.nx])
    if e.kind == "temporal" and len(e.taus) < 2:
        raise ConfigError("temporal convergence needs at least two taus")
    if e.boundary_min_steps < 1:
        raise ConfigError("boundary_min_steps must be positive")
    if not e.blowup_factor > 1:
        raise ConfigError("blowup_factor must exceed 1")
    if cfg.reference.path:
        p = Path(cfg.reference.path)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        if not p.exists():
            raise ConfigError(f"reference not found: {p}")
    try:
        c.build(m.box)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _check_powers_of_two(ns):
    ns = sorted(set(int(n) for n in ns))
    for n0, n1 in zip(ns, ns[1:]):
        q = n1 // n0
        if n1 % n0 or q & (q - 1):
            raise ConfigError(f"mesh sizes {n0} and {n1} are not nested by a power of 2")


def to_ini(cfg):
    """Canonical text form; every field is written explicitly."""
    lines = []
    for name, cls in SECTIONS.items():
        obj = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg):
    """Short SHA-256 digest of the canonical config text."""
    return hashlib.sha256(to_ini(cfg).encode()).hexdigest()[:16]


def paper_scale(cfg):
    """Fine reference settings: h = 1/256, tau = 5e-5."""
    return replace(cfg, reference=replace(cfg.reference, nx=256, tau=5e-5,
                                          linearized=False, frozen_geometry=False))
