"""Experiment configuration: a flat ``key = value`` text format.

Example::

    # nonlinear flow on the circle
    name = theorem2_sinV
    geometry = torus
    n = 1
    points = 64
    lengths = 2pi
    a = -1
    V = sin
    A = auto
    u0 = random(seed=0, band=2, floor=0.001)
    t_end = 1
    dt = 0.0005
    record_every = 2

Lines are ``key = value``; ``#`` starts a comment. Unknown keys, duplicate
keys and malformed values are syntax errors reported with their line number.
Semantic checks (``a <= 0``, the certified bound on ``A``, positive initial
data) run after parsing, and every violation is reported, not only the first.

Potentials are ``zero``, ``sin``, ``cos`` or a ``;``-separated list of terms
``c cos k``, ``c sin k`` (2-D: ``c cos k1 k2``) or a bare constant ``c``.
``k`` is the angular wavenumber, so ``sin`` means ``sin(x)``.

Initial data presets::

    constant(value=1)
    mode(base=2, amp=1, k=1)                     base + amp cos(k x)
    kernel(t0=0.02, floor=0.001)                 torus heat kernel of age t0, plus floor
    gaussian(p0=1, floor=1e-08)                  exp(-p0 |x - c|^2) + floor, torus only
    random(seed=0, band=2, floor=0.001)          floor + exp(s), s band-limited, max|s| = 1
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from dataclasses import dataclass, field, fields, replace
from types import SimpleNamespace
from typing import Optional

import numpy as np

from .geometry import Geometry, GeometryError, build_interval, build_torus
from .harnack import Tolerances
from .oracles import torus_heat_kernel
from .solver import A_RTOL, Problem, certify_A, problem_violations

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """One or more syntax or semantic violations in a configuration."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


# (coefficient, "cos" | "sin" | "const", wavevector)
VTerm = tuple[float, str, tuple[float, ...]]

U0_PRESETS: dict[str, dict[str, float]] = {
    "constant": {"value": 1.0},
    "mode": {"base": 2.0, "amp": 1.0, "k": 1.0},
    "kernel": {"t0": 0.02, "floor": 1e-3},
    "gaussian": {"p0": 1.0, "floor": 1e-8},
    "random": {"seed": 0, "band": 2, "floor": 1e-3},
}
_INT_PARAMS = {"seed", "band"}


@dataclass(frozen=True)
class U0Spec:
    preset: str
    params: tuple[tuple[str, float], ...]

    def get(self, key: str):
        return dict(self.params)[key]

    def with_param(self, key: str, value) -> "U0Spec":
        d = dict(self.params)
        d[key] = value
        return U0Spec(self.preset, tuple(d.items()))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    geometry: str = "torus"
    n: int = 1
    points: tuple[int, ...] = (64,)
    lengths: tuple[float, ...] = (2 * math.pi,)
    a: float = 0.0
    V: tuple[VTerm, ...] = ()
    A: Optional[float] = None  # None: use the certified bound
    u0: U0Spec = field(default_factory=lambda: U0Spec("random", tuple(U0_PRESETS["random"].items())))
    t_end: float = 1.0
    dt: float = 1e-3
    record_every: int = 1
    oversample: int = 1
    t_shift: Optional[float] = None  # None: the kernel age for kernel data, else 0
    tolerances: Tolerances = field(default_factory=Tolerances)
    out: str = ""

    @property
    def effective_t_shift(self) -> float:
        if self.t_shift is not None:
            return self.t_shift
        return float(self.u0.get("t0")) if self.u0.preset == "kernel" else 0.0


# ---------------------------------------------------------------------------
# value parsers


def _parse_real(text: str) -> float:
    """A float, optionally written as a multiple of pi (``2pi``, ``0.5*pi``, ``pi``)."""
    t = text.strip().replace(" ", "")
    m = re.fullmatch(r"([-+]?[0-9.eE+-]*)\*?pi", t)
    if m:
        c = m.group(1)
        coef = 1.0 if c in ("", "+") else -1.0 if c == "-" else float(c)
        return coef * math.pi
    value = float(t)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _parse_optional_real(text: str) -> Optional[float]:
    return None if text.strip() == "auto" else _parse_real(text)


def parse_potential(text: str, n: int) -> tuple[VTerm, ...]:
    t = text.strip()
    if t in ("zero", "0", ""):
        return ()
    if t in ("sin", "cos"):
        return ((1.0, t, (1.0,) + (0.0,) * (n - 1)),)
    terms = []
    for part in t.split(";"):
        tok = part.split()
        if len(tok) == 1:
            terms.append((_parse_real(tok[0]), "const", ()))
            continue
        if len(tok) < 3 or tok[1] not in ("cos", "sin") or len(tok) - 2 > n:
            raise ValueError(f"cannot read potential term {part.strip()!r}; expected 'c cos k' or 'c sin k'")
        k = tuple(_parse_real(x) for x in tok[2:])
        terms.append((_parse_real(tok[0]), tok[1], k + (0.0,) * (n - len(k))))
    return tuple(terms)


def format_potential(terms: tuple[VTerm, ...]) -> str:
    if not terms:
        return "zero"
    out = []
    for c, kind, k in terms:
        out.append(repr(c) if kind == "const" else " ".join([repr(c), kind] + [repr(x) for x in k]))
    return "; ".join(out)


def parse_u0(text: str) -> U0Spec:
    m = re.fullmatch(r"\s*([a-z]+)\s*(?:\((.*)\))?\s*", text)
    if not m or m.group(1) not in U0_PRESETS:
        raise ValueError(f"unknown initial datum {text.strip()!r}; presets: {', '.join(U0_PRESETS)}")
    name = m.group(1)
    params = dict(U0_PRESETS[name])
    if m.group(2) and m.group(2).strip():
        for item in m.group(2).split(","):
            if "=" not in item:
                raise ValueError(f"expected key=value inside {name}(...), got {item.strip()!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            if k not in params:
                raise ValueError(f"{name} has no parameter {k!r}; expected one of {', '.join(params)}")
            params[k] = _parse_int(v) if k in _INT_PARAMS else _parse_real(v)
    return U0Spec(name, tuple(params.items()))


def format_u0(spec: U0Spec) -> str:
    body = ", ".join(f"{k}={v!r}" for k, v in spec.params)
    return f"{spec.preset}({body})"


_TOL_KEYS = {f"tol.{f.name}": f.name for f in fields(Tolerances) if f.name != "t_min"}

_KEYS = (
    "name", "geometry", "n", "points", "lengths", "a", "V", "A", "u0",
    "t_end", "dt", "record_every", "t_min", "oversample", "t_shift", "out",
    *_TOL_KEYS,
)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration.

    Raises
    ------
    ConfigError
        Carrying every syntax and semantic violation found.
    """
    errors: list[str] = []
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
        elif key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r} (first set on line {raw[key][0]})")
        else:
            raw[key] = (lineno, value)

    kw: dict = {}
    tol_kw: dict = {}

    def take(key, parser, target=kw, name=None):
        if key not in raw:
            return
        lineno, value = raw[key]
        try:
            target[name or key] = parser(value)
        except ValueError as exc:
            errors.append(f"line {lineno}: bad value for {key!r}: {exc}")

    take("name", str)
    take("geometry", lambda v: v if v in ("torus", "interval") else _raise(f"{v!r} is not 'torus' or 'interval'"))
    take("n", _parse_int)
    if kw.get("geometry") == "interval":
        kw.setdefault("n", 1)
        defaults = {"points": (257,), "lengths": (math.pi,)}
    else:
        defaults = {}
    take("points", lambda v: tuple(_parse_int(x) for x in v.split()))
    take("lengths", lambda v: tuple(_parse_real(x) for x in v.split()))
    n = kw.get("n", 1)
    if "points" not in kw and "points" not in defaults and n == 2:
        defaults["points"] = (32, 32)
    if "lengths" not in kw and "lengths" not in defaults and n == 2:
        defaults["lengths"] = (2 * math.pi, 2 * math.pi)
    for k, v in defaults.items():
        kw.setdefault(k, v)
    take("a", _parse_real)
    take("V", lambda v: parse_potential(v, n))
    take("A", _parse_optional_real)
    take("u0", parse_u0)
    take("t_end", _parse_real)
    take("dt", _parse_real)
    take("record_every", _parse_int)
    take("oversample", _parse_int)
    take("t_shift", _parse_optional_real)
    take("out", str)
    take("t_min", _parse_real, tol_kw)
    for key, attr in _TOL_KEYS.items():
        take(key, _parse_real, tol_kw, attr)
    # semantic checks run on whatever parsed, so one pass reports everything
    cfg = ExperimentConfig(**kw, tolerances=Tolerances(**tol_kw))
    errors += config_violations(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _raise(msg):
    raise ValueError(msg)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(serialize_config(c)) == c``."""
    tol = cfg.tolerances
    lines = [
        f"name = {cfg.name}",
        f"geometry = {cfg.geometry}",
        f"n = {cfg.n}",
        "points = " + " ".join(str(p) for p in cfg.points),
        "lengths = " + " ".join(repr(x) for x in cfg.lengths),
        f"a = {cfg.a!r}",
        f"V = {format_potential(cfg.V)}",
        f"A = {'auto' if cfg.A is None else repr(cfg.A)}",
        f"u0 = {format_u0(cfg.u0)}",
        f"t_end = {cfg.t_end!r}",
        f"dt = {cfg.dt!r}",
        f"record_every = {cfg.record_every}",
        f"t_min = {tol.t_min!r}",
        f"oversample = {cfg.oversample}",
        f"t_shift = {'auto' if cfg.t_shift is None else repr(cfg.t_shift)}",
    ]
    lines += [f"{key} = {getattr(tol, attr)!r}" for key, attr in _TOL_KEYS.items()]
    if cfg.out:
        lines.append(f"out = {cfg.out}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building fields and problems


def build_geometry(cfg: ExperimentConfig) -> Geometry:
    if cfg.geometry == "interval":
        if cfg.n != 1 or len(cfg.points) != 1 or len(cfg.lengths) != 1:
            raise GeometryError("the interval is one-dimensional: give one point count and one length")
        return build_interval(cfg.points[0], cfg.lengths[0])
    return build_torus(cfg.n, cfg.points, cfg.lengths)


def potential_fn(terms: tuple[VTerm, ...]):
    """Analytic potential as a function of the coordinate arrays."""

    def V(*x):
        out = np.zeros(np.broadcast(*x).shape)
        for c, kind, k in terms:
            if kind == "const":
                out = out + c
                continue
            phase = sum(ki * xi for ki, xi in zip(k, x))
            out = out + c * (np.cos(phase) if kind == "cos" else np.sin(phase))
        return out

    return V


def _random_modes(g: Geometry, seed: int, band: int):
    rng = np.random.default_rng(seed)
    modes = []
    if g.is_torus:
        for m in itertools.product(range(-band, band + 1), repeat=g.n):
            if not any(m):
                continue
            k = tuple(2 * math.pi * mi / L for mi, L in zip(m, g.lengths))
            modes.append((float(rng.normal()), float(rng.uniform(0, 2 * math.pi)), k))
    else:
        # cosine modes satisfy the Neumann condition at both ends
        for m in range(1, band + 1):
            modes.append((float(rng.normal()), 0.0, (math.pi * m / g.lengths[0],)))
    return modes


def initial_datum_fn(spec: U0Spec, g: Geometry):
    """Analytic initial datum for ``spec`` on ``g`` as a function of coordinates."""
    p = dict(spec.params)
    name = spec.preset
    if name == "constant":
        return lambda *x: np.full(np.broadcast(*x).shape, p["value"])
    if name == "mode":
        return lambda *x: p["base"] + p["amp"] * np.cos(p["k"] * x[0])
    if name == "kernel":
        center = tuple(0.5 * L for L in g.lengths)
        return lambda *x: torus_heat_kernel(g, x, p["t0"], center) + p["floor"]
    if name == "gaussian":
        def gauss(*x):
            # periodic displacement from the centre of the box
            r2 = 0.0
            for xi, L in zip(x, g.lengths):
                d = np.mod(xi, L) - 0.5 * L
                r2 = r2 + d * d
            return np.exp(-p["p0"] * r2) + p["floor"]
        return gauss
    if name == "random":
        modes = _random_modes(g, int(p["seed"]), int(p["band"]))

        def s(*x):
            out = np.zeros(np.broadcast(*x).shape)
            for c, phi, k in modes:
                out = out + c * np.cos(sum(ki * xi for ki, xi in zip(k, x)) + phi)
            return out

        scale = float(np.max(np.abs(g.field(s))))
        scale = scale if scale > 0 else 1.0
        return lambda *x: p["floor"] + np.exp(s(*x) / scale)
    raise ValueError(f"unknown preset {name!r}")


def _u0_violations(spec: U0Spec, g: Optional[Geometry]) -> list[str]:
    p = dict(spec.params)
    out = []
    if "floor" in p and not p["floor"] > 0:
        out.append(f"u0 preset floor must be positive (got {p['floor']})")
    if spec.preset == "constant" and not p["value"] > 0:
        out.append("constant initial datum must be positive")
    if spec.preset == "mode" and not p["base"] > abs(p["amp"]):
        out.append("mode initial datum needs base > |amp| to stay positive")
    if spec.preset == "kernel" and not p["t0"] > 0:
        out.append("kernel age t0 must be positive")
    if spec.preset == "gaussian" and not p["p0"] > 0:
        out.append("gaussian width parameter p0 must be positive")
    if spec.preset == "random" and not p["band"] >= 1:
        out.append("random band must be >= 1")
    if g is not None and spec.preset in ("kernel", "gaussian") and not g.is_torus:
        out.append(f"{spec.preset} initial datum is only available on the torus")
    if g is not None and spec.preset == "mode" and g.is_torus and not _periodic(p["k"], g.lengths[0]):
        out.append(f"mode k={p['k']} is not periodic on a circle of length {g.lengths[0]}")
    if spec.preset == "random" and g is not None and g.is_torus:
        band = int(p["band"])
        if any(2 * band >= N // 2 for N in g.points):
            out.append(f"random band {band} is too high for the grid (need 2*band < points/2)")
    return out


def _periodic(k: float, L: float) -> bool:
    m = k * L / (2 * math.pi)
    return abs(m - round(m)) < 1e-9


def config_violations(cfg: ExperimentConfig) -> list[str]:
    """Every semantic problem with ``cfg``; empty when it builds a valid Problem."""
    out = []
    try:
        g = build_geometry(cfg)
    except GeometryError as exc:
        out.append(str(exc))
        g = None
    if g is not None and g.is_torus:
        for c, kind, k in cfg.V:
            if kind != "const" and not all(_periodic(ki, L) for ki, L in zip(k, g.lengths)):
                out.append(f"potential term {format_potential(((c, kind, k),))} is not periodic on the torus")
    out += _u0_violations(cfg.u0, g)
    if cfg.oversample < 1:
        out.append("oversample must be >= 1")
    if not cfg.tolerances.t_min > 0:
        out.append("t_min must be positive")
    if cfg.t_shift is not None and cfg.t_shift < 0:
        out.append("t_shift must be >= 0")
    if g is not None and not out:
        V = g.field(potential_fn(cfg.V))
        with np.errstate(all="ignore"):
            u0 = g.field(initial_datum_fn(cfg.u0, g))
        A = certify_A(g, V) if cfg.A is None else cfg.A
        ns = SimpleNamespace(geometry=g, a=cfg.a, V=V, A=A, u0=u0, t_end=cfg.t_end, dt=cfg.dt, record_every=cfg.record_every)
        out += problem_violations(ns)
    else:
        # fields cannot be built; still report the scalar hypotheses
        if not cfg.a <= 0:
            out.append(f"constant a must satisfy a <= 0 (got a={cfg.a})")
        if cfg.A is not None and not cfg.A >= 0:
            out.append(f"A must be >= 0 (got {cfg.A})")
        elif cfg.A is not None and g is not None:
            A_min = certify_A(g, g.field(potential_fn(cfg.V)))
            if cfg.A < A_min - A_RTOL * max(1.0, A_min):
                out.append(f"declared A={cfg.A} is below the certified bound -ΔV <= {A_min:.12g}")
        if not cfg.t_end >= 0:
            out.append("t_end must be >= 0")
        if not cfg.dt > 0:
            out.append("dt must be > 0")
    return out


def build_problem(cfg: ExperimentConfig) -> Problem:
    g = build_geometry(cfg)
    V_fn = potential_fn(cfg.V)
    u0_fn = initial_datum_fn(cfg.u0, g)
    V = g.field(V_fn)
    u0 = g.field(u0_fn)
    if u0.min() < 1e-8:
        log.warning("min u0 = %.3g < 1e-8; f = -log u will amplify roundoff", u0.min())
    A = certify_A(g, V) if cfg.A is None else cfg.A
    return Problem(g, cfg.a, V, A, u0, cfg.t_end, cfg.dt, cfg.record_every, V_fn=V_fn, u0_fn=u0_fn)


# ---------------------------------------------------------------------------
# presets

PRESETS: dict[str, str] = {
    "theorem2_sinV": """
        name = theorem2_sinV
        geometry = torus
        n = 1
        points = 64
        lengths = 2pi
        a = -1
        V = sin
        A = auto
        u0 = random(seed=0, band=2, floor=0.001)
        t_end = 1
        dt = 0.0005
        record_every = 2
    """,
    "liyau_sharpness": """
        name = liyau_sharpness
        geometry = torus
        n = 1
        points = 256
        lengths = 8pi
        a = 0
        V = zero
        u0 = kernel(t0=0.02, floor=0.003)
        t_end = 1
        dt = 0.0005
        record_every = 2
        oversample = 4
    """,
    "theorem3_interval": """
        name = theorem3_interval
        geometry = interval
        points = 257
        lengths = pi
        a = -1
        V = sin
        A = 1
        u0 = mode(base=2, amp=1, k=1)
        t_end = 1
        dt = 0.0005
        record_every = 2
        tol.Q = 0.001
    """,
    "linear_heat_T2": """
        name = linear_heat_T2
        geometry = torus
        n = 2
        points = 32 32
        lengths = 2pi 2pi
        a = 0
        V = zero
        u0 = random(seed=0, band=2, floor=0.001)
        t_end = 1
        dt = 0.0005
        record_every = 2
        oversample = 2
    """,
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    cfg = parse_config(PRESETS[name])
    return replace(cfg, **overrides) if overrides else cfg
