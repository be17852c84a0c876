"""Line-oriented run configuration: ``section.key = value`` entries.

``#`` starts a comment, blank lines are ignored, unknown or duplicated keys
are hard errors (typo safety), and every key has a default so a minimal
file needs only the grid, the time window, and the cost weights.  Field
valued entries use preset expressions, e.g.

    init.phi0 = tanh_ball center=4.0 radius=1.5 width=0.35
    init.sigma0 = constant value=0.0
    target.phi_q = file path=targets/phi_q_{n}.csv

``echo_text`` renders the effective configuration canonically; parsing the
echo and echoing again is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

from .grid import Field, Grid
from .model import (ModelParams, Numerics, QuadraticProliferation, QuarticDoubleWell,
                    SigmoidProliferation, preset_field)
from .forward import ControlSchedule
from .snapshots import read_snapshot

__all__ = ["ConfigError", "FieldExpr", "RunConfig", "parse_config", "echo_text",
           "apply_overrides", "build_grid", "build_params", "build_initial_control"]


class ConfigError(ValueError):
    """Configuration problem; remembers the offending line and key."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        place = []
        if line is not None:
            place.append(f"line {line}")
        if key is not None:
            place.append(f"key {key}")
        prefix = f"config error ({', '.join(place)}): " if place else "config error: "
        super().__init__(prefix + message)
        self.line = line
        self.key = key


_EXPR_KINDS = {
    "constant": {"value": "float"},
    "tanh_ball": {"center": "floats", "radius": "float", "width": "float"},
    "filtered_noise": {"seed": "int", "amplitude": "float?", "kappa": "float?", "passes": "int?"},
    "file": {"path": "str"},
}


@dataclass(frozen=True)
class FieldExpr:
    """Parsed preset expression: a kind plus normalized key=value arguments."""

    kind: str
    args: tuple

    @classmethod
    def parse(cls, text: str) -> "FieldExpr":
        parts = text.split()
        if not parts:
            raise ValueError("empty field expression")
        kind = parts[0]
        if kind not in _EXPR_KINDS:
            raise ValueError(f"unknown preset {kind!r} (expected one of {sorted(_EXPR_KINDS)})")
        spec = _EXPR_KINDS[kind]
        args = {}
        for token in parts[1:]:
            if "=" not in token:
                raise ValueError(f"malformed argument {token!r} (expected key=value)")
            key, value = token.split("=", 1)
            if key not in spec:
                raise ValueError(f"preset {kind!r} does not take argument {key!r}")
            if key in args:
                raise ValueError(f"duplicate argument {key!r}")
            args[key] = _normalize_arg(spec[key], key, value)
        for key, kind_spec in spec.items():
            if not kind_spec.endswith("?") and key not in args:
                raise ValueError(f"preset {kind!r} requires argument {key!r}")
        return cls(kind=kind, args=tuple(sorted(args.items())))

    def canonical(self) -> str:
        rendered = [self.kind] + [f"{k}={v}" for k, v in self.args]
        return " ".join(rendered)

    def arg(self, name: str, default=None):
        for key, value in self.args:
            if key == name:
                return value
        return default

    def with_seed(self, seed: int) -> "FieldExpr":
        if self.arg("seed") is None:
            return self
        args = tuple((k, repr(int(seed)) if k == "seed" else v) for k, v in self.args)
        return FieldExpr(kind=self.kind, args=args)

    def is_time_varying(self) -> bool:
        return self.kind == "file" and "{n}" in str(self.arg("path", ""))

    def build(self, grid: Grid, level: int | None = None) -> Field:
        if self.kind == "constant":
            return preset_field("constant", grid, value=float(self.arg("value")))
        if self.kind == "tanh_ball":
            center = tuple(float(c) for c in str(self.arg("center")).split(","))
            return preset_field("tanh_ball", grid,
                                center=center if len(center) > 1 else center[0],
                                radius=float(self.arg("radius")),
                                width=float(self.arg("width")))
        if self.kind == "filtered_noise":
            kwargs = {"seed": int(self.arg("seed"))}
            if self.arg("amplitude") is not None:
                kwargs["amplitude"] = float(self.arg("amplitude"))
            if self.arg("kappa") is not None:
                kwargs["kappa"] = float(self.arg("kappa"))
            if self.arg("passes") is not None:
                kwargs["passes"] = int(self.arg("passes"))
            return preset_field("filtered_noise", grid, **kwargs)
        if self.kind == "file":
            path = str(self.arg("path"))
            if "{n}" in path:
                if level is None:
                    raise ValueError(f"{path!r} is per-level; a level index is required")
                path = path.replace("{n}", str(level))
            return read_snapshot(path, grid)
        raise ValueError(f"unknown preset {self.kind!r}")


def _normalize_arg(kind_spec: str, key: str, value: str) -> str:
    base = kind_spec.rstrip("?")
    if base == "float":
        return repr(float(value))
    if base == "int":
        return repr(int(value))
    if base == "floats":
        return ",".join(repr(float(v)) for v in value.split(","))
    return value


# (key, type, default); types: int, float, choice:<a|b>, expr, float_or_expr, auto_or_float, str
_SCHEMA = [
    ("grid.dim", "int", "1"),
    ("grid.nx", "int", "64"),
    ("grid.ny", "int", "1"),
    ("grid.lx", "float", "8.0"),
    ("grid.ly", "float", "1.0"),
    ("time.t_final", "float", "0.1"),
    ("time.tau", "float", "0.001"),
    ("model.potential", "choice:quartic_double_well", "quartic_double_well"),
    ("model.well_scale", "float", "1.0"),
    ("model.proliferation", "choice:quadratic|sigmoid", "quadratic"),
    ("model.p0", "float", "0.5"),
    ("model.k", "float", "1.0"),
    ("model.p_floor", "float", "0.0"),
    ("model.stabilization", "auto_or_float", "auto"),
    ("model.beta_q", "float", "0.0"),
    ("model.beta_omega", "float", "0.0"),
    ("model.beta_u", "float", "1.0"),
    ("model.u_min", "float_or_expr", "-1.0"),
    ("model.u_max", "float_or_expr", "1.0"),
    ("init.phi0", "expr", "constant value=0.0"),
    ("init.sigma0", "expr", "constant value=0.0"),
    ("target.phi_q", "expr", "constant value=0.0"),
    ("target.phi_omega", "expr", "constant value=0.0"),
    ("solver.cg_tol", "float", "1e-12"),
    ("solver.cg_maxit", "int", "20000"),
    ("solver.overflow_guard", "float", "1e6"),
    ("opt.max_iters", "int", "100"),
    ("opt.tol", "float", "1e-6"),
    ("opt.armijo_c", "float", "0.0001"),
    ("opt.alpha0", "float", "1.0"),
    ("opt.alpha_shrink", "float", "0.5"),
    ("opt.u0", "expr", "constant value=0.0"),
    ("io.outdir", "str", "out"),
    ("io.snapshot_every", "int", "50"),
    ("io.log_format", "choice:kv", "kv"),
]
_TYPES = {key: kind for key, kind, _ in _SCHEMA}
_ORDER = [key for key, _, _ in _SCHEMA]


def _parse_value(kind: str, raw: str):
    if kind == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ValueError(f"expected an integer, got {raw!r}") from exc
    if kind == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ValueError(f"expected a number, got {raw!r}") from exc
    if kind.startswith("choice:"):
        options = kind.split(":", 1)[1].split("|")
        if raw not in options:
            raise ValueError(f"expected one of {options}, got {raw!r}")
        return raw
    if kind == "expr":
        return FieldExpr.parse(raw)
    if kind == "float_or_expr":
        try:
            return float(raw)
        except ValueError:
            return FieldExpr.parse(raw)
    if kind == "auto_or_float":
        if raw == "auto":
            return None
        try:
            return float(raw)
        except ValueError as exc:
            raise ValueError(f"expected 'auto' or a number, got {raw!r}") from exc
    if kind == "str":
        return raw
    raise AssertionError(f"unhandled schema type {kind}")


def _format_value(kind: str, value) -> str:
    if kind == "int":
        return str(int(value))
    if kind == "float":
        return repr(float(value))
    if kind == "expr":
        return value.canonical()
    if kind == "float_or_expr":
        return repr(float(value)) if not isinstance(value, FieldExpr) else value.canonical()
    if kind == "auto_or_float":
        return "auto" if value is None else repr(float(value))
    return str(value)


@dataclass
class RunConfig:
    """Typed effective configuration (defaults merged, invariants checked)."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def n_steps(self) -> int:
        return int(round(self["time.t_final"] / self["time.tau"]))


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'section.key = value', got {raw.strip()!r}", line=lineno)
        key, raw_value = (part.strip() for part in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError("unknown key", line=lineno, key=key)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})",
                              line=lineno, key=key)
        try:
            values[key] = _parse_value(_TYPES[key], raw_value)
        except ValueError as exc:
            raise ConfigError(str(exc), line=lineno, key=key) from exc
        lines[key] = lineno
    for key, kind, default in _SCHEMA:
        if key not in values:
            values[key] = _parse_value(kind, default)
    cfg = RunConfig(values=values)
    _validate(cfg, lines)
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` tokens on top of a parsed configuration."""
    values = dict(cfg.values)
    for token in overrides:
        if "=" not in token:
            raise ConfigError(f"override {token!r} is not of the form key=value")
        key, raw_value = (part.strip() for part in token.split("=", 1))
        if key not in _TYPES:
            raise ConfigError("unknown key", key=key)
        try:
            values[key] = _parse_value(_TYPES[key], raw_value)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key) from exc
    out = RunConfig(values=values)
    _validate(out, {})
    return out


def _fail(lines: dict, key: str, message: str):
    raise ConfigError(message, line=lines.get(key), key=key)


def _validate(cfg: RunConfig, lines: dict) -> None:
    v = cfg.values
    if v["grid.dim"] not in (1, 2):
        _fail(lines, "grid.dim", "dim must be 1 or 2")
    if v["grid.dim"] == 1 and v["grid.ny"] != 1:
        _fail(lines, "grid.ny", "1D runs use grid.ny = 1")
    if v["grid.nx"] < 4 or (v["grid.dim"] == 2 and v["grid.ny"] < 4):
        _fail(lines, "grid.nx", "need at least 4 cells per active axis")
    if v["grid.lx"] <= 0 or v["grid.ly"] <= 0:
        _fail(lines, "grid.lx", "domain lengths must be positive")
    if v["time.tau"] <= 0:
        _fail(lines, "time.tau", "tau must be positive")
    if v["time.t_final"] <= 0:
        _fail(lines, "time.t_final", "t_final must be positive")
    if cfg.n_steps < 1:
        _fail(lines, "time.t_final", "t_final/tau must round to at least one step")
    if v["model.well_scale"] <= 0:
        _fail(lines, "model.well_scale", "well_scale must be positive")
    if v["model.p0"] <= 0:
        _fail(lines, "model.p0", "p0 must be positive")
    if v["model.k"] <= 0:
        _fail(lines, "model.k", "sigmoid steepness must be positive")
    if v["model.p_floor"] < 0:
        _fail(lines, "model.p_floor", "p_floor must be nonnegative")
    betas = (v["model.beta_q"], v["model.beta_omega"], v["model.beta_u"])
    for name in ("model.beta_q", "model.beta_omega", "model.beta_u"):
        if v[name] < 0:
            _fail(lines, name, "cost weights must be nonnegative")
    if all(b == 0 for b in betas):
        _fail(lines, "model.beta_u", "cost weights must not all be zero")
    stab = v["model.stabilization"]
    if stab is not None and stab < 0:
        _fail(lines, "model.stabilization", "stabilization must be nonnegative (or auto)")
    lo, hi = v["model.u_min"], v["model.u_max"]
    if not isinstance(lo, FieldExpr) and not isinstance(hi, FieldExpr) and lo > hi:
        _fail(lines, "model.u_min", "u_min must not exceed u_max")
    if v["solver.cg_tol"] <= 0:
        _fail(lines, "solver.cg_tol", "cg_tol must be positive")
    if v["solver.cg_maxit"] < 1:
        _fail(lines, "solver.cg_maxit", "cg_maxit must be at least 1")
    if v["solver.overflow_guard"] <= 0:
        _fail(lines, "solver.overflow_guard", "overflow_guard must be positive")
    if v["opt.max_iters"] < 1:
        _fail(lines, "opt.max_iters", "max_iters must be at least 1")
    if v["opt.tol"] <= 0:
        _fail(lines, "opt.tol", "tol must be positive")
    if not 0 < v["opt.armijo_c"] < 1:
        _fail(lines, "opt.armijo_c", "armijo_c must be in (0, 1)")
    if v["opt.alpha0"] <= 0:
        _fail(lines, "opt.alpha0", "alpha0 must be positive")
    if not 0 < v["opt.alpha_shrink"] < 1:
        _fail(lines, "opt.alpha_shrink", "alpha_shrink must be in (0, 1)")
    if v["io.snapshot_every"] < 1:
        _fail(lines, "io.snapshot_every", "snapshot_every must be at least 1")


def echo_text(cfg: RunConfig) -> str:
    """Canonical rendering of the effective configuration."""
    out = []
    for key in _ORDER:
        out.append(f"{key} = {_format_value(_TYPES[key], cfg.values[key])}")
    return "\n".join(out) + "\n"


def build_grid(cfg: RunConfig) -> Grid:
    return Grid(cfg["grid.dim"], (cfg["grid.nx"], cfg["grid.ny"]),
                (cfg["grid.lx"], cfg["grid.ly"]))


def _build_bound(value, grid: Grid):
    return value.build(grid) if isinstance(value, FieldExpr) else float(value)


def build_params(cfg: RunConfig, grid: Grid) -> ModelParams:
    """Materialize fields and assemble the parameter record for a grid."""
    if cfg["model.proliferation"] == "quadratic":
        proliferation = QuadraticProliferation(p0=cfg["model.p0"])
    else:
        proliferation = SigmoidProliferation(p0=cfg["model.p0"], steepness=cfg["model.k"],
                                             floor=cfg["model.p_floor"])
    n_steps = cfg.n_steps
    phi_q_expr: FieldExpr = cfg["target.phi_q"]
    if phi_q_expr.is_time_varying():
        per_level = [phi_q_expr.build(grid, level=max(n, 1)) for n in range(n_steps + 1)]
        phi_q = per_level
    else:
        phi_q = phi_q_expr.build(grid)
    try:
        return ModelParams(
            potential=QuarticDoubleWell(well_scale=cfg["model.well_scale"]),
            proliferation=proliferation,
            beta_q=cfg["model.beta_q"],
            beta_omega=cfg["model.beta_omega"],
            beta_u=cfg["model.beta_u"],
            t_final=cfg["time.t_final"],
            tau=cfg["time.tau"],
            stabilization=cfg["model.stabilization"],
            u_min=_build_bound(cfg["model.u_min"], grid),
            u_max=_build_bound(cfg["model.u_max"], grid),
            phi_q=phi_q,
            phi_omega=cfg["target.phi_omega"].build(grid),
            phi0=cfg["init.phi0"].build(grid),
            sigma0=cfg["init.sigma0"].build(grid),
            numerics=Numerics(cg_tol=cfg["solver.cg_tol"],
                              cg_max_iter=cfg["solver.cg_maxit"],
                              overflow_guard=cfg["solver.overflow_guard"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_initial_control(cfg: RunConfig, grid: Grid, params: ModelParams) -> ControlSchedule:
    u0_field = cfg["opt.u0"].build(grid)
    return ControlSchedule(grid, [u0_field] * params.n_steps,
                           u_min=params.u_min, u_max=params.u_max)
