"""Experiment configuration: INI-style sections parsed into typed objects.

Example::

    [grid]
    lo = -1.5, -1.5
    hi = 1.5, 1.5
    n = 128, 128

    [medium]
    lambda = 1.0
    mu = 1.0
    # amplitude, centre..., sigma; several bumps separated by ';'
    mu_bumps = 0.5, 0.0, 0.0, 0.3

    [domain]
    omega = ball
    omega_center = 0, 0
    omega_radius = 1.0
    omega0 = ball
    omega0_center = 0, 0
    omega0_radius = 0.6

    [solver]
    t_final = 2.5
    cfl = 0.5
    pml_width = 20

A manifest written by a previous run (JSON) is accepted in place of an INI
file; its ``config`` entry holds the same sections.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .medium import Ball, Box, Bump, DomainSpec, FieldSpec, Grid, Medium, build_medium
from .solver import Problem, SolverConfig

__all__ = ["Experiment", "load_config", "parse_config"]

SECTIONS = ("grid", "medium", "domain", "solver", "phantom", "reconstruction", "visibility", "oracle", "sweep")


def _floats(raw: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {raw!r}", key=key) from exc


def _bool(raw: str, key: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}", key=key)


class _Section:
    def __init__(self, name: str, data: dict):
        self.name = name
        self.data = data

    def has(self, key):
        return key in self.data and self.data[key].strip() != ""

    def raw(self, key, default=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(f"missing required key {key!r} in [{self.name}]", key=key)
            return default
        return self.data[key].strip()

    def float(self, key, default=None) -> float | None:
        if not self.has(key) and default is None:
            return None
        v = self.raw(key, str(default) if default is not None else None)
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {v!r}", key=key) from exc

    def require_float(self, key) -> float:
        v = self.raw(key)
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {v!r}", key=key) from exc

    def int(self, key, default=None) -> int | None:
        if not self.has(key) and default is None:
            return None
        v = self.raw(key, str(default) if default is not None else None)
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {v!r}", key=key) from exc

    def floats(self, key, default=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(f"missing required key {key!r} in [{self.name}]", key=key)
            return default
        return _floats(self.raw(key), key)

    def bool(self, key, default: bool) -> bool:
        if not self.has(key):
            return default
        return _bool(self.raw(key), key)

    def path(self, key, base: Path) -> Path | None:
        if not self.has(key):
            return None
        p = Path(self.raw(key))
        return p if p.is_absolute() else (base / p)


def _region(sec: _Section, prefix: str, dim: int):
    kind = sec.raw(prefix, "ball").lower()
    if kind == "ball":
        c = sec.floats(f"{prefix}_center", (0.0,) * dim)
        if len(c) != dim:
            raise ConfigError(f"{prefix}_center needs {dim} coordinates", key=f"{prefix}_center")
        r = sec.require_float(f"{prefix}_radius")
        if r <= 0:
            raise ConfigError(f"{prefix}_radius must be positive", key=f"{prefix}_radius")
        return Ball(c, r)
    if kind == "box":
        lo = sec.floats(f"{prefix}_lo")
        hi = sec.floats(f"{prefix}_hi")
        if len(lo) != dim or len(hi) != dim or any(a >= b for a, b in zip(lo, hi)):
            raise ConfigError(f"{prefix}_lo/{prefix}_hi must give {dim} increasing bounds", key=f"{prefix}_lo")
        return Box(lo, hi)
    raise ConfigError(f"{prefix} must be 'ball' or 'box', got {kind!r}", key=prefix)


def _field_spec(sec: _Section, name: str, base: Path, dim: int) -> FieldSpec:
    path = sec.path(f"{name}_file", base)
    if path is not None:
        return FieldSpec(path=str(path))
    const = sec.require_float(name)
    bumps = []
    if sec.has(f"{name}_bumps"):
        for chunk in sec.raw(f"{name}_bumps").split(";"):
            if not chunk.strip():
                continue
            vals = _floats(chunk, f"{name}_bumps")
            if len(vals) != dim + 2:
                raise ConfigError(
                    f"{name}_bumps entries need amplitude, {dim} centre coordinates and sigma",
                    key=f"{name}_bumps",
                )
            if vals[-1] <= 0:
                raise ConfigError(f"{name}_bumps sigma must be positive", key=f"{name}_bumps")
            bumps.append(Bump(vals[0], tuple(vals[1:-1]), vals[-1]))
    return FieldSpec(constant=const, bumps=tuple(bumps))


@dataclass
class Experiment:
    """A parsed configuration. ``raw`` keeps the text values for manifests."""

    raw: dict
    base: Path
    grid: Grid
    medium: Medium
    domain: DomainSpec
    solver: SolverConfig

    def section(self, name: str) -> _Section:
        return _Section(name, dict(self.raw.get(name, {})))

    def problem(self) -> Problem:
        return Problem(self.medium, self.domain, self.solver)

    def phantom(self):
        from .phantom import make_phantom

        sec = self.section("phantom")
        dim = self.grid.dim
        path = sec.path("path", self.base)
        if path is not None:
            from .fields import VectorField
            from .formats import read_ewf

            return VectorField(self.grid, read_ewf(path), support=self.domain.omega0)
        kind = sec.raw("kind")
        params: dict = {}
        if kind == "bumps":
            centers = [_floats(c, "centers") for c in sec.raw("centers").split(";") if c.strip()]
            sigmas = list(_floats(sec.raw("sigmas"), "sigmas"))
            amps = [_floats(a, "amplitudes") for a in sec.raw("amplitudes", "1").split(";") if a.strip()]
            if len(sigmas) == 1:
                sigmas = sigmas * len(centers)
            if len(sigmas) != len(centers):
                raise ConfigError("sigmas must list one value per centre", key="sigmas")
            if len(amps) == 1:
                amps = amps * len(centers)
            if len(amps) != len(centers):
                raise ConfigError("amplitudes must list one entry per centre", key="amplitudes")
            for c in centers:
                if len(c) != dim:
                    raise ConfigError(f"centers entries need {dim} coordinates", key="centers")
            params["bumps"] = [
                {"center": c, "sigma": s, "amplitude": a} for c, s, a in zip(centers, sigmas, amps)
            ]
        elif kind == "annulus":
            if sec.has("center"):
                params["center"] = sec.floats("center")
            params["radius"] = sec.require_float("radius")
            params["sigma"] = sec.require_float("sigma")
            params["amplitude"] = sec.float("amplitude", 1.0)
        elif kind == "random-smooth":
            if sec.has("center"):
                params["center"] = sec.floats("center")
            params["sigma"] = sec.require_float("sigma")
            params["seed"] = sec.int("seed", 0)
            params["modes"] = sec.int("modes", 4)
            params["amplitude"] = sec.float("amplitude", 1.0)
        else:
            raise ConfigError(f"unknown phantom kind {kind!r}", key="kind")
        return make_phantom(kind, params, self.domain)


def parse_config(raw: dict, base: Path | str = ".") -> Experiment:
    """Build an :class:`Experiment` from ``{section: {key: text}}``."""
    base = Path(base)
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown section [{name}]", key=name)
    secs = {name: _Section(name, dict(raw.get(name, {}))) for name in SECTIONS}

    g = secs["grid"]
    lo, hi = g.floats("lo"), g.floats("hi")
    n_raw = g.floats("n")
    if len(lo) != len(hi) or len(lo) != len(n_raw):
        raise ConfigError("lo, hi and n must have the same length", key="n")
    if len(lo) not in (2, 3):
        raise ConfigError("grids must be 2- or 3-dimensional", key="n")
    if any(v != int(v) for v in n_raw):
        raise ConfigError("n must be integers", key="n")
    n = tuple(int(v) for v in n_raw)
    if any(v < 8 for v in n):
        raise ConfigError("n must be at least 8 on every axis", key="n")
    if any(a >= b for a, b in zip(lo, hi)):
        raise ConfigError("grid hi must exceed lo on every axis", key="hi")
    grid = Grid(lo, hi, n)
    dim = grid.dim

    m = secs["medium"]
    medium = build_medium(grid, _field_spec(m, "lambda", base, dim), _field_spec(m, "mu", base, dim))

    d = secs["domain"]
    domain = DomainSpec(grid, _region(d, "omega", dim), _region(d, "omega0", dim))

    s = secs["solver"]
    t_final = s.require_float("t_final")
    pml_strength = s.float("pml_strength")
    dt = s.float("dt")
    solver = SolverConfig(
        t_final=t_final,
        cfl=s.float("cfl", 0.5),
        dt=dt,
        pml_width=s.int("pml_width", 10),
        pml_strength=pml_strength,
        record_stride=s.int("record_stride", 1),
        pml=s.bool("pml", True),
    )
    exp = Experiment(raw={k: dict(v) for k, v in raw.items()}, base=base, grid=grid, medium=medium, domain=domain, solver=solver)
    exp.problem()  # validates dt, margins and the layer
    return exp


def _read_raw(path: Path) -> dict:
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", key="config") from exc
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest is not valid JSON: {exc}", key="config") from exc
        cfg = doc.get("config", doc)
        return {sec: {k: str(v) for k, v in items.items()} for sec, items in cfg.items()}
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", key="config") from exc
    return {sec: dict(cp[sec]) for sec in cp.sections()}


def load_config(path) -> Experiment:
    path = Path(path)
    return parse_config(_read_raw(path), path.parent)


def raw_config(path) -> dict:
    return _read_raw(Path(path))
