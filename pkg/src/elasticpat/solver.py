"""Explicit time-domain solver for u_tt = Δ*u.

Δ*u = ∇·[μ(∇u + ∇uᵀ)] + ∇(λ ∇·u) is discretised in flux form: the
(λ+2μ) ∂_i u_i and μ ∂_j u_i terms with compact differences of
midpoint-averaged coefficients, the mixed terms as centred differences of
coefficient-weighted centred differences. The outermost grid ring is held at
zero. Time stepping is displacement-form leapfrog; an absorbing layer with a
cubic damping ramp lines the grid edges.

All array routines accept leading batch axes: a field array has shape
``(..., dim, *grid.n)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, InconsistentData, SupportViolation, UnstableStep
from .fields import VectorField, WaveState
from .medium import DiscreteRegion, DomainSpec, Medium

log = logging.getLogger(__name__)

__all__ = [
    "ElasticOperator",
    "SolverConfig",
    "Problem",
    "BoundaryTrace",
    "discrete_elastic_operator",
    "forward_solve",
    "time_reversal_solve",
    "energy_flux_report",
    "forward_with_energy",
    "EnergyRow",
    "propagate",
    "reverse",
]

BLOWUP = 1e12


def _sl(ndim, axis, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


class ElasticOperator:
    """Discrete Δ* for one medium."""

    def __init__(self, medium: Medium):
        self.medium = medium
        self.d = medium.dim
        self.h = medium.grid.h
        lam, mu = medium.lam, medium.mu
        lp2m = lam + 2.0 * mu
        self.lam = lam
        self.mu = mu
        d = self.d
        self._half = {}
        for a in range(d):
            for name, c in (("p", lp2m), ("s", mu)):
                half = 0.5 * (c[_sl(d, a, slice(1, None))] + c[_sl(d, a, slice(None, -1))])
                self._half[name, a] = half / self.h[a] ** 2

    @classmethod
    def for_medium(cls, medium: Medium) -> "ElasticOperator":
        op = medium._cache.get("operator")
        if op is None:
            op = medium._cache["operator"] = cls(medium)
        return op

    def _d0(self, w, a):
        nd = w.ndim
        ax = nd - self.d + a
        out = np.zeros_like(w)
        out[_sl(nd, ax, slice(1, -1))] = (
            w[_sl(nd, ax, slice(2, None))] - w[_sl(nd, ax, slice(None, -2))]
        ) * (0.5 / self.h[a])
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        d = self.d
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        comp_ax = u.ndim - d - 1
        comps = [np.take(u, i, axis=comp_ax) for i in range(d)]
        nd = comps[0].ndim
        grads = [[self._d0(comps[j], a) for a in range(d)] for j in range(d)]
        for i in range(d):
            acc = np.zeros_like(comps[i])
            for a in range(d):
                ax = nd - d + a
                flux = self._half["p" if a == i else "s", a] * np.diff(comps[i], axis=ax)
                acc[_sl(nd, ax, slice(1, -1))] += (
                    flux[_sl(nd, ax, slice(1, None))] - flux[_sl(nd, ax, slice(None, -1))]
                )
            for j in range(d):
                if j == i:
                    continue
                acc += self._d0(self.mu * grads[j][i], j)
                acc += self._d0(self.lam * grads[j][j], i)
            out[_sl(u.ndim, comp_ax, i)] = acc
        for a in range(d):
            ax = u.ndim - d + a
            out[_sl(u.ndim, ax, 0)] = 0.0
            out[_sl(u.ndim, ax, -1)] = 0.0
        return out


def discrete_elastic_operator(medium: Medium, u: VectorField) -> VectorField:
    if u.grid != medium.grid:
        from .errors import GridMismatch

        raise GridMismatch("field grid does not match the medium grid")
    return VectorField(u.grid, ElasticOperator.for_medium(medium).apply(u.data))


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping and absorbing-layer parameters.

    ``dt=None`` picks the largest step allowed by ``cfl`` that divides
    ``t_final`` into a whole number of ``record_stride`` blocks.
    ``pml_strength=None`` derives the peak damping from the layer width.
    """

    t_final: float
    cfl: float = 0.5
    dt: float | None = None
    pml_width: int = 10
    pml_strength: float | None = None
    record_stride: int = 1
    pml: bool = True

    def __post_init__(self):
        if not self.t_final > 0:
            raise ConfigError("t_final must be positive", key="t_final")
        if not 0 < self.cfl <= 0.9:
            raise ConfigError("cfl must lie in (0, 0.9]", key="cfl")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1", key="record_stride")
        if self.pml_width < 0:
            raise ConfigError("pml_width must be >= 0", key="pml_width")

    def dt_limit(self, medium: Medium) -> float:
        return self.cfl * min(medium.grid.h) / (medium.c_plus * math.sqrt(medium.dim))

    def resolve(self, medium: Medium) -> tuple[float, int]:
        """Return ``(dt, nsteps)`` after validating against the medium."""
        limit = self.dt_limit(medium)
        stride = self.record_stride
        if self.dt is None:
            blocks = math.ceil(self.t_final / (limit * stride) - 1e-9)
            nsteps = blocks * stride
            return self.t_final / nsteps, nsteps
        if self.dt <= 0 or self.dt > limit * (1 + 1e-12):
            raise ConfigError(f"dt={self.dt} violates the CFL limit {limit:.6g}", key="dt")
        ratio = self.t_final / self.dt
        nsteps = int(round(ratio))
        if abs(ratio - nsteps) > 1e-9 * max(1.0, ratio):
            raise ConfigError("t_final must be an integer multiple of dt", key="dt")
        if nsteps % stride:
            raise ConfigError("number of steps must be a multiple of record_stride", key="record_stride")
        return float(self.dt), nsteps

    def damping(self, medium: Medium) -> np.ndarray | None:
        """Damping rate σ(x): sum over axes of a cubic ramp into the edge layer."""
        W = self.pml_width
        if not self.pml or W == 0:
            return None
        grid = medium.grid
        strength = self.pml_strength
        if strength is None:
            # cubic ramp: ∫σ = strength·L/4; target round-trip attenuation ~1e-3
            L = W * min(grid.h)
            strength = 4.0 * medium.c_plus * math.log(1e3) / (2.0 * L)
        sigma = np.zeros(grid.n)
        for a, n in enumerate(grid.n):
            i = np.arange(n, dtype=float)
            s = np.clip(np.maximum(W - i, i - (n - 1 - W)) / W, 0.0, 1.0)
            shape = [1] * grid.dim
            shape[a] = n
            sigma = sigma + (strength * s**3).reshape(shape)
        return sigma


@dataclass
class Problem:
    """Everything a solve needs: medium, Ω/Ω₀ and the time-stepping setup."""

    medium: Medium
    domain: DomainSpec
    config: SolverConfig

    def __post_init__(self):
        if self.domain.grid != self.medium.grid:
            from .errors import GridMismatch

            raise GridMismatch("domain and medium use different grids")
        if self.config.pml and self.config.pml_width:
            self.domain.check_margin(self.config.pml_width)
        self.dt, self.nsteps = self.config.resolve(self.medium)

    @property
    def grid(self):
        return self.medium.grid

    @property
    def surface(self) -> DiscreteRegion:
        return self.domain.surface

    @cached_property
    def operator(self) -> ElasticOperator:
        return ElasticOperator.for_medium(self.medium)

    @cached_property
    def sigma(self) -> np.ndarray | None:
        return self.config.damping(self.medium)

    @property
    def n_samples(self) -> int:
        return self.nsteps // self.config.record_stride + 1

    @property
    def sample_dt(self) -> float:
        return self.dt * self.config.record_stride

    def sample_times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_dt


@dataclass
class BoundaryTrace:
    """g = u on 𝒮 at uniformly spaced times; ``values`` has shape (samples, |𝒮|, dim)."""

    points: np.ndarray
    times: np.ndarray
    values: np.ndarray
    surface: DiscreteRegion | None = field(default=None, compare=False)

    @property
    def sample_dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @classmethod
    def zeros(cls, problem: Problem) -> "BoundaryTrace":
        S = problem.surface
        return cls(
            S.boundary_points,
            problem.sample_times(),
            np.zeros((problem.n_samples, len(S), problem.grid.dim)),
            S,
        )


def _flat(a: np.ndarray, d: int) -> np.ndarray:
    return a.reshape(a.shape[:-d] + (-1,))


def _take_surface(u: np.ndarray, idx: np.ndarray, d: int) -> np.ndarray:
    """(..., d, *n) -> (..., |S|, d)."""
    return np.swapaxes(_flat(u, d)[..., idx], -1, -2)


def _check_finite(u: np.ndarray, n: int):
    m = np.max(np.abs(u))
    if not np.isfinite(m) or m > BLOWUP:
        raise UnstableStep(f"field magnitude {m:.3g} at step {n}; check dt against the CFL limit")


def propagate(problem: Problem, f: np.ndarray, record: bool = True, monitor=None, monitor_every: int = 1):
    """Leapfrog from (f, 0) to t_final on the whole grid.

    Returns ``(trace_values or None, u(T), u_t(T))``. ``monitor(n, u_n, ut_n)``
    is called every ``monitor_every`` steps (and at n = 0 and n = nsteps).
    """
    d = problem.grid.dim
    dt = problem.dt
    op = problem.operator
    stride = problem.config.record_stride
    idx = problem.surface.boundary_index
    sigma = problem.sigma
    if sigma is not None:
        a = 0.5 * dt * sigma
        inv = 1.0 / (1.0 + a)
        back = (1.0 - a) * inv
        fwd = 2.0 * inv
        kick = dt * dt * inv
    else:
        fwd, back, kick = 2.0, 1.0, dt * dt

    u0 = np.array(f, dtype=float)
    trace = None
    if record:
        trace = np.zeros(u0.shape[: -d - 1] + (problem.n_samples, idx.size, d))
        trace[..., 0, :, :] = _take_surface(u0, idx, d)
    if monitor is not None:
        monitor(0, u0, np.zeros_like(u0))
    prev = u0
    cur = u0 + (0.5 * dt * dt) * op.apply(u0)
    N = problem.nsteps
    for n in range(1, N + 1):
        nxt = fwd * cur - back * prev + kick * op.apply(cur)
        if record and n % stride == 0:
            trace[..., n // stride, :, :] = _take_surface(cur, idx, d)
        if monitor is not None and (n % monitor_every == 0 or n == N):
            monitor(n, cur, (nxt - prev) / (2.0 * dt))
        if n % 64 == 0 or n == N:
            _check_finite(nxt, n)
        if n < N:
            prev, cur = cur, nxt
    ut = (nxt - prev) / (2.0 * dt)
    return trace, cur, ut


def forward_solve(problem: Problem, f: VectorField) -> tuple[BoundaryTrace, WaveState]:
    """Λf: solve from (f, 0) and record u on 𝒮. Also returns (u(T), u_t(T))."""
    f.check_support(problem.domain.omega0)
    values, uT, utT = propagate(problem, f.data)
    S = problem.surface
    trace = BoundaryTrace(S.boundary_points, problem.sample_times(), values, S)
    grid = problem.grid
    state = WaveState(VectorField(grid, uT), VectorField(grid, utT), problem.config.t_final)
    return trace, state


def _trace_at(values: np.ndarray, n: int, stride: int) -> np.ndarray:
    """Boundary data at step n, linearly interpolated between samples."""
    k, r = divmod(n, stride)
    if r == 0:
        return values[..., k, :, :]
    w = r / stride
    return (1.0 - w) * values[..., k, :, :] + w * values[..., k + 1, :, :]


def reverse(problem: Problem, values: np.ndarray, phi: np.ndarray, check: bool = True):
    """Backward leapfrog on Ω with Dirichlet data on 𝒮. Returns ``(v(0), v_t(0))``.

    ``values``: (..., samples, |𝒮|, d); ``phi``: (..., d, *n).
    """
    d = problem.grid.dim
    dt = problem.dt
    op = problem.operator
    stride = problem.config.record_stride
    S = problem.surface
    idx = S.boundary_index
    inner = S.interior.astype(float)
    N = problem.nsteps

    def put(v, g):
        vf = _flat(v, d)
        vf[..., idx] = np.swapaxes(g, -1, -2)
        return v

    gT = values[..., -1, :, :]
    if check:
        mismatch = np.max(np.abs(_take_surface(phi, idx, d) - gT), initial=0.0)
        if mismatch > 1e-9:
            raise InconsistentData(f"final data disagrees with g(T) on the surface by {mismatch:.3g}")
    nxt = np.array(phi, dtype=float) * S.mask
    put(nxt, gT)
    cur = put((nxt + (0.5 * dt * dt) * op.apply(nxt)) * inner, _trace_at(values, N - 1, stride))
    for n in range(N - 1, 0, -1):
        prev = put((2.0 * cur - nxt + (dt * dt) * op.apply(cur)) * inner, _trace_at(values, n - 1, stride))
        nxt, cur = cur, prev
        if n % 64 == 0:
            _check_finite(cur, n)
    # v(-dt): the data are even in time because u_t(0) = 0
    g_minus = _trace_at(values, 1, stride) if N >= 1 else values[..., 0, :, :]
    before = put((2.0 * cur - nxt + (dt * dt) * op.apply(cur)) * inner, g_minus)
    _check_finite(cur, 0)
    return cur, (nxt - before) / (2.0 * dt)


def time_reversal_solve(problem: Problem, g: BoundaryTrace, phi: VectorField) -> WaveState:
    """Solve v_tt = Δ*v on (0,T)×Ω with v = g on 𝒮, v(T) = φ, v_t(T) = 0; return (v(0), v_t(0))."""
    if g.values.shape != (problem.n_samples, len(problem.surface), problem.grid.dim):
        raise InconsistentData(
            f"trace shape {g.values.shape} does not match this setup "
            f"{(problem.n_samples, len(problem.surface), problem.grid.dim)}"
        )
    if g.times.size > 1 and abs(g.sample_dt - problem.sample_dt) > 1e-12 * problem.sample_dt:
        raise InconsistentData("trace sampling interval does not match the solver time step")
    v0, vt0 = reverse(problem, g.values, phi.data)
    grid = problem.grid
    return WaveState(VectorField(grid, v0), VectorField(grid, vt0), 0.0)


@dataclass
class EnergyRow:
    t: float
    inside: float
    exterior: float
    layer: float
    absorbed: float

    @property
    def total(self) -> float:
        return self.inside + self.exterior + self.layer + self.absorbed


def forward_with_energy(problem: Problem, f: VectorField, every: int = 10):
    """One forward run returning ``(trace, final state, energy rows)``.

    Rows hold the energy inside Ω, in the layer, in the rest of the grid and
    the energy absorbed so far. The exterior share is the whole-grid energy
    minus the other two, so the parts always add up to the grid total (region
    forms alone miss the coupling across a region edge). Absorbed energy
    integrates the damping power 2∫σ|u_t|² in time (trapezoid rule).
    """
    from .norms import region_form

    f.check_support(problem.domain.omega0)
    medium = problem.medium
    grid = problem.grid
    omega = problem.domain.discrete_omega.mask
    sigma = problem.sigma
    layer = sigma > 0 if sigma is not None else np.zeros(grid.n, dtype=bool)
    whole = region_form(medium, None)
    regions = {
        "inside": region_form(medium, omega),
        "layer": region_form(medium, layer),
        "whole": whole,
    }
    rows: list[EnergyRow] = []
    state = {"absorbed": 0.0, "power": 0.0, "t": 0.0}
    sig_flat = sigma.ravel() if sigma is not None else None

    def power(ut):
        if sig_flat is None:
            return 0.0
        v = ut.reshape(grid.dim, -1)
        return 2.0 * float(np.sum(whole.weight * sig_flat * np.sum(v * v, axis=0)))

    def monitor(n, u, ut):
        t = n * problem.dt
        p = power(ut)
        state["absorbed"] += 0.5 * (t - state["t"]) * (p + state["power"])
        state["power"], state["t"] = p, t
        if n % every == 0 or n == problem.nsteps:
            e = {k: form.inner(u, u) + form.l2(ut, ut) for k, form in regions.items()}
            ext = e["whole"] - e["inside"] - e["layer"]
            rows.append(EnergyRow(t, e["inside"], ext, e["layer"], state["absorbed"]))

    values, uT, utT = propagate(problem, f.data, monitor=monitor, monitor_every=1)
    S = problem.surface
    trace = BoundaryTrace(S.boundary_points, problem.sample_times(), values, S)
    final = WaveState(VectorField(grid, uT), VectorField(grid, utT), problem.config.t_final)
    return trace, final, rows


def energy_flux_report(problem: Problem, f: VectorField, every: int = 10) -> list[EnergyRow]:
    """Energy bookkeeping of the forward run from (f, 0); see :func:`forward_with_energy`."""
    return forward_with_energy(problem, f, every)[2]
