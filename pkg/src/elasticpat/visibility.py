"""Geodesic ray tracing for the metrics c⁻²dx² and the visibility certificate.

Rays follow the Hamiltonian flow of H(x, ξ) = c(x)²|ξ|²/2,

    ẋ = c²ξ,    ξ̇ = −c|ξ|²∇c,

integrated with classical RK4. The covector is rescaled to c|ξ| = 1 after
every step, so elapsed time equals length in the metric. Exit times are the
first zero crossings of the level function of Ω, refined by bisection on the
length of the last step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, TrappedRay
from .medium import Grid, Medium

log = logging.getLogger(__name__)

__all__ = [
    "SpeedModel",
    "AnalyticSpeed",
    "RayResult",
    "RayBatch",
    "trace_rays",
    "trace_geodesic",
    "sample_phase_space",
    "VisibilityCertificate",
    "certify_visibility",
]

BISECT_TOL = 1e-10
MODES = ("p", "s")


def _bspline_weights(t):
    s = 1.0 - t
    t2 = t * t
    t3 = t2 * t
    w = np.stack([s**3 / 6.0, (3 * t3 - 6 * t2 + 4) / 6.0, (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0, t3 / 6.0], axis=-1)
    dw = np.stack([-0.5 * s * s, 0.5 * (3 * t2 - 4 * t), 0.5 * (-3 * t2 + 2 * t + 1), 0.5 * t2], axis=-1)
    return w, dw


def _mirror(i, n):
    # whole-sample reflection, the convention of ndimage's "mirror" mode
    i = np.abs(i)
    return np.where(i > n - 1, 2 * (n - 1) - i, i)


class SpeedModel:
    """Cubic B-spline interpolant of a nodal speed field, with its exact gradient."""

    def __init__(self, grid: Grid, c: np.ndarray):
        c = np.asarray(c, dtype=float)
        if c.shape != grid.n:
            raise ConfigError(f"speed array shape {c.shape} does not match grid {grid.n}", key="speed")
        if not np.all(c > 0):
            raise ConfigError("speeds must be positive", key="speed")
        self.grid = grid
        self.nodal = c
        self.coef = ndimage.spline_filter(c, order=3, mode="mirror")
        self.c_min = float(c.min())
        self.c_max = float(c.max())
        self._lo = np.asarray(grid.lo)
        self._h = np.asarray(grid.h)
        self._n = np.asarray(grid.n)
        d = grid.dim
        letters = "abc"[:d]
        self._val_sub = ",".join(f"k{l}" for l in letters) + ",k" + letters + "->k"

    @classmethod
    def from_medium(cls, medium: Medium, mode: str) -> "SpeedModel":
        key = ("speed", mode)
        model = medium._cache.get(key)
        if model is None:
            model = medium._cache[key] = cls(medium.grid, medium.speed(mode))
        return model

    def __call__(self, x: np.ndarray):
        """Speed and gradient at points ``x`` (k, d) -> ((k,), (k, d))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.grid.dim
        u = np.clip((x - self._lo) / self._h, 0.0, self._n - 1.0)
        i = np.minimum(np.floor(u).astype(np.intp), self._n - 2)
        t = u - i
        w, dw = _bspline_weights(t)  # (k, d, 4)
        k = x.shape[0]
        offs = np.arange(-1, 3)
        idx = []
        for a in range(d):
            ia = _mirror(i[:, a, None] + offs, self._n[a])
            shape = [k] + [1] * d
            shape[a + 1] = 4
            idx.append(ia.reshape(shape))
        G = self.coef[tuple(idx)]  # (k, 4, ..., 4)
        ws = [w[:, a] for a in range(d)]
        val = np.einsum(self._val_sub, *ws, G)
        grad = np.empty((k, d))
        for a in range(d):
            ops = list(ws)
            ops[a] = dw[:, a]
            grad[:, a] = np.einsum(self._val_sub, *ops, G) / self._h[a]
        return val, grad


class AnalyticSpeed:
    """Speed given by closed-form callables ``c(x)`` and ``grad_c(x)`` on (k, d) arrays."""

    def __init__(self, c, grad_c, c_min: float, c_max: float):
        self._c = c
        self._g = grad_c
        self.c_min = float(c_min)
        self.c_max = float(c_max)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self._c(x), dtype=float), np.asarray(self._g(x), dtype=float)


def _rhs(speed, x, xi):
    c, gc = speed(x)
    p2 = np.sum(xi * xi, axis=1)
    return (c * c)[:, None] * xi, -(c * p2)[:, None] * gc


def _rk4(speed, x, xi, dt):
    """One RK4 step; ``dt`` is a scalar or per-ray (k,) array."""
    dt = np.asarray(dt, dtype=float)
    if dt.ndim:
        dt = dt[:, None]
    k1x, k1p = _rhs(speed, x, xi)
    k2x, k2p = _rhs(speed, x + 0.5 * dt * k1x, xi + 0.5 * dt * k1p)
    k3x, k3p = _rhs(speed, x + 0.5 * dt * k2x, xi + 0.5 * dt * k2p)
    k4x, k4p = _rhs(speed, x + dt * k3x, xi + dt * k3p)
    xn = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    pn = xi + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return xn, _normalise(speed, xn, pn)


def _normalise(speed, x, xi):
    c, _ = speed(x)
    return xi / (c * np.linalg.norm(xi, axis=1))[:, None]


def _default_step(speed, region) -> float:
    grid = getattr(speed, "grid", None)
    h = min(grid.h) if grid is not None else region.diameter / 200.0
    # spatial advance per step at most h/2, and at least ~100 steps per crossing
    return min(0.5 * h, region.diameter / 100.0) / speed.c_max


def _exit_times(speed, region, x0, xi0, budget, step, path=False, reentry=False):
    """First exit of Ω going forward in time. Returns (tau, exit_point, reentered, paths)."""
    x = x0.copy()
    xi = _normalise(speed, x, xi0)
    k = x.shape[0]
    tau = np.full(k, np.inf)
    exit_pt = np.full_like(x, np.nan)
    reentered = np.zeros(k, dtype=bool)
    t = 0.0
    active = np.ones(k, dtype=bool)
    paths = [x.copy()] if path else None
    nsteps = int(math.ceil(budget / step))
    for _ in range(nsteps):
        if not active.any():
            break
        a = np.nonzero(active)[0]
        xa, pa = x[a], xi[a]
        xn, pn = _rk4(speed, xa, pa, step)
        out = region.level(xn) > 0
        if out.any():
            b = a[out]
            s_lo = np.zeros(b.size)
            s_hi = np.full(b.size, step)
            while np.max(s_hi - s_lo) > BISECT_TOL:
                mid = 0.5 * (s_lo + s_hi)
                xm, _ = _rk4(speed, x[b], xi[b], mid)
                outside = region.level(xm) > 0
                s_hi = np.where(outside, mid, s_hi)
                s_lo = np.where(outside, s_lo, mid)
            s = 0.5 * (s_lo + s_hi)
            xe, _ = _rk4(speed, x[b], xi[b], s)
            tau[b] = t + s
            exit_pt[b] = xe
            active[b] = False
        x[a], xi[a] = xn, pn
        t += step
        if path:
            paths.append(np.where(active[:, None], x, exit_pt))
    if reentry:
        reentered = _reentry(speed, region, exit_pt, x, xi, tau, budget, step)
    return tau, exit_pt, reentered, paths


def _reentry(speed, region, exit_pt, x, xi, tau, budget, step):
    """Continue exited rays until the budget runs out; flag any that come back into Ω."""
    grid = getattr(speed, "grid", None)
    done = np.isfinite(tau)
    back = np.zeros(tau.size, dtype=bool)
    if not done.any():
        return back
    idx = np.nonzero(done)[0]
    # restart from the post-crossing state that the stepping loop already holds
    xr, pr = x[idx].copy(), xi[idx].copy()
    t = np.ceil(tau[idx] / step) * step
    alive = np.ones(idx.size, dtype=bool)
    while alive.any() and np.min(t[alive]) < budget:
        a = np.nonzero(alive)[0]
        xn, pn = _rk4(speed, xr[a], pr[a], step)
        xr[a], pr[a] = xn, pn
        t[a] += step
        came_back = region.level(xn) <= 0
        back[idx[a[came_back]]] = True
        gone = came_back | (t[a] >= budget)
        if grid is not None:
            gone |= np.any((xn < np.asarray(grid.lo)) | (xn > np.asarray(grid.hi)), axis=1)
        alive[a[gone]] = False
    return back


@dataclass
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    mode: str
    tau_plus: np.ndarray
    tau_minus: np.ndarray
    exit_plus: np.ndarray
    exit_minus: np.ndarray
    reentered: np.ndarray | None = None

    @property
    def trapped(self) -> np.ndarray:
        return ~(np.isfinite(self.tau_plus) & np.isfinite(self.tau_minus))

    @property
    def visible_time(self) -> np.ndarray:
        """min{τ₊, −τ₋} per ray."""
        return np.minimum(self.tau_plus, -self.tau_minus)


def trace_rays(
    speed,
    region,
    x,
    xi,
    mode: str = "s",
    time_budget: float | None = None,
    step: float | None = None,
    raise_on_trap: bool = True,
    reentry: bool = False,
) -> RayBatch:
    """Exit times in both directions for rays from points ``x`` (k, d) along covectors ``xi`` (k, d).

    The backward exit is the forward exit of (x, −ξ) with the sign flipped;
    the flow is reversible, so this is the same curve run backwards.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if x.shape != xi.shape:
        raise ValueError("x and xi must have the same shape")
    if np.any(region.level(x) > 0):
        raise ValueError("ray origins must lie in the region")
    if time_budget is None:
        time_budget = 10.0 * region.diameter / speed.c_min
    if step is None:
        step = _default_step(speed, region)
    both_x = np.concatenate([x, x])
    both_xi = np.concatenate([xi, -xi])
    tau, ex, back, _ = _exit_times(speed, region, both_x, both_xi, time_budget, step, reentry=reentry)
    k = x.shape[0]
    batch = RayBatch(
        origins=x,
        directions=xi,
        mode=mode,
        tau_plus=tau[:k],
        tau_minus=-tau[k:],
        exit_plus=ex[:k],
        exit_minus=ex[k:],
        reentered=(back[:k] | back[k:]) if reentry else None,
    )
    if raise_on_trap and batch.trapped.any():
        j = int(np.argmax(batch.trapped))
        raise TrappedRay(
            f"{mode}-ray from {x[j].tolist()} along {xi[j].tolist()} stays in the region "
            f"for the whole budget {time_budget:.4g}",
            origin=x[j],
            direction=xi[j],
            mode=mode,
        )
    return batch


@dataclass
class RayResult:
    origin: np.ndarray
    direction: np.ndarray
    mode: str
    tau_plus: float
    tau_minus: float
    exit_points: tuple[np.ndarray, np.ndarray]
    reentered: bool | None = None
    path: np.ndarray | None = None


def _speed_for(medium_or_speed, mode):
    if isinstance(medium_or_speed, Medium):
        return SpeedModel.from_medium(medium_or_speed, mode)
    return medium_or_speed


def trace_geodesic(
    medium_or_speed,
    region,
    x,
    xi,
    mode: str = "s",
    time_budget: float | None = None,
    step: float | None = None,
    path: bool = False,
    reentry: bool = False,
) -> RayResult:
    """Single-ray version of :func:`trace_rays`; raises :class:`TrappedRay` if it never exits.

    With ``path=True`` the forward ray's positions after every step are kept.
    """
    speed = _speed_for(medium_or_speed, mode)
    batch = trace_rays(speed, region, x, xi, mode, time_budget, step, raise_on_trap=True, reentry=reentry)
    pts = None
    if path:
        budget = time_budget if time_budget is not None else 10.0 * region.diameter / speed.c_min
        stp = step if step is not None else _default_step(speed, region)
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        _, _, _, paths = _exit_times(speed, region, x2, np.atleast_2d(np.asarray(xi, dtype=float)), budget, stp, path=True)
        pts = np.array([p[0] for p in paths])
        hit = np.nonzero(np.all(pts == batch.exit_plus[0], axis=1))[0]
        if hit.size:
            pts = pts[: hit[0] + 1]
    return RayResult(
        origin=batch.origins[0],
        direction=batch.directions[0],
        mode=mode,
        tau_plus=float(batch.tau_plus[0]),
        tau_minus=float(batch.tau_minus[0]),
        exit_points=(batch.exit_plus[0], batch.exit_minus[0]),
        reentered=None if batch.reentered is None else bool(batch.reentered[0]),
        path=pts,
    )


def _directions(dim: int, n: int, rng) -> np.ndarray:
    if dim == 2:
        ang = 2 * np.pi * (np.arange(n) + rng.uniform()) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # Fibonacci sphere with a random rotation
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (1 + 5**0.5) * i + rng.uniform(0, 2 * np.pi)
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sample_phase_space(region, grid: Grid, spacing: float | None = None, n_directions: int = 32, seed: int = 0):
    """Base points on a jittered lattice in ``region`` times ``n_directions`` unit directions.

    The lattice is anchored at the region centre, which is kept unjittered;
    other nodes move by up to a quarter of the spacing. Returns ``(x, xi)``
    with shape (points·directions, d) each, points major.
    """
    if spacing is None:
        spacing = 4.0 * min(grid.h)
    if spacing <= 0:
        raise ConfigError("sampling spacing must be positive", key="spacing")
    if n_directions < 1:
        raise ConfigError("n_directions must be >= 1", key="n_directions")
    rng = np.random.default_rng(seed)
    d = grid.dim
    c = np.asarray(region.center, dtype=float)
    m = int(math.ceil(0.5 * region.diameter / spacing)) + 1
    ticks = np.arange(-m, m + 1) * spacing
    lattice = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d)
    jitter = rng.uniform(-0.25, 0.25, lattice.shape) * spacing
    jitter[np.all(lattice == 0, axis=1)] = 0.0
    pts = c + lattice + jitter
    pts = pts[region.level(pts) < 0]
    dirs = _directions(d, n_directions, rng)
    x = np.repeat(pts, n_directions, axis=0)
    xi = np.tile(dirs, (pts.shape[0], 1))
    return x, xi


@dataclass
class VisibilityCertificate:
    T: float
    sampled_points: int
    n_directions: int
    spacing: float
    worst_margin: dict
    sharp_T_estimate: float
    mode_estimates: dict
    worst_points: dict
    verdict: str
    trapped: list = field(default_factory=list)
    reentered: dict | None = None
    rays: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def summary_rows(self) -> list[tuple[str, object]]:
        rows = [
            ("T", self.T),
            ("verdict", self.verdict),
            ("sharp_T_estimate", self.sharp_T_estimate),
            ("sampled_points", self.sampled_points),
            ("n_directions", self.n_directions),
            ("spacing", self.spacing),
        ]
        for m in MODES:
            rows.append((f"worst_margin_{m}", self.worst_margin[m]))
            rows.append((f"sharp_T_{m}", self.mode_estimates[m]))
            rows += [(f"worst_point_{m}_{a}", v) for a, v in enumerate(self.worst_points[m])]
            if self.reentered is not None:
                rows.append((f"reentered_{m}", self.reentered[m]))
        rows.append(("trapped", len(self.trapped)))
        return rows


def certify_visibility(
    medium: Medium,
    region,
    T: float,
    spacing: float | None = None,
    n_directions: int = 32,
    seed: int = 0,
    step: float | None = None,
    time_budget: float | None = None,
    check_reentry: bool = False,
    keep_rays: bool = False,
) -> VisibilityCertificate:
    """Check min{τ₊, −τ₋} < T over sampled (x, ξ) for both the P and the S metric."""
    if not T > 0:
        raise ConfigError("T must be positive", key="t_final")
    if n_directions < 32:
        raise ConfigError("at least 32 directions per base point are required", key="n_directions")
    grid = medium.grid
    if spacing is None:
        spacing = 4.0 * min(grid.h)
    if spacing > 4.0 * max(grid.h) * (1 + 1e-12):
        raise ConfigError("base point spacing must not exceed 4h", key="spacing")
    x, xi = sample_phase_space(region, grid, spacing, n_directions, seed)
    margins, estimates, worst, back = {}, {}, {}, {}
    trapped, rays = [], []
    for mode in MODES:
        speed = SpeedModel.from_medium(medium, mode)
        batch = trace_rays(speed, region, x, xi, mode, time_budget, step, raise_on_trap=False, reentry=check_reentry)
        vis = batch.visible_time
        j = int(np.argmax(vis))
        estimates[mode] = float(vis[j])
        margins[mode] = float(T - vis[j])
        worst[mode] = tuple(float(v) for v in x[j])
        for t in np.nonzero(batch.trapped)[0]:
            trapped.append((tuple(x[t]), tuple(xi[t]), mode))
        if check_reentry:
            back[mode] = int(np.count_nonzero(batch.reentered))
        if keep_rays:
            rays.append(batch)
        log.info("%s-mode: sharp T estimate %.6g at %s", mode, estimates[mode], worst[mode])
    ok = all(m > 0 for m in margins.values())
    return VisibilityCertificate(
        T=float(T),
        sampled_points=x.shape[0] // n_directions,
        n_directions=n_directions,
        spacing=float(spacing),
        worst_margin=margins,
        sharp_T_estimate=max(estimates.values()),
        mode_estimates=estimates,
        worst_points=worst,
        verdict="pass" if ok else "fail",
        trapped=trapped,
        reentered=back if check_reentry else None,
        rays=rays,
    )
