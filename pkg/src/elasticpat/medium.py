"""Computational grid, sub-domains and Lamé parameter fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GridMismatch, NonPositiveParameter

__all__ = [
    "Grid",
    "Box",
    "Ball",
    "DiscreteRegion",
    "DomainSpec",
    "Bump",
    "FieldSpec",
    "Medium",
    "build_medium",
    "region_mask",
    "smallest_shear_diameter",
]


@dataclass(frozen=True)
class Grid:
    """Regular node-centred grid covering ``[lo, hi]`` with ``n`` points per axis."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        n = tuple(int(v) for v in self.n)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", n)
        if not (len(lo) == len(hi) == len(n)) or len(n) not in (2, 3):
            raise ConfigError("grid must be 2-D or 3-D with matching lo/hi/n", key="dim")
        if min(n) < 8:
            raise ConfigError("grid needs at least 8 points per axis", key="n")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigError("grid extents must satisfy lo < hi", key="hi")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lo, self.hi, self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, m) for a, b, m in zip(self.lo, self.hi, self.n)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *n)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self, flat_index) -> np.ndarray:
        """Coordinates of nodes given by flat indices, shape ``(k, dim)``."""
        idx = np.unravel_index(np.asarray(flat_index), self.n)
        return np.stack([np.asarray(self.lo[a]) + idx[a] * self.h[a] for a in range(self.dim)], axis=-1)

    def to_index(self, x) -> np.ndarray:
        """Fractional grid index of physical points ``x`` (..., dim)."""
        x = np.asarray(x, dtype=float)
        return (x - np.asarray(self.lo)) / np.asarray(self.h)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))

    def level(self, x) -> np.ndarray:
        """Negative inside, zero on the boundary, positive outside. ``x`` has shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        return np.max(np.maximum(np.asarray(self.lo) - x, x - np.asarray(self.hi)), axis=-1)

    def normal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        gap = np.concatenate([np.asarray(self.lo) - x, x - np.asarray(self.hi)], axis=-1)
        k = np.argmax(gap, axis=-1)
        d = x.shape[-1]
        out = np.zeros_like(x)
        axis = k % d
        sign = np.where(k < d, -1.0, 1.0)
        np.put_along_axis(out, axis[..., None], sign[..., None], axis=-1)
        return out


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ConfigError("ball radius must be positive", key="radius")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def level(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def normal(self, x) -> np.ndarray:
        r = np.asarray(x, dtype=float) - np.asarray(self.center)
        nr = np.linalg.norm(r, axis=-1, keepdims=True)
        return r / np.where(nr > 0, nr, 1.0)


def region_mask(region, grid: Grid) -> np.ndarray:
    """Boolean node mask for a region descriptor.

    ``None`` means the whole grid; a boolean array is passed through; boxes and
    balls select the nodes whose centre lies inside (boundary included).
    """
    if region is None:
        return np.ones(grid.n, dtype=bool)
    if isinstance(region, DiscreteRegion):
        return region.mask
    if isinstance(region, np.ndarray):
        if region.shape != grid.n or region.dtype != bool:
            raise GridMismatch(f"mask shape {region.shape} does not match grid {grid.n}")
        return region
    lev = region.level(np.moveaxis(grid.coords(), 0, -1))
    return lev <= 1e-9 * min(grid.h)


class DiscreteRegion:
    """Grid-aligned discretisation of a region.

    Boundary nodes are region nodes with at least one of their ``3**dim - 1``
    neighbours outside the region (or off the grid); interior nodes are the
    rest. Every interior node therefore has its whole stencil inside.
    """

    def __init__(self, region, grid: Grid):
        self.region = region
        self.grid = grid
        self.mask = region_mask(region, grid)
        st = np.ones((3,) * grid.dim, dtype=bool)
        self.interior = ndimage.binary_erosion(self.mask, structure=st, border_value=0)
        self.boundary = self.mask & ~self.interior
        self.boundary_index = np.flatnonzero(self.boundary)
        self.interior_index = np.flatnonzero(self.interior)

    @cached_property
    def boundary_points(self) -> np.ndarray:
        return self.grid.points(self.boundary_index)

    @cached_property
    def normals(self) -> np.ndarray:
        if hasattr(self.region, "normal"):
            return self.region.normal(self.boundary_points)
        return np.full_like(self.boundary_points, np.nan)

    def __len__(self):
        return self.boundary_index.size


@dataclass(frozen=True)
class DomainSpec:
    """Ω (observation domain) and Ω₀ (source support) on a grid.

    ``surface`` is the discrete ∂Ω: the ordered boundary nodes of Ω.
    """

    grid: Grid
    omega: Box | Ball
    omega0: Box | Ball

    def __post_init__(self):
        hmax = max(self.grid.h)
        m0 = region_mask(self.omega0, self.grid)
        if not m0.any():
            raise ConfigError("omega0 contains no grid nodes", key="omega0")
        pts = np.moveaxis(self.grid.coords(), 0, -1)[m0]
        if np.max(self.omega.level(pts)) > -2.0 * hmax * (1 - 1e-9):
            raise ConfigError("omega0 must lie at least 2h inside omega", key="omega0")
        if not self.discrete_omega0.interior.any():
            raise ConfigError("omega0 has no interior nodes at this resolution", key="omega0")

    @cached_property
    def discrete_omega(self) -> DiscreteRegion:
        return DiscreteRegion(self.omega, self.grid)

    @cached_property
    def discrete_omega0(self) -> DiscreteRegion:
        return DiscreteRegion(self.omega0, self.grid)

    @property
    def surface(self) -> DiscreteRegion:
        return self.discrete_omega

    def check_margin(self, width: int) -> None:
        """Ω must keep ``width`` cells clear of the grid edge (the absorbing layer)."""
        idx = np.nonzero(self.discrete_omega.mask)
        for a, m in enumerate(self.grid.n):
            if idx[a].min() < width + 1 or idx[a].max() > m - 2 - width:
                raise ConfigError(
                    f"omega intrudes into the {width}-cell absorbing layer on axis {a}",
                    key="pml_width",
                )


@dataclass(frozen=True)
class Bump:
    amplitude: float
    center: tuple[float, ...]
    sigma: float


@dataclass(frozen=True)
class FieldSpec:
    """Scalar field descriptor: constant plus Gaussian bumps, or a raw EWF1 file.

    Each bump adds ``amplitude * exp(-|x - center|^2 / (2 sigma^2))``.
    ``values`` allows an in-memory array (same role as ``path``).
    """

    constant: float = 1.0
    bumps: tuple[Bump, ...] = ()
    path: str | None = None
    values: np.ndarray | None = field(default=None, compare=False)

    def evaluate(self, grid: Grid) -> np.ndarray:
        if self.values is not None or self.path is not None:
            if self.values is not None:
                arr = np.asarray(self.values, dtype=float)
            else:
                from .formats import read_ewf

                arr = read_ewf(self.path)
            if arr.shape != grid.n:
                raise GridMismatch(f"field shape {arr.shape} does not match grid {grid.n}")
            return arr.copy()
        x = grid.coords()
        out = np.full(grid.n, float(self.constant))
        for b in self.bumps:
            c = np.asarray(b.center, dtype=float).reshape((-1,) + (1,) * grid.dim)
            r2 = np.sum((x - c) ** 2, axis=0)
            out += b.amplitude * np.exp(-r2 / (2.0 * b.sigma**2))
        return out


class Medium:
    """Lamé fields on a grid with the derived P and S speeds.

    Treated as immutable once built; derived discrete operators are cached on
    the instance.
    """

    def __init__(self, grid: Grid, lam: np.ndarray, mu: np.ndarray):
        lam = np.asarray(lam, dtype=float)
        mu = np.asarray(mu, dtype=float)
        for name, arr in (("lambda", lam), ("mu", mu)):
            if arr.shape != grid.n:
                raise GridMismatch(f"{name} has shape {arr.shape}, grid is {grid.n}")
            bad = ~(arr > 0)
            if bad.any():
                idx = np.argwhere(bad)[0]
                raise NonPositiveParameter(name, idx, float(arr[tuple(idx)]))
        self.grid = grid
        self.lam = lam
        self.mu = mu
        self.lam.flags.writeable = False
        self.mu.flags.writeable = False
        self.cp = np.sqrt(lam + 2.0 * mu)
        self.cs = np.sqrt(mu)
        self.c_plus = float(self.cp.max())
        self.c_minus = float(self.cs.min())
        self._cache: dict = {}

    @property
    def dim(self) -> int:
        return self.grid.dim

    def speed(self, mode: str) -> np.ndarray:
        if mode == "p":
            return self.cp
        if mode == "s":
            return self.cs
        raise ValueError(f"mode must be 'p' or 's', got {mode!r}")

    def __repr__(self):
        return f"Medium(grid={self.grid.n}, c_plus={self.c_plus:.6g}, c_minus={self.c_minus:.6g})"


def _as_spec(v) -> FieldSpec:
    if isinstance(v, FieldSpec):
        return v
    if np.ndim(v):
        return FieldSpec(values=np.asarray(v, dtype=float))
    return FieldSpec(constant=float(v))


def build_medium(grid: Grid, lambda_spec, mu_spec) -> Medium:
    """Lamé fields from FieldSpecs, constants or arrays on ``grid``."""
    return Medium(grid, _as_spec(lambda_spec).evaluate(grid), _as_spec(mu_spec).evaluate(grid))


def smallest_shear_diameter(
    medium: Medium,
    domain: DomainSpec,
    spacing: float | None = None,
    n_directions: int = 32,
    seed: int = 0,
    step: float | None = None,
) -> float:
    """Half the longest shear travel time across Ω: sup of (τ₊ˢ − τ₋ˢ)/2.

    This is the lower bound ℓ_s(Ω)/2 for an admissible observation time.
    Raises :class:`TrappedRay` if a sampled shear ray never leaves Ω.
    """
    from .visibility import SpeedModel, sample_phase_space, trace_rays

    speed = SpeedModel.from_medium(medium, "s")
    x, xi = sample_phase_space(domain.omega, medium.grid, spacing, n_directions, seed)
    res = trace_rays(speed, domain.omega, x, xi, step=step, raise_on_trap=True)
    return float(np.max(0.5 * (res.tau_plus - res.tau_minus)))

