"""Displacement fields and wave states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, SupportViolation
from .medium import Grid, region_mask

SUPPORT_TOL = 1e-14


@dataclass
class VectorField:
    """``dim`` displacement components on a grid; ``data`` has shape ``(dim, *grid.n)``.

    ``support`` optionally declares the region outside of which the field
    must vanish.
    """

    grid: Grid
    data: np.ndarray
    support: object = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        expected = (self.grid.dim,) + self.grid.n
        if self.data.shape != expected:
            raise GridMismatch(f"field data shape {self.data.shape}, expected {expected}")
        if self.support is not None:
            self.check_support(self.support)

    @classmethod
    def zeros(cls, grid: Grid, support=None) -> "VectorField":
        return cls(grid, np.zeros((grid.dim,) + grid.n), support)

    def check_support(self, region) -> None:
        outside = ~region_mask(region, self.grid)
        leak = np.max(np.abs(self.data[:, outside]), initial=0.0)
        if leak > SUPPORT_TOL:
            raise SupportViolation(f"field is {leak:.3g} outside its declared support")

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.data.copy(), self.support)

    def _check(self, other: "VectorField"):
        if other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(self.grid, self.data + other.data)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(self.grid, self.data - other.data)

    def __mul__(self, a: float) -> "VectorField":
        return VectorField(self.grid, a * self.data, self.support)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.data, self.support)


@dataclass
class WaveState:
    """The pair (u, u_t) at ``time``."""

    u: VectorField
    ut: VectorField
    time: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.ut.grid:
            raise GridMismatch("u and ut must share one grid")
