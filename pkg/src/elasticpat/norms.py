"""Elastic energy form, L2 norm and quadratic energy on grid sub-regions.

The bilinear form

    (f, g)_H(U) = ∫_U λ (∇·f)(∇·g) + μ/2 [∇f + ∇fᵀ] : [∇g + ∇gᵀ] dx

is discretised node-wise. First derivatives are centred differences inside
the region and one-sided differences at the ends of each grid line of the
region, using only values inside the region. Quadrature weights are hᵈ,
halved once per axis at those line ends (the trapezoid rule on boxes). With
this closure the derivative is summation-by-parts on boxes, so linear fields
are exactly stationary for the form.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import GridMismatch, SupportViolation
from .fields import VectorField, WaveState
from .medium import Medium, region_mask

__all__ = [
    "RegionForm",
    "region_form",
    "h_inner",
    "h_seminorm",
    "l2_inner",
    "l2_norm",
    "quadratic_energy",
    "discrete_adjointness_defect",
    "korn_constant",
]


def _shift_ok(mask: np.ndarray, axis: int, step: int) -> np.ndarray:
    """True where the neighbour at ``step`` along ``axis`` exists and is in the mask."""
    out = np.zeros_like(mask)
    n = mask.shape[axis]
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if step > 0:
        dst[axis] = slice(0, n - step)
        src[axis] = slice(step, n)
    else:
        dst[axis] = slice(-step, n)
        src[axis] = slice(0, n + step)
    out[tuple(dst)] = mask[tuple(src)]
    return out & mask


class RegionForm:
    """Sparse discretisation of (·,·)_H(U) for one medium and one node mask."""

    def __init__(self, medium: Medium, mask: np.ndarray):
        grid = medium.grid
        self.medium = medium
        self.grid = grid
        self.mask = mask
        d = grid.dim
        N = int(np.prod(grid.n))
        self.N = N
        flat = np.arange(N).reshape(grid.n)
        weight = np.where(mask, grid.cell_volume, 0.0)
        self.D = []
        for a in range(d):
            h = grid.h[a]
            stride = int(np.prod(grid.n[a + 1:]))
            plus = _shift_ok(mask, a, 1)
            minus = _shift_ok(mask, a, -1)
            rows, cols, vals = [], [], []
            both = plus & minus
            p = flat[both]
            rows += [p, p]
            cols += [p + stride, p - stride]
            vals += [np.full(p.size, 0.5 / h), np.full(p.size, -0.5 / h)]
            fwd = plus & ~minus
            p = flat[fwd]
            rows += [p, p]
            cols += [p + stride, p]
            vals += [np.full(p.size, 1.0 / h), np.full(p.size, -1.0 / h)]
            bwd = minus & ~plus
            p = flat[bwd]
            rows += [p, p]
            cols += [p, p - stride]
            vals += [np.full(p.size, 1.0 / h), np.full(p.size, -1.0 / h)]
            self.D.append(
                sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(N, N),
                )
            )
            weight = np.where(fwd | bwd, 0.5 * weight, weight)
        self.weight = weight.ravel()
        self._lam_w = medium.lam.ravel() * self.weight
        self._mu_w = 0.5 * medium.mu.ravel() * self.weight

    def gradients(self, data: np.ndarray) -> list[list[np.ndarray]]:
        """``G[i][a]`` = ∂_a of component i, flattened."""
        d = self.grid.dim
        comps = data.reshape(d, self.N)
        return [[self.D[a] @ comps[i] for a in range(d)] for i in range(d)]

    def _strains(self, data):
        G = self.gradients(data)
        d = self.grid.dim
        div = G[0][0].copy()
        for i in range(1, d):
            div += G[i][i]
        E = [[G[i][j] + G[j][i] for j in range(d)] for i in range(d)]
        return div, E

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        d = self.grid.dim
        div_f, E_f = self._strains(f)
        if g is f:
            div_g, E_g = div_f, E_f
        else:
            div_g, E_g = self._strains(g)
        dens = self._lam_w * (div_f * div_g)
        shear = np.zeros(self.N)
        for i in range(d):
            for j in range(d):
                shear += E_f[i][j] * E_g[i][j]
        dens += self._mu_w * shear
        return float(np.sum(dens))

    def l2(self, f: np.ndarray, g: np.ndarray) -> float:
        d = self.grid.dim
        prod = np.zeros(self.N)
        fr = f.reshape(d, self.N)
        gr = g.reshape(d, self.N)
        for i in range(d):
            prod += fr[i] * gr[i]
        return float(np.sum(self.weight * prod))

    @property
    def matrix(self) -> sp.csr_matrix:
        """Symmetric matrix H with fᵀ H g = (f, g)_H(U) for stacked component vectors."""
        if getattr(self, "_matrix", None) is None:
            d = self.grid.dim
            zero = sp.csr_matrix((self.N, self.N))
            div = sp.hstack([self.D[i] for i in range(d)], format="csr")
            H = div.T @ sp.diags(self._lam_w) @ div
            for i in range(d):
                for j in range(d):
                    blocks = [zero] * d
                    blocks[i] = blocks[i] + self.D[j]
                    blocks[j] = blocks[j] + self.D[i]
                    B = sp.hstack(blocks, format="csr")
                    H = H + B.T @ sp.diags(self._mu_w) @ B
            self._matrix = H.tocsr()
        return self._matrix


def region_form(medium: Medium, region=None) -> RegionForm:
    """Cached :class:`RegionForm` for ``region`` (descriptor, mask or None)."""
    mask = region_mask(region, medium.grid)
    key = ("form", mask.tobytes())
    form = medium._cache.get(key)
    if form is None:
        form = RegionForm(medium, mask)
        medium._cache[key] = form
    return form


def _data(f, grid):
    if isinstance(f, VectorField):
        if f.grid != grid:
            raise GridMismatch("field grid does not match the medium grid")
        return f.data
    return np.asarray(f, dtype=float)


def h_inner(medium: Medium, f: VectorField, g: VectorField, region=None) -> float:
    if isinstance(f, VectorField) and isinstance(g, VectorField) and f.grid != g.grid:
        raise GridMismatch("fields live on different grids")
    form = region_form(medium, region)
    fd = _data(f, medium.grid)
    gd = fd if g is f else _data(g, medium.grid)
    return form.inner(fd, gd)


def h_seminorm(medium: Medium, f: VectorField, region=None) -> float:
    return float(np.sqrt(max(h_inner(medium, f, f, region), 0.0)))


def l2_inner(medium: Medium, f: VectorField, g: VectorField, region=None) -> float:
    if isinstance(f, VectorField) and isinstance(g, VectorField) and f.grid != g.grid:
        raise GridMismatch("fields live on different grids")
    form = region_form(medium, region)
    return form.l2(_data(f, medium.grid), _data(g, medium.grid))


def l2_norm(medium: Medium, f: VectorField, region=None) -> float:
    return float(np.sqrt(max(l2_inner(medium, f, f, region), 0.0)))


def quadratic_energy(medium: Medium, state: WaveState, region=None) -> float:
    """E_U(u, t) = ‖u(t)‖²_H(U) + ‖u_t(t)‖²_L²(U)."""
    return h_inner(medium, state.u, state.u, region) + l2_inner(medium, state.ut, state.ut, region)


def discrete_adjointness_defect(medium: Medium, f: VectorField, g: VectorField, region=None) -> float:
    """|(−Δ*f, g)_L² − (f, g)_H| / max(1, |(f, g)_H|) with the solver's Δ*.

    ``g`` must vanish within two cells of the region boundary.
    """
    from .solver import ElasticOperator

    mask = region_mask(region, medium.grid)
    st = np.ones((3,) * medium.dim, dtype=bool)
    deep = ndimage.binary_erosion(mask, structure=st, iterations=2, border_value=0)
    gd = _data(g, medium.grid)
    if np.max(np.abs(gd[:, ~deep]), initial=0.0) > 0.0:
        raise SupportViolation("g must vanish within 2h of the region boundary")
    fd = _data(f, medium.grid)
    lap = ElasticOperator.for_medium(medium).apply(fd)
    lhs = -l2_inner(medium, lap, gd, region)
    rhs = h_inner(medium, fd, gd, region)
    return abs(lhs - rhs) / max(1.0, abs(rhs))


def korn_constant(medium: Medium, region, n_trials: int = 64, seed: int = 0) -> float:
    """Smallest observed ratio ‖f‖²_H / ‖f‖²_H¹ over random fields kept 2h inside ``region``.

    The H¹ norm uses the same derivatives and weights as the form. Trial fields
    are white noise smoothed by a few Jacobi sweeps so both ends of the
    spectrum get probed.
    """
    mask = region_mask(region, medium.grid)
    st = np.ones((3,) * medium.dim, dtype=bool)
    deep = ndimage.binary_erosion(mask, structure=st, iterations=2, border_value=0)
    form = region_form(medium, region)
    rng = np.random.default_rng(seed)
    d = medium.dim
    best = np.inf
    for k in range(n_trials):
        f = rng.standard_normal((d,) + medium.grid.n)
        for _ in range(k % 8):
            f = ndimage.uniform_filter(f, size=(1,) + (3,) * d, mode="constant")
        f[:, ~deep] = 0.0
        G = form.gradients(f)
        h1 = form.l2(f, f) + sum(float(np.sum(form.weight * G[i][a] ** 2)) for i in range(d) for a in range(d))
        if h1 > 0:
            best = min(best, form.inner(f, f) / h1)
    return float(best)
