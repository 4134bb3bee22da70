"""Elastic extension of boundary data and the projector 𝒫_U = I − 𝓔_U(·|∂U).

The extension minimises the discrete form (·,·)_H(U) over fields with the
prescribed values on the discrete boundary of U, so the interior equations
are the Euler-Lagrange equations of that form. This makes 𝒫_U the exact
H(U)-orthogonal projection onto fields vanishing on ∂U.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch, SolverDivergence
from .fields import VectorField
from .medium import DiscreteRegion, Medium, region_mask
from .norms import region_form

log = logging.getLogger(__name__)

__all__ = [
    "pcg",
    "ExtensionSystem",
    "extension_system",
    "elastic_extension",
    "project",
    "extension_orthogonality_defect",
]

RTOL = 1e-9


def pcg(A, b: np.ndarray, diag: np.ndarray, rtol: float = RTOL, maxiter: int = 10_000):
    """Jacobi-preconditioned conjugate gradients.

    ``b`` may hold several right-hand sides as columns; each column runs its
    own recurrence. Returns ``(x, iterations, relative_residuals)``.
    """
    single = b.ndim == 1
    B = b[:, None] if single else b
    X = np.zeros_like(B)
    bnorm = np.linalg.norm(B, axis=0)
    active = bnorm > 0
    if not active.any():
        out = X[:, 0] if single else X
        return out, 0, np.zeros(B.shape[1])
    minv = (1.0 / diag)[:, None]
    R = B.copy()
    Z = minv * R
    P = Z.copy()
    rz = np.sum(R * Z, axis=0)
    relres = np.where(active, 1.0, 0.0)
    it = 0
    while it < maxiter:
        if not np.any(relres > rtol):
            break
        AP = A @ P
        pap = np.sum(P * AP, axis=0)
        alpha = np.divide(rz, pap, out=np.zeros_like(rz), where=pap != 0)
        X += alpha * P
        R -= alpha * AP
        relres = np.divide(np.linalg.norm(R, axis=0), bnorm, out=np.zeros_like(bnorm), where=active)
        Z = minv * R
        rz_new = np.sum(R * Z, axis=0)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz != 0)
        P = Z + beta * P
        rz = rz_new
        it += 1
    if np.any(relres > rtol):
        raise SolverDivergence(
            f"CG reached {it} iterations with relative residual {relres.max():.3g} > {rtol:g}"
        )
    out = X[:, 0] if single else X
    return out, it, relres


class ExtensionSystem:
    """Interior/boundary splitting of the form matrix for one region."""

    def __init__(self, medium: Medium, region):
        grid = medium.grid
        self.medium = medium
        self.region = region if isinstance(region, DiscreteRegion) else DiscreteRegion(region, grid)
        form = region_form(medium, self.region.mask)
        N = form.N
        d = grid.dim
        self.N = N
        self.d = d
        self.I = np.concatenate([i * N + self.region.interior_index for i in range(d)])
        self.B = np.concatenate([i * N + self.region.boundary_index for i in range(d)])
        H = form.matrix
        HI = H[self.I]
        self.H_II = HI[:, self.I].tocsr()
        self.H_IB = HI[:, self.B].tocsr()
        self.diag = self.H_II.diagonal().copy()
        self.maxiter = int(200 * math.sqrt(max(self.region.interior_index.size, 1)))

    def boundary_values(self, data: np.ndarray) -> np.ndarray:
        """Nodal restriction to ∂U: (..., d, *n) -> (..., |∂U|, d)."""
        flat = data.reshape(data.shape[: -self.d] + (self.N,))
        return np.swapaxes(flat[..., self.region.boundary_index], -1, -2)

    def _stack(self, hb: np.ndarray) -> np.ndarray:
        # (k, |∂U|, d) -> (d*|∂U|, k), component-major like self.B
        return np.swapaxes(hb, -1, -2).reshape(hb.shape[0], -1).T

    def extend(self, hb: np.ndarray, rtol: float = RTOL) -> np.ndarray:
        """Extensions of boundary data ``hb`` (k, |∂U|, d) -> fields (k, d, *n)."""
        grid = self.medium.grid
        k = hb.shape[0]
        xb = self._stack(hb)
        rhs = -(self.H_IB @ xb)
        xi, it, res = pcg(self.H_II, rhs, self.diag, rtol=rtol, maxiter=self.maxiter)
        log.debug("extension CG: %d iterations, residual %.2e", it, res.max() if res.size else 0.0)
        out = np.zeros((k, self.d * self.N))
        out[:, self.I] = xi.T
        out[:, self.B] = xb.T
        return out.reshape((k, self.d) + grid.n)

    def project(self, data: np.ndarray, rtol: float = RTOL) -> np.ndarray:
        """𝒫_U for a batch of fields (k, d, *n)."""
        ext = self.extend(self.boundary_values(data), rtol)
        return (data - ext) * self.region.mask


def extension_system(medium: Medium, region) -> ExtensionSystem:
    mask = region_mask(region.mask if isinstance(region, DiscreteRegion) else region, medium.grid)
    key = ("extension", mask.tobytes())
    system = medium._cache.get(key)
    if system is None:
        system = medium._cache[key] = ExtensionSystem(medium, region)
    return system


def elastic_extension(medium: Medium, boundary_values: np.ndarray, region) -> VectorField:
    """φ with discrete Δ*φ = 0 inside U, φ = h on ∂U, φ = 0 outside U.

    ``boundary_values`` has shape (|∂U|, dim), ordered like the region's
    boundary nodes.
    """
    system = extension_system(medium, region)
    hb = np.asarray(boundary_values, dtype=float)
    if hb.shape != (len(system.region), medium.dim):
        raise GridMismatch(f"boundary values have shape {hb.shape}, expected {(len(system.region), medium.dim)}")
    return VectorField(medium.grid, system.extend(hb[None])[0])


def project(medium: Medium, f: VectorField, region) -> VectorField:
    if f.grid != medium.grid:
        raise GridMismatch("field grid does not match the medium grid")
    system = extension_system(medium, region)
    return VectorField(medium.grid, system.project(f.data[None])[0])


def extension_orthogonality_defect(medium: Medium, f: VectorField, region) -> float:
    """|‖𝒫f‖² + ‖𝓔f‖² − ‖f‖²| / max(1, ‖f‖²) in H(U)."""
    system = extension_system(medium, region)
    form = region_form(medium, system.region.mask)
    ext = system.extend(system.boundary_values(f.data)[None])[0]
    proj = (f.data - ext) * system.region.mask
    nf = form.inner(f.data, f.data)
    return abs(form.inner(proj, proj) + form.inner(ext, ext) - nf) / max(1.0, nf)
