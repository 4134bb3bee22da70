"""Ground-truth initial displacements supported in Ω₀."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, SupportViolation, ZeroTruth
from .fields import VectorField
from .medium import DomainSpec, Medium
from .norms import region_form

__all__ = ["gaussian_profile", "support_radius", "make_phantom", "relative_error", "PHANTOM_KINDS"]

PHANTOM_KINDS = ("bumps", "annulus", "random-smooth")


CUTOFF = 1e-14
# Gaussians exp(−ρ²/2σ²) drop to CUTOFF at ρ = SUPPORT_SIGMAS·σ and are set to zero beyond
SUPPORT_SIGMAS = float(np.sqrt(2.0 * np.log(1.0 / CUTOFF)))


def gaussian_profile(rho: np.ndarray, sigma: float) -> np.ndarray:
    """exp(−ρ²/2σ²), zeroed where it falls below 1e−14 (ρ ≥ 8.03σ)."""
    rho = np.asarray(rho, dtype=float)
    out = np.exp(-0.5 * (rho / sigma) ** 2)
    out[np.abs(rho) >= SUPPORT_SIGMAS * sigma] = 0.0
    return out


def support_radius(sigma: float) -> float:
    return SUPPORT_SIGMAS * sigma


def _amplitude(a, d):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.size == 1:
        a = np.full(d, a[0])
    if a.shape != (d,):
        raise ConfigError(f"amplitude needs 1 or {d} entries", key="amplitude")
    return a


def _check_fits(domain: DomainSpec, center, radius):
    # the support ball must sit 2h inside Ω₀
    margin = 2.0 * max(domain.grid.h)
    depth = -float(domain.omega0.level(np.asarray(center, dtype=float)))
    if depth < radius + margin * (1 - 1e-9):
        raise SupportViolation(
            f"phantom support (centre {tuple(float(v) for v in center)}, radius {radius:g}) does not fit "
            f"in omega0 with a {margin:.3g} margin"
        )


def make_phantom(kind: str, params: dict, domain: DomainSpec) -> VectorField:
    """Build a smooth phantom from truncated Gaussians.

    kinds and their ``params``:

    * ``bumps``: ``bumps`` = list of dicts with ``center``, ``sigma``,
      ``amplitude`` (scalar or one entry per component). Each adds
      amplitude·exp(−|x − center|²/2σ²).
    * ``annulus``: radial displacement amplitude·exp(−(r − radius)²/2σ²)·x̂
      about ``center`` (default Ω₀'s centre).
    * ``random-smooth``: ``seed``, ``sigma`` of a Gaussian window about
      ``center``, ``modes`` (default 4), ``amplitude`` (default 1). Random
      low-frequency plane waves times the window.

    Every Gaussian is cut at 1e−14 of its peak; that radius must sit 2h
    inside Ω₀.
    """
    grid = domain.grid
    d = grid.dim
    x = grid.coords()
    data = np.zeros((d,) + grid.n)
    col = (d,) + (1,) * d

    if kind == "bumps":
        for b in params.get("bumps", []):
            c = np.asarray(b["center"], dtype=float)
            if c.shape != (d,):
                raise ConfigError(f"bump center needs {d} coordinates", key="center")
            sigma = _positive(b["sigma"], "sigma")
            _check_fits(domain, c, support_radius(sigma))
            a = _amplitude(b.get("amplitude", 1.0), d)
            rho = np.sqrt(np.sum((x - c.reshape(col)) ** 2, axis=0))
            data += a.reshape(col) * gaussian_profile(rho, sigma)
    elif kind == "annulus":
        c = np.asarray(params.get("center", domain.omega0.center), dtype=float)
        R = _positive(params["radius"], "radius")
        sigma = _positive(params["sigma"], "sigma")
        if R < support_radius(sigma):
            raise ConfigError("annulus radius must exceed 8.03 sigma", key="radius")
        _check_fits(domain, c, R + support_radius(sigma))
        a = float(params.get("amplitude", 1.0))
        rel = x - c.reshape(col)
        r = np.sqrt(np.sum(rel**2, axis=0))
        data = a * gaussian_profile(r - R, sigma) * rel / np.where(r > 0, r, 1.0)
    elif kind == "random-smooth":
        c = np.asarray(params.get("center", domain.omega0.center), dtype=float)
        sigma = _positive(params["sigma"], "sigma")
        R = support_radius(sigma)
        _check_fits(domain, c, R)
        modes = int(params.get("modes", 4))
        if modes < 1:
            raise ConfigError("modes must be >= 1", key="modes")
        amp = float(params.get("amplitude", 1.0))
        rng = np.random.default_rng(int(params.get("seed", 0)))
        rel = x - c.reshape(col)
        window = gaussian_profile(np.sqrt(np.sum(rel**2, axis=0)), sigma)
        for i in range(d):
            comp = np.zeros(grid.n)
            for _ in range(modes):
                k = rng.uniform(-1.0, 1.0, d) / sigma
                phase = rng.uniform(0, 2 * np.pi)
                comp += rng.standard_normal() * np.cos(np.tensordot(k, rel, axes=1) + phase)
            data[i] = amp * window * comp / np.sqrt(modes)
    else:
        raise ConfigError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}", key="kind")

    return VectorField(grid, data, support=domain.omega0)


def _positive(v, key):
    v = float(v)
    if not v > 0:
        raise ConfigError(f"{key} must be positive", key=key)
    return v


def relative_error(medium: Medium, f_hat: VectorField, f_true: VectorField, norm: str = "H", region=None) -> float:
    """‖f_hat − f_true‖ / ‖f_true‖ over ``region`` (default: whole grid) in the H or L2 norm."""
    if f_hat.grid != f_true.grid:
        from .errors import GridMismatch

        raise GridMismatch("fields live on different grids")
    form = region_form(medium, region)
    if norm == "H":
        q = form.inner
    elif norm == "L2":
        q = form.l2
    else:
        raise ValueError(f"norm must be 'H' or 'L2', got {norm!r}")
    ref = np.sqrt(max(q(f_true.data, f_true.data), 0.0))
    if ref <= 1e-14:
        raise ZeroTruth("ground truth has (near) zero norm")
    diff = f_hat.data - f_true.data
    return float(np.sqrt(max(q(diff, diff), 0.0)) / ref)
