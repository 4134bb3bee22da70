"""Time-reversal operator A, K = I − AΛ, and the Neumann series reconstruction."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NoProgress, TooLarge
from .extension import extension_system
from .fields import VectorField
from .norms import region_form
from .solver import BoundaryTrace, Problem, propagate, reverse

log = logging.getLogger(__name__)

__all__ = [
    "apply_A",
    "apply_K",
    "forward_map",
    "reconstruct",
    "IterationRecord",
    "ReconstructionReport",
    "assemble_small_oracle",
    "OracleResult",
    "h_operator_norm",
]

RATIO_STALL = 0.999
STALL_COUNT = 5


def forward_map(problem: Problem, f: np.ndarray) -> np.ndarray:
    """Λ on raw arrays: (..., d, *n) -> trace values (..., samples, |𝒮|, d)."""
    values, _, _ = propagate(problem, f)
    return values


def apply_A_array(problem: Problem, values: np.ndarray) -> np.ndarray:
    """A on raw trace arrays (k, samples, |𝒮|, d) -> fields (k, d, *n)."""
    medium = problem.medium
    ext_omega = extension_system(medium, problem.domain.discrete_omega)
    ext_omega0 = extension_system(medium, problem.domain.discrete_omega0)
    phi = ext_omega.extend(values[:, -1])
    v0, _ = reverse(problem, values, phi)
    return ext_omega0.project(v0)


def apply_A(problem: Problem, g: BoundaryTrace) -> VectorField:
    """A g = 𝒫_Ω₀ v(0), v the time-reversed solution with final data 𝓔_Ω(g(T))."""
    out = apply_A_array(problem, g.values[None])[0]
    return VectorField(problem.grid, out)


def apply_K_array(problem: Problem, f: np.ndarray) -> np.ndarray:
    return f - apply_A_array(problem, forward_map(problem, f))


def apply_K(problem: Problem, f: VectorField) -> VectorField:
    f.check_support(problem.domain.omega0)
    return VectorField(problem.grid, apply_K_array(problem, f.data[None])[0])


@dataclass
class IterationRecord:
    j: int
    residual: float  # ‖f_j − f_{j−1}‖_H(Ω₀); ‖f_0‖ for j = 0
    error: float = math.nan  # relative H(Ω₀) error against ground truth
    error_l2: float = math.nan
    ratio: float = math.nan  # residual_j / residual_{j−1}
    data_residual: float = math.nan  # ‖Λf_j − g‖ / ‖g‖ on the trace
    seconds: float = 0.0


@dataclass
class ReconstructionReport:
    iterations: list[IterationRecord]
    terminal_f: VectorField
    contraction_estimate: float
    config_echo: dict = field(default_factory=dict)
    converged: bool = False

    CSV_COLUMNS = ("j", "residual", "error", "ratio", "seconds", "error_l2", "data_residual")

    def rows(self, timing: bool = True) -> list[tuple]:
        out = []
        for r in self.iterations:
            secs = r.seconds if timing else math.nan
            out.append((r.j, r.residual, r.error, r.ratio, secs, r.error_l2, r.data_residual))
        return out

    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.iterations[2:]])

    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.iterations])


def reconstruct(
    problem: Problem,
    g: BoundaryTrace,
    max_iters: int = 8,
    tol: float = 1e-6,
    ground_truth: VectorField | None = None,
) -> ReconstructionReport:
    """Neumann series f = Σ Kʲ A g evaluated as f_k = A g + K f_{k−1}, f_0 = A g.

    Stops once ‖f_k − f_{k−1}‖ ≤ tol·‖f_1 − f_0‖ (in H(Ω₀)) or after
    ``max_iters`` iterations. Raises :class:`NoProgress` when the increment
    ratio stays above 0.999 for five consecutive iterations.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    medium = problem.medium
    omega0 = problem.domain.discrete_omega0.mask
    form = region_form(medium, omega0)
    hnorm = lambda a: math.sqrt(max(form.inner(a, a), 0.0))
    l2norm = lambda a: math.sqrt(max(form.l2(a, a), 0.0))
    gnorm = float(np.linalg.norm(g.values))
    truth = ground_truth.data if ground_truth is not None else None
    if truth is not None:
        t_h, t_l2 = hnorm(truth), l2norm(truth)

    def record(j, f, residual, ratio, t0):
        rec = IterationRecord(j, residual, ratio=ratio, seconds=time.perf_counter() - t0)
        if truth is not None:
            rec.error = hnorm(f - truth) / t_h if t_h > 0 else math.nan
            rec.error_l2 = l2norm(f - truth) / t_l2 if t_l2 > 0 else math.nan
        return rec

    t0 = time.perf_counter()
    Ag = apply_A_array(problem, g.values[None])[0]
    f = Ag
    records = [record(0, f, hnorm(f), math.nan, t0)]
    first = None
    prev_inc = None
    stalled = 0
    converged = False
    for k in range(1, max_iters + 1):
        t0 = time.perf_counter()
        trace_f = forward_map(problem, f[None])[0]
        if gnorm > 0:
            records[-1].data_residual = float(np.linalg.norm(trace_f - g.values)) / gnorm
        Kf = f - apply_A_array(problem, trace_f[None])[0]
        f_new = Ag + Kf
        inc = hnorm(f_new - f)
        ratio = inc / prev_inc if prev_inc else math.nan
        f = f_new
        records.append(record(k, f, inc, ratio, t0))
        log.info("iteration %d: increment %.3e ratio %.4f error %.3e", k, inc, ratio, records[-1].error)
        if first is None:
            first = inc
        if inc <= tol * first:
            converged = True
            break
        stalled = stalled + 1 if ratio > RATIO_STALL else 0
        prev_inc = inc
        report = _report(records, f, problem, converged)
        if stalled >= STALL_COUNT:
            raise NoProgress(
                f"increment ratio above {RATIO_STALL} for {STALL_COUNT} consecutive iterations; "
                "the observation time may violate the visibility condition",
                report=report,
            )
    return _report(records, f, problem, converged)


def _report(records, f, problem, converged):
    ratios = [r.ratio for r in records[2:] if not math.isnan(r.ratio)]
    return ReconstructionReport(
        iterations=list(records),
        terminal_f=VectorField(problem.grid, f.copy()),
        contraction_estimate=max(ratios) if ratios else math.nan,
        config_echo=config_echo(problem),
        converged=converged,
    )


def config_echo(problem: Problem) -> dict:
    grid = problem.grid
    cfg = problem.config
    return {
        "grid_lo": list(grid.lo),
        "grid_hi": list(grid.hi),
        "grid_n": list(grid.n),
        "dt": problem.dt,
        "nsteps": problem.nsteps,
        "t_final": cfg.t_final,
        "cfl": cfg.cfl,
        "pml_width": cfg.pml_width,
        "record_stride": cfg.record_stride,
        "c_plus": problem.medium.c_plus,
        "c_minus": problem.medium.c_minus,
    }


@dataclass
class OracleResult:
    Lambda: np.ndarray  # (trace entries, unknowns)
    A: np.ndarray  # (unknowns, trace entries)
    K: np.ndarray  # (unknowns, unknowns)
    mass: np.ndarray  # H(Ω₀) Gram matrix of the basis fields
    unknowns: np.ndarray  # stacked (component-major) indices of the basis fields
    h_norm: float
    spectral_radius: float
    power_iterations: int

    def embed(self, x: np.ndarray, grid) -> np.ndarray:
        """Coefficient vector -> field array (d, *n)."""
        out = np.zeros(grid.dim * int(np.prod(grid.n)))
        out[self.unknowns] = x
        return out.reshape((grid.dim,) + grid.n)

    def restrict(self, f: np.ndarray) -> np.ndarray:
        return f.reshape(-1)[self.unknowns]


def h_operator_norm(K: np.ndarray, mass: np.ndarray, max_iter: int = 200, stall: float = 1e-10, seed: int = 0):
    """‖K‖ in the inner product xᵀ·mass·y by power iteration. Returns ``(norm, iterations)``."""
    L = np.linalg.cholesky(mass)
    # C = Lᵀ K L⁻ᵀ has the same 2-norm as K in the mass inner product
    C = sla.solve_triangular(L, (L.T @ K).T, lower=True).T
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(C.shape[1])
    y /= np.linalg.norm(y)
    est = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        z = C.T @ (C @ y)
        new = math.sqrt(max(float(y @ z), 0.0))
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0, it
        y = z / nz
        if abs(new - est) <= stall * max(new, 1e-300):
            est = new
            break
        est = new
    return est, it


def assemble_small_oracle(
    problem: Problem,
    max_unknowns: int = 2000,
    max_points: int = 20,
    chunk: int = 256,
) -> OracleResult:
    """Explicit matrices Λ̂, Â and K̂ = I − ÂΛ̂ on a small grid.

    Basis fields are unit nodal vectors at the interior nodes of Ω₀; Λ̂ has
    one column per basis field, Â one column per unit trace entry.
    """
    grid = problem.grid
    if max(grid.n) > max_points:
        raise TooLarge(f"oracle grids are capped at {max_points} points per axis, got {grid.n}", key="n")
    d = grid.dim
    N = int(np.prod(grid.n))
    interior = problem.domain.discrete_omega0.interior_index
    unknowns = np.concatenate([i * N + interior for i in range(d)])
    n = unknowns.size
    if n > max_unknowns:
        raise TooLarge(f"{n} unknowns exceed the oracle cap of {max_unknowns}", key="n")

    lam_cols = []
    for s in range(0, n, chunk):
        idx = unknowns[s : s + chunk]
        basis = np.zeros((idx.size, d * N))
        basis[np.arange(idx.size), idx] = 1.0
        vals = forward_map(problem, basis.reshape((idx.size, d) + grid.n))
        lam_cols.append(vals.reshape(idx.size, -1))
    Lam = np.concatenate(lam_cols).T
    trace_shape = (problem.n_samples, len(problem.surface), d)
    M = Lam.shape[0]

    a_cols = []
    for s in range(0, M, chunk):
        k = min(chunk, M - s)
        vals = np.zeros((k, M))
        vals[np.arange(k), s + np.arange(k)] = 1.0
        out = apply_A_array(problem, vals.reshape((k,) + trace_shape))
        a_cols.append(out.reshape(k, -1)[:, unknowns])
    A = np.concatenate(a_cols).T

    K = np.eye(n) - A @ Lam
    H = region_form(problem.medium, problem.domain.discrete_omega0.mask).matrix
    mass = H[unknowns][:, unknowns].toarray()
    norm, its = h_operator_norm(K, mass)
    rho = float(np.max(np.abs(np.linalg.eigvals(K))))
    log.info("oracle: %d unknowns, %d trace entries, ‖K‖_H = %.6f, ρ(K) = %.6f", n, M, norm, rho)
    return OracleResult(Lam, A, K, mass, unknowns, norm, rho, its)
