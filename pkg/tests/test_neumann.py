import math

import numpy as np
import pytest
import scipy.linalg as sla

from elasticpat import (
    BoundaryTrace,
    NoProgress,
    SupportViolation,
    TooLarge,
    VectorField,
    apply_A,
    apply_K,
    assemble_small_oracle,
    forward_solve,
    make_phantom,
    reconstruct,
    relative_error,
)
from elasticpat.neumann import apply_A_array, apply_K_array, forward_map, h_operator_norm
from elasticpat.norms import region_form

from conftest import disk_setup


@pytest.fixture(scope="module")
def tiny():
    # 20² oracle grid, Ω₀ = disk of radius 0.5
    return disk_setup(n=20, t_final=1.5, r0=0.5, pml_width=3)


@pytest.fixture(scope="module")
def oracle(tiny):
    return assemble_small_oracle(tiny)


def _coeffs(oracle, seed, k=1):
    return np.random.default_rng(seed).standard_normal((k, oracle.unknowns.size))


def _fields(oracle, grid, X):
    return np.stack([oracle.embed(x, grid) for x in X])


def test_oracle_shapes(tiny, oracle):
    n = oracle.unknowns.size
    m = tiny.n_samples * len(tiny.surface) * 2
    assert oracle.Lambda.shape == (m, n)
    assert oracle.A.shape == (n, m)
    assert oracle.K.shape == (n, n)
    np.testing.assert_allclose(oracle.mass, oracle.mass.T, atol=1e-14)


def test_oracle_matches_pipeline(tiny, oracle):
    X = _coeffs(oracle, 0, 4)
    F = _fields(oracle, tiny.grid, X)
    vals = forward_map(tiny, F)
    np.testing.assert_allclose(vals.reshape(4, -1), X @ oracle.Lambda.T, rtol=0, atol=1e-12)
    AL = apply_A_array(tiny, vals)
    got = np.stack([oracle.restrict(a) for a in AL])
    want = X @ (oracle.A @ oracle.Lambda).T
    assert np.max(np.abs(got - want)) <= 1e-8 * np.max(np.abs(want))
    Kf = apply_K_array(tiny, F)
    got = np.stack([oracle.restrict(a) for a in Kf])
    assert np.max(np.abs(got - X @ oracle.K.T)) <= 1e-8 * np.max(np.abs(got))


def test_power_iteration_matches_dense(oracle):
    # largest generalised eigenvalue of Kᵀ M K x = s M x
    s = sla.eigh(oracle.K.T @ oracle.mass @ oracle.K, oracle.mass, eigvals_only=True)
    assert oracle.h_norm == pytest.approx(math.sqrt(s[-1]), rel=1e-8)
    assert oracle.spectral_radius <= oracle.h_norm * (1 + 1e-10)


def test_power_iteration_diagonal():
    K = np.diag([0.3, -0.9, 0.5])
    norm, _ = h_operator_norm(K, np.eye(3))
    assert norm == pytest.approx(0.9, rel=1e-9)
    M = np.diag([4.0, 1.0, 2.0])
    norm, _ = h_operator_norm(K, M)
    assert norm == pytest.approx(0.9, rel=1e-9)


def test_truncated_series_matches_iterates(tiny, oracle):
    x = _coeffs(oracle, 7)[0]
    f = VectorField(tiny.grid, oracle.embed(x, tiny.grid))
    g, _ = forward_solve(tiny, f)
    Ag = oracle.A @ g.values.reshape(-1)
    term, total = Ag.copy(), Ag.copy()
    for _ in range(4):
        term = oracle.K @ term
        total += term
    rep = reconstruct(tiny, g, max_iters=4, tol=1e-300)
    got = oracle.restrict(rep.terminal_f.data)
    assert np.max(np.abs(got - total)) <= 1e-7 * np.max(np.abs(total))


def test_one_term_consistency(tiny, oracle):
    f = VectorField(tiny.grid, oracle.embed(_coeffs(oracle, 9)[0], tiny.grid))
    g, _ = forward_solve(tiny, f)
    f0 = apply_A(tiny, g)
    f1 = reconstruct(tiny, g, max_iters=1, tol=1e-300).terminal_f
    Kf0 = apply_K(tiny, f0)
    assert np.max(np.abs((f1 - f0).data - Kf0.data)) <= 1e-10 * max(1.0, np.max(np.abs(Kf0.data)))


def test_zero_data(tiny):
    rep = reconstruct(tiny, BoundaryTrace.zeros(tiny))
    assert rep.converged
    assert [r.j for r in rep.iterations] == [0, 1]
    assert not rep.terminal_f.data.any()
    assert not apply_K(tiny, VectorField.zeros(tiny.grid)).data.any()
    assert not apply_A(tiny, BoundaryTrace.zeros(tiny)).data.any()


def test_support_preserved(tiny, oracle):
    f = VectorField(tiny.grid, oracle.embed(_coeffs(oracle, 2)[0], tiny.grid))
    g, _ = forward_solve(tiny, f)
    S0 = tiny.domain.discrete_omega0
    for out in (apply_A(tiny, g), apply_K(tiny, f), reconstruct(tiny, g, max_iters=3).terminal_f):
        assert np.max(np.abs(out.data[:, ~S0.mask]), initial=0.0) <= 1e-12
        assert np.max(np.abs(out.data[:, S0.boundary]), initial=0.0) <= 1e-12


def test_apply_K_rejects_wide_support(tiny):
    f = np.zeros((2,) + tiny.grid.n)
    f[0, 10, 3] = 1.0
    with pytest.raises(SupportViolation):
        apply_K(tiny, VectorField(tiny.grid, f))


def test_A_Lambda_bounded():
    # ‖AΛf‖ ≤ 2‖f‖ over random fields, measured directly through the pipeline
    p = disk_setup(n=32, t_final=2.5, r0=0.5, pml_width=4)
    S0 = p.domain.discrete_omega0
    F = np.random.default_rng(4).standard_normal((50, 2) + p.grid.n) * S0.interior
    out = apply_A_array(p, forward_map(p, F))
    form = region_form(p.medium, S0.mask)
    for f, a in zip(F, out):
        assert math.sqrt(form.inner(a, a)) <= 2.0 * math.sqrt(form.inner(f, f))


def test_K_contracts_for_long_windows():
    # homogeneous medium, T = 4 ≥ twice the shear diameter of the unit disk
    p = disk_setup(n=32, t_final=4.0, r0=0.5, pml_width=4)
    S0 = p.domain.discrete_omega0
    F = np.random.default_rng(5).standard_normal((8, 2) + p.grid.n) * S0.interior
    form = region_form(p.medium, S0.mask)
    for f, kf in zip(F, apply_K_array(p, F)):
        assert form.inner(kf, kf) < form.inner(f, f)


def test_reconstruction_improves_error():
    p = disk_setup(n=64, t_final=2.5, r0=0.6, pml_width=8)
    truth = make_phantom("random-smooth", {"sigma": 0.05, "seed": 3}, p.domain)
    g, _ = forward_solve(p, truth)
    rep = reconstruct(p, g, max_iters=5, ground_truth=truth)
    err = rep.errors()
    assert np.all(np.diff(err) < 0)
    assert err[-1] < 0.05
    assert rep.iterations[-1].error == pytest.approx(
        relative_error(p.medium, rep.terminal_f, truth, "H", p.domain.discrete_omega0.mask), rel=1e-12
    )
    r = rep.ratios()
    assert np.all(r < 1)
    assert rep.contraction_estimate == pytest.approx(r.max())
    rows = rep.rows(timing=False)
    assert all(math.isnan(row[4]) for row in rows)
    assert rep.config_echo["nsteps"] == p.nsteps


def test_no_progress_when_window_too_short():
    p = disk_setup(n=32, t_final=0.2, r0=0.5, pml_width=4)
    truth = make_phantom("bumps", {"bumps": [{"center": (0, 0), "sigma": 0.02, "amplitude": 1.0}]}, p.domain)
    g, _ = forward_solve(p, truth)
    with pytest.raises(NoProgress) as e:
        reconstruct(p, g, max_iters=40)
    rep = e.value.report
    assert rep is not None
    assert np.all(rep.ratios()[-5:] > 0.999)


def test_iteration_limits(tiny):
    with pytest.raises(ValueError):
        reconstruct(tiny, BoundaryTrace.zeros(tiny), max_iters=0)


def test_oracle_size_caps():
    with pytest.raises(TooLarge):
        assemble_small_oracle(disk_setup(n=24, r0=0.5, pml_width=3))
    with pytest.raises(TooLarge) as e:
        assemble_small_oracle(disk_setup(n=20, r0=0.5, pml_width=3), max_unknowns=4)
    assert e.value.key == "n"
