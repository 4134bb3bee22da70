import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from elasticpat import Ball, Box, DomainSpec, Grid, Problem, SolverConfig, build_medium

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile("default")

# criterion lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def disk_setup(n=48, lam=1.0, mu=1.0, t_final=1.0, r0=0.6, pml_width=4, pml=True, half=1.5, cfl=0.5):
    grid = Grid((-half, -half), (half, half), (n, n))
    medium = build_medium(grid, lam, mu)
    domain = DomainSpec(grid, Ball((0.0, 0.0), 1.0), Ball((0.0, 0.0), r0))
    cfg = SolverConfig(t_final=t_final, cfl=cfl, pml_width=pml_width, pml=pml)
    return Problem(medium, domain, cfg)


def smooth_random(grid, mask, rng, k=None, passes=3):
    """White noise smoothed a few times and cut to ``mask`` shrunk by 2 cells."""
    from scipy import ndimage

    d = grid.dim
    k = 1 if k is None else k
    f = rng.standard_normal((k, d) + grid.n)
    for _ in range(passes):
        f = ndimage.uniform_filter(f, size=(1, 1) + (3,) * d, mode="constant")
    deep = ndimage.binary_erosion(mask, structure=np.ones((3,) * d, bool), iterations=2)
    f[:, :, ~deep] = 0.0
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_problem():
    return disk_setup()


@pytest.fixture(scope="session")
def unit_square_grid():
    # unit square [0, 1]² sits exactly on nodes: h = 0.05
    return Grid((-0.5, -0.5), (1.5, 1.5), (41, 41))


@pytest.fixture(scope="session")
def unit_square():
    return Box((0.0, 0.0), (1.0, 1.0))
