"""Oracle checks run by ``cutstokes selftest`` and by the test suite.

Each check returns a :class:`CheckResult` rather than raising, so a report
can list every outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .analysis import DiscreteSolution, compute_errors
from .assembly import StokesParams, assemble_system
from .cases import polynomial_case, shifted_circle_family, square_case
from .geometry import circle_levelset, volume_rule
from .linalg import solve
from .mesh import build_structured_mesh

QUADRATURE_TOL = 1e-12
SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
REPRODUCTION_TOL = 1e-8
FD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{flag}] {self.name}: {self.value:.3e} (threshold {self.threshold:.0e}){extra}"


# -- polygon moments ---------------------------------------------------------


def clip_halfplane(poly: np.ndarray, grad: np.ndarray, c: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon to {x : grad . x + c < 0}."""
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        fp, fq = grad @ p + c, grad @ q + c
        if fp < 0:
            out.append(p)
        if (fp < 0) != (fq < 0):
            out.append(p + fp / (fp - fq) * (q - p))
    return np.array(out).reshape(-1, 2)


def polygon_moment(poly: np.ndarray, a: int, b: int) -> float:
    """Integral of x^a y^b over a simple counter-clockwise polygon.

    Uses the divergence theorem with the field (x^(a+1) y^b / (a+1), 0) and
    Gauss-Legendre on each edge, exact for these polynomial integrands.
    """
    t, w = np.polynomial.legendre.leggauss(a + b + 2)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    total = 0.0
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        pts = p + np.outer(t, q - p)
        # n_x ds = dy along a counter-clockwise edge
        total += np.sum(w * pts[:, 0] ** (a + 1) * pts[:, 1] ** b) * (q[1] - p[1]) / (a + 1)
    return float(total)


def _linear_through(tri: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, float]:
    m = np.column_stack([tri, np.ones(3)])
    coef = np.linalg.solve(m, vals)
    return coef[:2], float(coef[2])


def check_quadrature(rng: np.random.Generator, trials: int = 200, max_degree: int = 8) -> CheckResult:
    """Cut-triangle volume rules against exact polygon moments."""
    worst = 0.0
    for _ in range(trials):
        tri = rng.uniform(-1.0, 1.0, (3, 2))
        area2 = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0])
        if abs(area2) < 1e-2:
            continue
        if area2 < 0:
            tri = tri[[0, 2, 1]]
        vals = rng.uniform(-1.0, 1.0, 3)
        grad, c = _linear_through(tri, vals)
        poly = clip_halfplane(tri, grad, c)
        degree = int(rng.integers(0, max_degree + 1))
        rule = volume_rule(tri, vals, degree)
        for a in range(degree + 1):
            b = degree - a
            exact = polygon_moment(poly, a, b) if len(poly) >= 3 else 0.0
            approx = float(np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b)) if len(rule) else 0.0
            worst = max(worst, abs(approx - exact))
    return CheckResult("quadrature exactness vs polygon moments", worst <= QUADRATURE_TOL, worst, QUADRATURE_TOL)


# -- assembled operators -----------------------------------------------------


def cut_configuration(rng: np.random.Generator):
    """Random circle cutting the unit square."""
    center = rng.uniform(0.4, 0.6, 2)
    radius = rng.uniform(0.25, 0.4)
    return circle_levelset(radius, tuple(center))


def _small_system(k: int, beta: float | None, rng: np.random.Generator, n: int = 4):
    mesh = build_structured_mesh((0.0, 1.0, 0.0, 1.0), n)
    return assemble_system(mesh, cut_configuration(rng), StokesParams(k, beta=beta))


def check_symmetry(rng: np.random.Generator, beta: float | None = None) -> CheckResult:
    worst = 0.0
    for k in (1, 2, 3):
        mat = _small_system(k, beta, rng).matrix
        worst = max(worst, abs(mat - mat.T).max() / abs(mat).max())
    return CheckResult("assembled matrix symmetry", worst <= SYMMETRY_TOL, worst, SYMMETRY_TOL)


def velocity_min_eigenvalue(system) -> float:
    """Smallest eigenvalue of the velocity block relative to its largest magnitude."""
    ev = la.eigvalsh(system.velocity_block().toarray())
    return float(ev.min() / np.abs(ev).max())


def check_coercivity(rng: np.random.Generator, beta: float | None = None) -> CheckResult:
    worst = math.inf
    for k in (1, 2, 3):
        worst = min(worst, velocity_min_eigenvalue(_small_system(k, beta, rng)))
    return CheckResult("velocity block positive semidefinite", worst >= -PSD_TOL, worst, -PSD_TOL,
                       "smallest eigenvalue / norm")


def check_reproduction(rng: np.random.Generator, beta: float | None = None, configurations: int = 3) -> CheckResult:
    """u = (y, x), p = x - c must be reproduced exactly for every order."""
    worst = 0.0
    bbox = (0.0, 1.0, 0.0, 1.0)
    for _ in range(configurations):
        phi = cut_configuration(rng)
        mesh = build_structured_mesh(bbox, int(rng.integers(5, 9)))
        case = polynomial_case(phi, bbox)
        for k in (1, 2, 3):
            system = assemble_system(mesh, phi, StokesParams(k, beta=beta), case)
            sol = DiscreteSolution(solve(system).x, system)
            rep = compute_errors(sol, case.u, case.p, case.grad_u)
            worst = max(worst, rep.velocity_H1, rep.pressure_L2)
    return CheckResult("polynomial Stokes reproduction", worst <= REPRODUCTION_TOL, worst, REPRODUCTION_TOL,
                       f"{configurations} cut configurations, k = 1, 2, 3")


def pde_residual(case, points: np.ndarray, step: float = 1e-5) -> float:
    """Relative max-norm of -Laplace(u) + grad(p) - f by central differences."""
    e = np.eye(2) * step
    lap = np.zeros(points.shape)
    gp = np.zeros(points.shape)
    u0 = case.u(points)
    for d in range(2):
        lap += (case.u(points + e[d]) - 2.0 * u0 + case.u(points - e[d])) / step**2
        gp[:, d] = (case.p(points + e[d]) - case.p(points - e[d])) / (2.0 * step)
    f = case.f(points)
    return float(np.abs(-lap + gp - f).max() / np.abs(f).max())


def check_cases(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    pts_sq = rng.uniform(0.0, 1.0, (100, 2))
    worst = max(worst, pde_residual(square_case(), pts_sq))
    _, circ = shifted_circle_family(1)
    r = 0.1 * np.sqrt(rng.uniform(0.0, 1.0, 100))
    t = rng.uniform(0.0, 2.0 * np.pi, 100)
    worst = max(worst, pde_residual(circ, np.column_stack([r * np.cos(t), r * np.sin(t)])))
    return CheckResult("manufactured PDE residual (finite differences)", worst <= FD_TOL, worst, FD_TOL)


def run_all(seed: int = 0, beta: float | None = None) -> list[CheckResult]:
    """Every check with a single seeded generator; ``beta`` overrides the penalty."""
    rng = np.random.default_rng(seed)
    return [
        check_quadrature(rng),
        check_symmetry(rng, beta),
        check_coercivity(rng, beta),
        check_reproduction(rng, beta),
        check_cases(rng),
    ]
