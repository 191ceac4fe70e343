"""Built-in Stokes benchmark problems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import LevelSet, circle_levelset, square_levelset
from .mesh import subdivisions_for

Field = Callable[[np.ndarray], np.ndarray]

TWO_PI = 2.0 * np.pi


@dataclass
class ManufacturedCase:
    """Exact Stokes pair with data.  Vector fields map (..., 2) -> (..., 2),
    gradients map (..., 2) -> (..., 2, 2) with ``grad[..., i, j] = d u_i / d x_j``.
    """

    name: str
    levelset: LevelSet
    bbox: tuple[float, float, float, float]
    u: Field
    grad_u: Field
    p: Field
    f: Field
    g: Field
    h: float | None = None

    @property
    def width(self) -> float:
        return self.bbox[1] - self.bbox[0]


def trig_velocity(x: np.ndarray) -> np.ndarray:
    X, Y = x[..., 0], x[..., 1]
    u1 = (np.cos(TWO_PI * X) - 1.0) * np.sin(TWO_PI * Y)
    u2 = -(np.cos(TWO_PI * Y) - 1.0) * np.sin(TWO_PI * X)
    return np.stack([u1, u2], axis=-1)


def trig_velocity_grad(x: np.ndarray) -> np.ndarray:
    X, Y = x[..., 0], x[..., 1]
    sx, cx = np.sin(TWO_PI * X), np.cos(TWO_PI * X)
    sy, cy = np.sin(TWO_PI * Y), np.cos(TWO_PI * Y)
    g = np.empty(x.shape[:-1] + (2, 2))
    g[..., 0, 0] = -TWO_PI * sx * sy
    g[..., 0, 1] = TWO_PI * (cx - 1.0) * cy
    g[..., 1, 0] = -TWO_PI * (cy - 1.0) * cx
    g[..., 1, 1] = TWO_PI * sx * sy
    return g


def trig_pressure(x: np.ndarray) -> np.ndarray:
    return np.sin(TWO_PI * x[..., 0]) * np.cos(TWO_PI * x[..., 1])


def trig_force(x: np.ndarray) -> np.ndarray:
    """-Laplace(u) + grad(p) for the trigonometric pair."""
    X, Y = x[..., 0], x[..., 1]
    sx, cx = np.sin(TWO_PI * X), np.cos(TWO_PI * X)
    sy, cy = np.sin(TWO_PI * Y), np.cos(TWO_PI * Y)
    k2 = TWO_PI**2
    f1 = k2 * sy * (2.0 * cx - 1.0) + TWO_PI * cx * cy
    f2 = -k2 * sx * (2.0 * cy - 1.0) - TWO_PI * sx * sy
    return np.stack([f1, f2], axis=-1)


def square_case() -> ManufacturedCase:
    """Unit square [0, 1]^2 immersed in [-0.5, 1.5]^2.

    The exact velocity vanishes on the square's boundary; ``g`` is the exact
    velocity itself so the weak boundary data stays consistent on the
    linearized interface near the corners.
    """
    return ManufacturedCase(
        name="square",
        levelset=square_levelset(),
        bbox=(-0.5, 1.5, -0.5, 1.5),
        u=trig_velocity,
        grad_u=trig_velocity_grad,
        p=trig_pressure,
        f=trig_force,
        g=trig_velocity,
    )


def perturbed_square_delta(ell: int) -> float:
    return 2.0 * ell * 1e-3


def perturbed_square_family(ell: int, bbox=(-0.5, 1.5, -0.5, 1.5)) -> tuple[LevelSet, tuple, float]:
    """Square [-0.5 + d, 0.5 + d]^2 with d = 2 ell 1e-3, plus box and mesh size 0.15."""
    if not 1 <= ell <= 500:
        raise ValueError(f"ell must lie in 1..500, got {ell}")
    d = perturbed_square_delta(ell)
    lo, hi = -0.5 + d, 0.5 + d
    xmin, xmax, ymin, ymax = bbox
    # an edge on the box boundary would carry no Dirichlet condition, so touching is rejected too
    if lo <= xmin or hi >= xmax or lo <= ymin or hi >= ymax:
        raise ValueError(f"domain [{lo}, {hi}]^2 is not strictly inside the background box {bbox}")
    return square_levelset((d, d), 0.5), tuple(bbox), 0.15


def shifted_radius(ell: int, h: float, base: float = 0.1) -> float:
    d = 2.0 * ell * 1e-3
    return base + (d + 0.04) * 1e-2 * h


def _mean_over_disk(func: Field, radius: float, n: int = 64) -> float:
    # polar Gauss-Legendre quadrature of the mean over the disk
    r, wr = np.polynomial.legendre.leggauss(n)
    r = 0.5 * radius * (r + 1.0)
    wr = 0.5 * radius * wr
    t = np.linspace(0.0, 2.0 * np.pi, 2 * n, endpoint=False)
    R, Tq = np.meshgrid(r, t, indexing="ij")
    pts = np.stack([R * np.cos(Tq), R * np.sin(Tq)], axis=-1)
    w = (wr * r)[:, None] * (2.0 * np.pi / len(t))
    return float((func(pts) * w).sum() / (np.pi * radius**2))


def shifted_circle_family(ell: int, h: float = 0.05) -> tuple[LevelSet, ManufacturedCase]:
    """Disk of radius 0.1 + (d + 0.04) 1e-2 h in [-1, 1]^2 carrying the trigonometric pair."""
    if not 1 <= ell <= 250:
        raise ValueError(f"ell must lie in 1..250, got {ell}")
    if h <= 0:
        raise ValueError("mesh size must be positive")
    R = shifted_radius(ell, h)
    phi = circle_levelset(R)
    shift = _mean_over_disk(trig_pressure, R)

    def p(x):
        return trig_pressure(x) - shift

    case = ManufacturedCase(
        name="circle",
        levelset=phi,
        bbox=(-1.0, 1.0, -1.0, 1.0),
        u=trig_velocity,
        grad_u=trig_velocity_grad,
        p=p,
        f=trig_force,
        g=trig_velocity,
        h=h,
    )
    return phi, case


def polynomial_case(levelset: LevelSet, bbox) -> ManufacturedCase:
    """u = (y, x), p = x: divergence free and harmonic, f = (1, 0), g = u."""

    def u(x):
        return np.stack([x[..., 1], x[..., 0]], axis=-1)

    def grad_u(x):
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 1] = 1.0
        g[..., 1, 0] = 1.0
        return g

    def f(x):
        out = np.zeros(x.shape)
        out[..., 0] = 1.0
        return out

    return ManufacturedCase("polynomial", levelset, tuple(bbox), u, grad_u, lambda x: x[..., 0].copy(), f, u)


def zero_data_case(levelset: LevelSet, bbox) -> ManufacturedCase:
    zero = lambda x: np.zeros(x.shape)  # noqa: E731
    return ManufacturedCase("zero", levelset, tuple(bbox), zero, lambda x: np.zeros(x.shape[:-1] + (2, 2)),
                            lambda x: np.zeros(x.shape[:-1]), zero, zero)


CASE_NAMES = ("square", "shifted-square", "circle")


def mesh_subdivisions(case_bbox, h: float, measure: str = "diameter") -> int:
    return subdivisions_for(case_bbox[1] - case_bbox[0], h, measure)


def circle_subdivisions(h: float = 0.05) -> int:
    """Cells of side ``h`` on [-1, 1]^2.

    With h dividing 0.1 the grid has vertices on the circle of radius 0.1, so
    the radius shifts of the family produce slivers of relative size down to
    4e-4 of a cell.
    """
    return subdivisions_for(2.0, h, "side")
