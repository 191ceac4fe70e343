"""Error norms, convergence tables, and field sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import build_quadrature

TABLE_COLUMNS = ("h", "dofs", "err_u_H1", "eoc_u", "err_p_L2", "eoc_p", "cond", "seconds")


@dataclass
class ErrorReport:
    h_max: float
    velocity_H1: float
    pressure_L2: float
    dofs: int
    kappa: float | None = None
    seconds: float = 0.0
    h: float | None = None

    @property
    def h_label(self) -> float:
        return self.h if self.h is not None else self.h_max


@dataclass
class DiscreteSolution:
    """Coefficients of (u_h, p_h) on the active elements of a system."""

    coeffs: np.ndarray
    system: object

    @property
    def multiplier(self) -> float:
        return float(self.coeffs[self.system.dofmap.multiplier])

    def blocks(self) -> np.ndarray:
        dm = self.system.dofmap
        return self.coeffs[: dm.multiplier].reshape(dm.n_active, 3, dm.dim)

    def evaluate(self, elems: np.ndarray, points: np.ndarray, grads: bool = False):
        """Velocity (P, 2), pressure (P,) and optionally velocity gradient (P, 2, 2)."""
        basis = self.system.basis
        loc = self.system.view.active_index[elems]
        if np.any(loc < 0):
            raise ValueError("points on inactive elements")
        c = self.blocks()[loc]
        val, grad = basis.values_grads(elems, points)
        u = np.einsum("pcj,pj->pc", c[:, :2], val)
        p = np.einsum("pj,pj->p", c[:, 2], val)
        if not grads:
            return u, p
        return u, p, np.einsum("pcj,pjd->pcd", c[:, :2], grad)


def error_rule(system, degree: int | None = None):
    """Volume rule on T ∩ Ω used for errors; the assembly rule when ``degree`` is None."""
    if degree is None:
        return system.quad.volume
    return build_quadrature(system.view, degree, 1).volume


def exact_sum(x: np.ndarray) -> float:
    return float(math.fsum(x))


def compute_errors(solution: DiscreteSolution, exact_u, exact_p, exact_grad_u, degree: int | None = None,
                   h: float | None = None) -> ErrorReport:
    """H1 velocity error (L2 plus broken seminorm) and L2 pressure error over Ω.

    Both pressures are shifted to zero mean over Ω before comparison.
    """
    system = solution.system
    vol = error_rule(system, degree)
    u_h, p_h, du_h = solution.evaluate(vol.elem, vol.points, grads=True)
    w = vol.weights
    area = w.sum()
    eu = exact_u(vol.points) - u_h
    edu = exact_grad_u(vol.points) - du_h
    p_ex = exact_p(vol.points)
    ep = (p_ex - exact_sum(w * p_ex) / area) - (p_h - exact_sum(w * p_h) / area)
    h1 = exact_sum(w * (eu**2).sum(axis=1)) + exact_sum(w * (edu**2).sum(axis=(1, 2)))
    l2p = exact_sum(w * ep**2)
    mesh = system.view.mesh
    return ErrorReport(mesh.h_max, math.sqrt(max(h1, 0.0)), math.sqrt(max(l2p, 0.0)), system.dofmap.size, h=h)


@dataclass
class ConvergenceTable:
    reports: list[ErrorReport]
    eoc_u: list[float | None] = field(default_factory=list)
    eoc_p: list[float | None] = field(default_factory=list)

    @property
    def mean_eoc_u(self) -> float:
        return float(np.mean([e for e in self.eoc_u if e is not None]))

    @property
    def mean_eoc_p(self) -> float:
        return float(np.mean([e for e in self.eoc_p if e is not None]))

    def rows(self) -> list[dict]:
        out = []
        for r, eu, ep in zip(self.reports, self.eoc_u, self.eoc_p):
            out.append({
                "h": r.h_label,
                "dofs": r.dofs,
                "err_u_H1": r.velocity_H1,
                "eoc_u": eu,
                "err_p_L2": r.pressure_L2,
                "eoc_p": ep,
                "cond": r.kappa,
                "seconds": r.seconds,
            })
        return out

    def write_csv(self, path, header_comment: str = "") -> None:
        write_table_csv(path, self.rows(), header_comment)


def eoc_sequence(errors, hs) -> list[float | None]:
    out: list[float | None] = [None]
    for i in range(1, len(errors)):
        out.append(math.log(errors[i - 1] / errors[i]) / math.log(hs[i - 1] / hs[i]))
    return out


def eoc(reports: list[ErrorReport]) -> ConvergenceTable:
    if len(reports) < 2:
        raise ValueError("need at least two refinement levels for an EOC")
    hs = [r.h_label for r in reports]
    return ConvergenceTable(
        list(reports),
        eoc_sequence([r.velocity_H1 for r in reports], hs),
        eoc_sequence([r.pressure_L2 for r in reports], hs),
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def write_table_csv(path, rows: list[dict], header_comment: str = "", columns=TABLE_COLUMNS) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_table_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def sample_fields(solution: DiscreteSolution, resolution: int):
    """Sample u_h and p_h on a regular grid over the box, keeping points with phi < 0."""
    view = solution.system.view
    mesh = view.mesh
    xmin, xmax, ymin, ymax = mesh.bbox
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    elems = locate(mesh, pts)
    vals = view.vertex_values
    # linear interpolant of the level set at the sample points
    tri = mesh.vertices[mesh.elements[elems]]
    bary = barycentric(tri, pts)
    phi = np.einsum("pi,pi->p", bary, vals[mesh.elements[elems]])
    keep = (phi < 0) & view.is_active(elems)
    u, p = solution.evaluate(elems[keep], pts[keep])
    return pts[keep], u, p, pts[~keep]


def barycentric(tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a = tri[:, 0]
    jac = np.stack([tri[:, 1] - a, tri[:, 2] - a], axis=-1)
    lam = np.linalg.solve(jac, (pts - a)[..., None])[..., 0]
    return np.column_stack([1.0 - lam.sum(axis=1), lam])


def locate(mesh, pts: np.ndarray) -> np.ndarray:
    """Element containing each point of a structured mesh."""
    xmin, xmax, ymin, ymax = mesh.bbox
    n = mesh.n
    sx = (pts[:, 0] - xmin) / (xmax - xmin) * n
    sy = (pts[:, 1] - ymin) / (ymax - ymin) * n
    i = np.clip(np.floor(sx).astype(int), 0, n - 1)
    j = np.clip(np.floor(sy).astype(int), 0, n - 1)
    fx, fy = sx - i, sy - j
    upper = fy > fx
    return 2 * (j * n + i) + upper


def export_fields(solution: DiscreteSolution, path, resolution: int = 101) -> Path:
    """CSV with columns x, y, u_x, u_y, p restricted to the sampled points inside Ω."""
    pts, u, p, _ = sample_fields(solution, resolution)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u_x", "u_y", "p"])
        for (x, y), (ux, uy), pp in zip(pts, u, p):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(ux)), repr(float(uy)), repr(float(pp))])
    return path


def read_fields(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)

