import math

import numpy as np
import pytest
from scipy import integrate

from cutstokes.analysis import (
    DiscreteSolution,
    ErrorReport,
    barycentric,
    compute_errors,
    eoc,
    eoc_sequence,
    export_fields,
    locate,
    read_fields,
    read_table_csv,
    sample_fields,
)
from cutstokes.assembly import StokesParams, assemble_system
from cutstokes.cases import mesh_subdivisions, square_case
from cutstokes.geometry import LevelSet, circle_levelset
from cutstokes.linalg import solve
from cutstokes.mesh import build_structured_mesh

EVERYWHERE = LevelSet(lambda p: -np.ones(len(p)))

REFERENCE_U = [2.35599, 1.06937, 0.56680, 0.28483, 0.14799, 0.07301, 0.03654, 0.01828]
REFERENCE_U_EOC = [1.140, 0.916, 0.993, 0.945, 1.019, 0.999, 0.999]
REFERENCE_P = [0.79575, 0.48872, 0.27361, 0.14629, 0.07668, 0.03889, 0.01966, 0.00984]
REFERENCE_P_EOC = [0.703, 0.837, 0.903, 0.932, 0.980, 0.984, 0.999]


def solved(mesh, phi, k, case=None):
    system = assemble_system(mesh, phi, StokesParams(k), case)
    return DiscreteSolution(solve(system).x if case is not None else np.zeros(system.dofmap.size), system)


def test_zero_error_for_discrete_solution():
    mesh = build_structured_mesh((0.0, 1.0, 0.0, 1.0), 4)
    case = square_case()
    sol = solved(mesh, circle_levelset(0.36, (0.5, 0.5)), 2, case)
    vol = sol.system.quad.volume
    lookup = {tuple(p): e for p, e in zip(map(tuple, vol.points), vol.elem)}

    def elems_of(x):
        return np.array([lookup[tuple(p)] for p in x])

    u = lambda x: sol.evaluate(elems_of(x), x)[0]  # noqa: E731
    p = lambda x: sol.evaluate(elems_of(x), x)[1]  # noqa: E731
    du = lambda x: sol.evaluate(elems_of(x), x, grads=True)[2]  # noqa: E731
    rep = compute_errors(sol, u, p, du)
    assert rep.velocity_H1 <= 1e-12
    assert rep.pressure_L2 <= 1e-12


def test_interpolation_error_matches_dense_quadrature():
    # nodal P1 interpolant of a quadratic on the unit square split into two triangles
    mesh = build_structured_mesh((0.0, 1.0, 0.0, 1.0), 1)
    system = assemble_system(mesh, EVERYWHERE, StokesParams(1))
    dm = system.dofmap

    def u(x):
        return np.stack([x[..., 0] ** 2 + x[..., 0] * x[..., 1], 2 * x[..., 1] ** 2 - x[..., 0]], axis=-1)

    def grad_u(x):
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = 2 * x[..., 0] + x[..., 1]
        g[..., 0, 1] = x[..., 0]
        g[..., 1, 0] = -1.0
        g[..., 1, 1] = 4 * x[..., 1]
        return g

    coeffs = np.zeros(dm.size)
    for e in range(2):
        verts = mesh.vertices[mesh.elements[e]]
        val, _ = system.basis.values_grads(np.full(3, e), verts)
        for comp in (0, 1):
            coeffs[dm.component(np.array([e]), comp)[0]] = np.linalg.solve(val, u(verts)[:, comp])
    sol = DiscreteSolution(coeffs, system)
    zero_p = lambda x: np.zeros(x.shape[:-1])  # noqa: E731
    rep = compute_errors(sol, u, zero_p, grad_u, degree=6)

    def interpolant(e):
        verts = mesh.vertices[mesh.elements[e]]
        m = np.column_stack([verts, np.ones(3)])
        return np.linalg.solve(m, u(verts))  # rows: d/dx, d/dy, constant

    def integrand(y, x):
        p = np.array([x, y])
        e = int(np.flatnonzero([np.all(_bary(mesh, e, p) >= -1e-14) for e in range(2)])[0])
        c = interpolant(e)
        uh = c[0] * x + c[1] * y + c[2]
        duh = c[:2].T  # duh[i, j] = d u_i / d x_j
        return float(np.sum((u(p) - uh) ** 2) + np.sum((grad_u(p) - duh) ** 2))

    lower = integrate.dblquad(integrand, 0, 1, lambda x: 0.0, lambda x: x, epsabs=1e-14, epsrel=1e-13)[0]
    upper = integrate.dblquad(integrand, 0, 1, lambda x: x, lambda x: 1.0, epsabs=1e-14, epsrel=1e-13)[0]
    assert rep.velocity_H1 == pytest.approx(math.sqrt(lower + upper), abs=1e-10)


def _bary(mesh, e, p):
    tri = mesh.vertices[mesh.elements[e]]
    lam = np.linalg.solve(np.column_stack([tri[1] - tri[0], tri[2] - tri[0]]), p - tri[0])
    return np.array([1 - lam.sum(), *lam])


def test_pressure_error_invariant_under_constant():
    case = square_case()
    mesh = build_structured_mesh(case.bbox, 12)
    sol = solved(mesh, case.levelset, 1, case)
    a = compute_errors(sol, case.u, case.p, case.grad_u)
    b = compute_errors(sol, case.u, lambda x: case.p(x) + 123.0, case.grad_u)
    assert abs(a.pressure_L2 - b.pressure_L2) <= 1e-12
    assert a.velocity_H1 == b.velocity_H1


def test_p1_errors_decrease_and_match_reference_scale():
    case = square_case()
    reports = []
    for level in (1, 2, 3):
        h = 2.0 ** (-level - 2)
        mesh = build_structured_mesh(case.bbox, mesh_subdivisions(case.bbox, h))
        sol = solved(mesh, case.levelset, 1, case)
        reports.append(compute_errors(sol, case.u, case.p, case.grad_u, h=h))
    u_err = [r.velocity_H1 for r in reports]
    p_err = [r.pressure_L2 for r in reports]
    assert u_err == sorted(u_err, reverse=True)
    assert p_err == sorted(p_err, reverse=True)
    # h = 2^-5 stabilized P1 velocity error, within a factor of two
    assert 0.28483 / 2 <= u_err[-1] <= 0.28483 * 2


# -- EOC ---------------------------------------------------------------------------


def reports_from(errors, hs):
    return [ErrorReport(h, e, e, 0, h=h) for e, h in zip(errors, hs)]


def test_eoc_examples():
    table = eoc(reports_from([1.0, 0.5, 0.25], [1.0, 0.5, 0.25]))
    assert table.eoc_u == [None, pytest.approx(1.0), pytest.approx(1.0)]
    assert table.mean_eoc_u == pytest.approx(1.0)
    assert eoc_sequence([1.0, 0.25], [1.0, 0.5])[1] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        eoc(reports_from([1.0], [1.0]))


def test_reference_eoc_columns_reproduced():
    hs = [2.0 ** (-i - 2) for i in range(8)]
    u = eoc_sequence(REFERENCE_U, hs)[1:]
    p = eoc_sequence(REFERENCE_P, hs)[1:]
    assert np.allclose(u, REFERENCE_U_EOC, atol=0.005)
    assert np.allclose(p, REFERENCE_P_EOC, atol=0.005)
    table = eoc(reports_from(REFERENCE_U, hs))
    assert table.mean_eoc_u == pytest.approx(1.002, abs=0.005)


def test_convergence_csv(tmp_path):
    hs = [0.25, 0.125]
    table = eoc(reports_from([1.0, 0.5], hs))
    table.write_csv(tmp_path / "t.csv", "k = 1")
    assert (tmp_path / "t.csv").read_text().startswith("# k = 1\nh,dofs,err_u_H1,eoc_u,err_p_L2,eoc_p,cond,seconds\n")
    rows = read_table_csv(tmp_path / "t.csv")
    assert float(rows[1]["eoc_u"]) == pytest.approx(1.0)
    assert rows[0]["eoc_u"] == ""


# -- export --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def circle_solution():
    case = square_case()
    mesh = build_structured_mesh((0.0, 1.0, 0.0, 1.0), 6)
    return solved(mesh, circle_levelset(0.37, (0.5, 0.5)), 2, case)


def test_export_round_trip(tmp_path, circle_solution):
    path = export_fields(circle_solution, tmp_path / "f.csv", resolution=41)
    data = read_fields(path)
    pts, u, p, _ = sample_fields(circle_solution, 41)
    assert np.array_equal(data[:, :2], pts)
    assert np.array_equal(data[:, 2:4], u)
    assert np.array_equal(data[:, 4], p)


def test_masked_points_outside(circle_solution):
    pts, _, _, masked = sample_fields(circle_solution, 41)
    view = circle_solution.system.view
    mesh = view.mesh
    for group, inside in ((pts, True), (masked, False)):
        elems = locate(mesh, group)
        bary = barycentric(mesh.vertices[mesh.elements[elems]], group)
        phi = np.einsum("pi,pi->p", bary, view.vertex_values[mesh.elements[elems]])
        assert np.all(phi < 0) if inside else np.all(phi >= 0)
    assert len(pts) + len(masked) == 41 * 41


def test_constant_solution_exports_constants():
    mesh = build_structured_mesh((0.0, 1.0, 0.0, 1.0), 3)
    system = assemble_system(mesh, circle_levelset(0.4, (0.5, 0.5)), StokesParams(1))
    dm = system.dofmap
    coeffs = np.zeros(dm.size)
    for a, e in enumerate(system.view.active):
        val, _ = system.basis.values_grads(np.array([e]), mesh.vertices[mesh.elements[e]][:1])
        # the first basis function is constant on each element
        c0 = 1.0 / val[0, 0]
        coeffs[dm.component(np.array([a]), 0)[0][0]] = 2.0 * c0
        coeffs[dm.component(np.array([a]), 2)[0][0]] = -1.0 * c0
    _, u, p, _ = sample_fields(DiscreteSolution(coeffs, system), 25)
    assert np.allclose(u[:, 0], 2.0, atol=1e-13)
    assert np.allclose(u[:, 1], 0.0, atol=1e-13)
    assert np.allclose(p, -1.0, atol=1e-13)
