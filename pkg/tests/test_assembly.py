import math

import numpy as np
import pytest
import scipy.linalg as la
from reference_assembly import Evaluator, reference_system

from cutstokes.analysis import DiscreteSolution, compute_errors
from cutstokes.assembly import (
    BoundaryData,
    StokesParams,
    assemble_a,
    assemble_c,
    assemble_ghost,
    assemble_system,
    make_context,
)
from cutstokes.cases import polynomial_case, square_case
from cutstokes.geometry import LevelSet, circle_levelset, line_levelset, square_levelset, triangle_rule
from cutstokes.linalg import solve
from cutstokes.mesh import build_structured_mesh
from cutstokes.selftest import velocity_min_eigenvalue

UNIT = (0.0, 1.0, 0.0, 1.0)
EVERYWHERE = LevelSet(lambda p: -np.ones(len(p)))


def quadratic_form(trip, n, x, y=None):
    mat = trip.tocsr(n)
    return float((x if y is None else y) @ (mat @ x))


def project(ctx, func, comp):
    """Coefficients of the L2 projection of a scalar function ``func`` on every
    full active element (orthonormal basis), placed in component ``comp``."""
    pts, w = triangle_rule(2 * ctx.basis.k + 2)
    mesh = ctx.mesh
    x = np.zeros(ctx.dofs.size)
    for e in ctx.view.active:
        tri = mesh.vertices[mesh.elements[e]]
        phys = tri[0] + pts @ np.column_stack([tri[1] - tri[0], tri[2] - tri[0]]).T
        val, _ = ctx.basis.values_grads(np.full(len(phys), e), phys)
        ww = w * 2.0 * mesh.areas()[e]
        x[ctx.dofs.component(ctx.local(np.array([e])), comp)[0]] = (ww * func(phys)) @ val
    return x


# -- dense reference oracle ------------------------------------------------------


@pytest.mark.parametrize("k,n", [(1, 3), (2, 2), (3, 2)])
def test_matrix_and_rhs_match_dense_reference(k, n):
    mesh = build_structured_mesh(UNIT, n)
    case = square_case()
    system = assemble_system(mesh, circle_levelset(0.37, (0.52, 0.47)), StokesParams(k), case)
    assert len(system.quad.ghost.ids) > 0 and len(system.quad.interface.ids) > 0
    ref, rhs = reference_system(system.view, system.quad, system.params, BoundaryData(case.f, case.g))
    dense = system.matrix.toarray()
    assert np.abs(dense - ref).max() <= 1e-12 * np.abs(ref).max()
    assert np.abs(system.rhs - rhs).max() <= 1e-12 * np.abs(rhs).max()


def test_dense_reference_with_custom_parameters():
    mesh = build_structured_mesh(UNIT, 2)
    params = StokesParams(2, beta=17.0, gamma=0.3, gamma_u=[1.0, 2.0, 3.0], gamma_p=[0.5, 0.25, 0.125])
    system = assemble_system(mesh, circle_levelset(0.4, (0.45, 0.55)), params)
    ref, _ = reference_system(system.view, system.quad, params)
    assert np.abs(system.matrix.toarray() - ref).max() <= 1e-12 * np.abs(ref).max()


def test_system_symmetric(rng):
    mesh = build_structured_mesh(UNIT, 5)
    for k in (1, 2, 3):
        mat = assemble_system(mesh, circle_levelset(0.3, tuple(rng.uniform(0.4, 0.6, 2))), StokesParams(k)).matrix
        assert abs(mat - mat.T).max() <= 1e-12 * abs(mat).max()


def test_sparsity_couples_face_neighbors_only():
    mesh = build_structured_mesh(UNIT, 4)
    system = assemble_system(mesh, circle_levelset(0.33, (0.52, 0.47)), StokesParams(1))
    dm = system.dofmap
    coo = system.matrix.tocoo()
    keep = (coo.row < dm.multiplier) & (coo.col < dm.multiplier)
    ea, eb = coo.row[keep] // dm.block, coo.col[keep] // dm.block
    active = system.view.active
    adjacent = set()
    for o, nb in mesh.face_elements:
        if nb >= 0:
            adjacent.add((o, nb))
            adjacent.add((nb, o))
    for a, b in set(zip(ea.tolist(), eb.tolist())):
        assert a == b or (active[a], active[b]) in adjacent


# -- individual forms: hand examples --------------------------------------------------


def test_constant_and_linear_velocity_in_a():
    mesh = build_structured_mesh(UNIT, 2)
    params = StokesParams(1)
    ctx = make_context(mesh, EVERYWHERE, params)
    trip = assemble_a(ctx, params)
    n = ctx.dofs.size
    const = project(ctx, lambda p: np.ones(len(p)), 0)
    assert abs(quadratic_form(trip, n, const)) <= 1e-12
    # continuous linear u = (x, 0): jumps vanish, a(u, u) = |grad u|^2 |Omega|
    lin = project(ctx, lambda p: p[:, 0], 0)
    assert quadratic_form(trip, n, lin) == pytest.approx(1.0, abs=1e-12)


def test_b_hand_example():
    # v = (1, 0) and p = x on one element; the face term is the only contribution
    mesh = build_structured_mesh(UNIT, 1)
    params = StokesParams(1)
    system = assemble_system(mesh, EVERYWHERE, params)
    ctx = make_context(mesh, EVERYWHERE, params)
    face = int(np.flatnonzero(mesh.face_elements[:, 1] >= 0)[0])
    a, b = mesh.faces[face]
    length = np.linalg.norm(mesh.vertices[a] - mesh.vertices[b])
    # int_F x ds along the diagonal from (0, 0) to (1, 1)
    int_x = 0.5 * length
    for e in (0, 1):
        v = project(ctx, lambda p: np.ones(len(p)), 0)
        p = project(ctx, lambda p: p[:, 0], 2)
        other = 1 - e
        v[ctx.dofs.component(np.array([other]), 0)[0]] = 0.0
        p[ctx.dofs.component(np.array([other]), 2)[0]] = 0.0
        centroid = mesh.vertices[mesh.elements[e]].mean(axis=0)
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        n_out = mesh.face_normals[face] * np.sign((mid - centroid) @ mesh.face_normals[face])
        expected = 0.5 * int_x * n_out[0]  # [[v]] . n {p} with v, p from one side
        assert float(p @ (system.matrix @ v)) == pytest.approx(expected, abs=1e-14)
        assert abs(expected) == pytest.approx(0.25, abs=1e-14)


def test_b_alternative_form_identity(rng):
    # b(v, p) = int_Omega v . grad p - sum_F int_{F cap Omega} {v} . n_F [[p]]
    mesh = build_structured_mesh(UNIT, 4)
    phi = circle_levelset(0.36, (0.5, 0.48))
    for k in (1, 2):
        system = assemble_system(mesh, phi, StokesParams(k))
        dm = system.dofmap
        ev = Evaluator(mesh, k)
        x = np.zeros(dm.size)
        x[dm.velocity_dofs()] = rng.normal(size=len(dm.velocity_dofs()))
        y = np.zeros(dm.size)
        y[dm.pressure_dofs()] = rng.normal(size=len(dm.pressure_dofs()))
        blocks_x = x[: dm.multiplier].reshape(dm.n_active, 3, dm.dim)
        blocks_y = y[: dm.multiplier].reshape(dm.n_active, 3, dm.dim)

        def vel(e, pt):
            return blocks_x[system.view.active_index[e], :2] @ ev.values(e, pt)[0]

        def pres(e, pt):
            return blocks_y[system.view.active_index[e], 2] @ ev.values(e, pt)[0]

        def grad_p(e, pt):
            return blocks_y[system.view.active_index[e], 2] @ ev.grad(e, pt)

        total = 0.0
        vol = system.quad.volume
        for pt, w, e in zip(vol.points, vol.weights, vol.elem):
            total += w * vel(e, pt) @ grad_p(e, pt)
        fs = system.quad.faces
        for pt, w, n, e1, e2 in zip(fs.points, fs.weights, fs.normals, fs.elem, fs.elem2):
            avg = 0.5 * (vel(e1, pt) + vel(e2, pt))
            total -= w * (avg @ n) * (pres(e1, pt) - pres(e2, pt))
        assembled = float(y @ (system.matrix @ x))
        assert assembled == pytest.approx(total, abs=1e-11 * max(1.0, abs(total)))


def test_c_two_element_jump():
    mesh = build_structured_mesh(UNIT, 1)
    params = StokesParams(1, gamma=3.0)
    ctx = make_context(mesh, EVERYWHERE, params)
    trip = assemble_c(ctx, params)
    p = project(ctx, lambda q: np.ones(len(q)), 2)
    p[ctx.dofs.component(np.array([1]), 2)[0]] = 0.0
    face = int(np.flatnonzero(mesh.face_elements[:, 1] >= 0)[0])
    length = mesh.face_lengths()[face]
    expected = -3.0 * mesh.h_F[face] * length
    assert quadratic_form(trip, ctx.dofs.size, p) == pytest.approx(expected, abs=1e-13)
    # globally constant pressure has no jumps
    const = project(ctx, lambda q: np.ones(len(q)), 2)
    assert abs(quadratic_form(trip, ctx.dofs.size, const)) <= 1e-13
    zero = StokesParams(1, gamma=0.0)
    assert assemble_c(ctx, zero).tocsr(ctx.dofs.size).nnz == 0


def ghost_context(k, **kw):
    mesh = build_structured_mesh(UNIT, 3)
    params = StokesParams(k, **kw)
    ctx = make_context(mesh, circle_levelset(0.35, (0.5, 0.5)), params)
    assert ctx.quad.ghost.n_entities > 0
    return ctx, params


def test_ghost_zero_coefficients():
    ctx, params = ghost_context(2, gamma_u=[0, 0, 0], gamma_p=[0, 0, 0])
    assert assemble_ghost(ctx, params).tocsr(ctx.dofs.size).nnz == 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_ghost_vanishes_on_global_polynomials(k):
    ctx, params = ghost_context(k)
    trip = assemble_ghost(ctx, params)
    n = ctx.dofs.size
    poly = lambda p: 1 + p[:, 0] - 2 * p[:, 1] + (k >= 2) * p[:, 0] * p[:, 1] + (k >= 3) * p[:, 1] ** 3  # noqa: E731
    for comp in (0, 1, 2):
        x = project(ctx, poly, comp)
        assert abs(quadratic_form(trip, n, x)) <= 1e-10 * (x @ x)


def test_ghost_k1_scalar_loop(rng):
    ctx, params = ghost_context(1)
    n = ctx.dofs.size
    dm = ctx.dofs
    x = np.zeros(n)
    x[dm.velocity_dofs()] = rng.normal(size=len(dm.velocity_dofs()))
    ev = Evaluator(ctx.mesh, 1)
    blocks = x[: dm.multiplier].reshape(dm.n_active, 3, dm.dim)
    g0, g1 = params.gamma_u
    gh = ctx.quad.ghost
    expected = 0.0
    for ent, f in enumerate(gh.ids):
        h = ctx.mesh.h_F[f]
        for p in range(gh.ptr[ent], gh.ptr[ent + 1]):
            pt, w, nrm = gh.points[p], gh.weights[p], gh.normals[p]
            e1, e2 = gh.elem[p], gh.elem2[p]
            c1, c2 = blocks[ctx.local(e1)], blocks[ctx.local(e2)]
            for comp in (0, 1):
                jump = c1[comp] @ ev.values(e1, pt)[0] - c2[comp] @ ev.values(e2, pt)[0]
                djump = c1[comp] @ ev.taylor(e1, pt, nrm, 1) - c2[comp] @ ev.taylor(e2, pt, nrm, 1)
                expected += w * (g0 / h * jump**2 + g1 * h * djump**2)
    got = quadratic_form(assemble_ghost(ctx, params), n, x)
    assert got == pytest.approx(expected, rel=1e-12)


# -- right-hand side and constraint ------------------------------------------------------


def test_rhs_zero_data():
    mesh = build_structured_mesh(UNIT, 3)
    zero = lambda p: np.zeros(p.shape)  # noqa: E731
    system = assemble_system(mesh, circle_levelset(0.3, (0.5, 0.5)), StokesParams(2), BoundaryData(zero, zero))
    assert np.all(system.rhs == 0.0)


def test_rhs_unit_force_constant_mode():
    mesh = build_structured_mesh(UNIT, 1)
    params = StokesParams(1)
    ones = lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p))])  # noqa: E731
    system = assemble_system(mesh, EVERYWHERE, params, BoundaryData(ones, None))
    ctx = make_context(mesh, EVERYWHERE, params)
    for e in (0, 1):
        x = project(ctx, lambda p: np.ones(len(p)), 0)
        x[ctx.dofs.component(np.array([1 - e]), 0)[0]] = 0.0
        assert float(system.rhs @ x) == pytest.approx(mesh.areas()[e], abs=1e-15)


def test_constraint_row_is_domain_area():
    mesh = build_structured_mesh((-0.5, 1.5, -0.5, 1.5), 4)
    params = StokesParams(2)
    system = assemble_system(mesh, square_levelset(), params)
    ctx = make_context(mesh, square_levelset(), params)
    lam = system.dofmap.multiplier
    col = system.matrix[:, lam].toarray().ravel()
    assert np.all(col[system.dofmap.velocity_dofs()] == 0.0)
    assert col[lam] == 0.0
    const = project(ctx, lambda p: np.ones(len(p)), 2)
    # the inward shift of on-boundary vertex values widens the domain by O(1e-12)
    assert float(col @ const) == pytest.approx(1.0, abs=1e-11)
    row = system.matrix[lam].toarray().ravel()
    assert np.array_equal(row, col)


def test_constraint_removes_constant_pressure_null_vector():
    mesh = build_structured_mesh(UNIT, 4)
    params = StokesParams(1)
    phi = circle_levelset(0.33, (0.52, 0.47))
    system = assemble_system(mesh, phi, params)
    ctx = make_context(mesh, phi, params)
    const = project(ctx, lambda p: np.ones(len(p)), 2)[: system.dofmap.multiplier]
    reduced = system.without_constraint()
    # without the multiplier the constant pressure is a null vector
    assert np.abs(reduced @ const).max() <= 1e-12 * np.abs(const).max() * abs(reduced).max()
    sv = la.svdvals(system.matrix.toarray())
    assert sv.min() >= 1e-8 * sv.max()


# -- structural properties ---------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 3])
def test_velocity_block_psd_for_default_beta(k, rng):
    mesh = build_structured_mesh(UNIT, 4)
    phi = circle_levelset(rng.uniform(0.25, 0.4), tuple(rng.uniform(0.4, 0.6, 2)))
    system = assemble_system(mesh, phi, StokesParams(k))
    assert velocity_min_eigenvalue(system) >= -1e-10


def test_velocity_block_indefinite_for_tiny_beta():
    mesh = build_structured_mesh(UNIT, 4)
    system = assemble_system(mesh, circle_levelset(0.33, (0.52, 0.47)), StokesParams(2, beta=0.01))
    assert velocity_min_eigenvalue(system) < -1e-6


@pytest.mark.parametrize("k", [1, 2, 3])
def test_pressure_stabilization_psd(k):
    mesh = build_structured_mesh(UNIT, 4)
    system = assemble_system(mesh, circle_levelset(0.33, (0.52, 0.47)), StokesParams(k))
    ev = la.eigvalsh(-system.pressure_block().toarray())
    assert ev.min() >= -1e-10 * np.abs(ev).max()


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("center,radius,n", [((0.5, 0.5), 0.3, 5), ((0.47, 0.55), 0.37, 6), ((0.52, 0.43), 0.28, 7)])
def test_polynomial_solution_reproduced(k, center, radius, n):
    phi = circle_levelset(radius, center)
    case = polynomial_case(phi, UNIT)
    system = assemble_system(build_structured_mesh(UNIT, n), phi, StokesParams(k), case)
    sol = DiscreteSolution(solve(system).x, system)
    rep = compute_errors(sol, case.u, case.p, case.grad_u)
    assert rep.velocity_H1 <= 1e-8
    assert rep.pressure_L2 <= 1e-8
    u_h, p_h = sol.evaluate(system.quad.volume.elem, system.quad.volume.points)
    assert np.abs(u_h - case.u(system.quad.volume.points)).max() <= 1e-8


def test_linearity_in_data():
    mesh = build_structured_mesh((-0.5, 1.5, -0.5, 1.5), 8)
    case = square_case()
    phi = circle_levelset(0.45, (0.5, 0.5))
    base = solve(assemble_system(mesh, phi, StokesParams(1), BoundaryData(case.f, case.g))).x
    s = 3.7
    scaled_data = BoundaryData(lambda p: s * case.f(p), lambda p: s * case.g(p))
    scaled = solve(assemble_system(mesh, phi, StokesParams(1), scaled_data)).x
    assert np.abs(scaled - s * base).max() <= 1e-12 * s * np.abs(base).max() * 10


# -- ghost penalty extension -------------------------------------------------------------


def gradient_energies(ctx, x):
    """(||grad v||^2 on T cap Omega, ||grad v||^2 on the full active elements)."""
    dm = ctx.dofs
    blocks = x[: dm.multiplier].reshape(dm.n_active, 3, dm.dim)
    vol = ctx.quad.volume
    _, grad = ctx.basis.values_grads(vol.elem, vol.points)
    c = blocks[ctx.local(vol.elem)][:, :2]
    g = np.einsum("pcj,pjd->pcd", c, grad)
    inside = float(vol.weights @ (g**2).sum(axis=(1, 2)))
    pts, w = triangle_rule(2 * ctx.basis.k)
    mesh = ctx.mesh
    full = 0.0
    for e in ctx.view.active:
        tri = mesh.vertices[mesh.elements[e]]
        phys = tri[0] + pts @ np.column_stack([tri[1] - tri[0], tri[2] - tri[0]]).T
        _, grad = ctx.basis.values_grads(np.full(len(phys), e), phys)
        ge = np.einsum("cj,pjd->pcd", blocks[ctx.local(e), :2], grad)
        full += float((w * 2.0 * mesh.areas()[e]) @ (ge**2).sum(axis=(1, 2)))
    return inside, full


def test_ghost_penalty_extends_gradient_control(rng):
    # vertical interface a distance 1e-4 right of a grid line leaves thin slivers
    delta = 1e-4
    mesh = build_structured_mesh(UNIT, 4)
    phi = line_levelset((1.0, 0.0), 0.5 + delta)
    params = StokesParams(2)
    ctx = make_context(mesh, phi, params)
    n = ctx.dofs.size
    ju = assemble_ghost(ctx, StokesParams(2, gamma_p=[0, 0, 0])).tocsr(n)
    dm = ctx.dofs
    ratios = []
    for _ in range(100):
        x = np.zeros(n)
        x[dm.velocity_dofs()] = rng.normal(size=len(dm.velocity_dofs()))
        inside, full = gradient_energies(ctx, x)
        ratios.append(full / (inside + x @ (ju @ x)))
    assert np.all(np.isfinite(ratios))
    assert max(ratios) <= 1e3

    # a field living on one sliver element: (x - 0.5)^2 in the first component
    centroids = mesh.vertices[mesh.elements[ctx.view.cut]].mean(axis=1)
    sliver = ctx.view.cut[np.argmin(np.where(centroids[:, 0] > 0.5, centroids[:, 0], np.inf))]
    x = project(ctx, lambda p: (p[:, 0] - 0.5) ** 2, 0)
    keep = ctx.dofs.component(ctx.local(np.array([sliver])), 0)[0]
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    x[~mask] = 0.0
    inside, full = gradient_energies(ctx, x)
    assert full / inside > 1e6
    assert full / (inside + x @ (ju @ x)) <= 1e3
    assert math.isfinite(full / inside)
