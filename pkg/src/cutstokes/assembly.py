"""Assembly of the stabilized unfitted DG Stokes system.

Unknowns per active element are laid out as ``[u_x (dim), u_y (dim), p (dim)]``
followed by one global multiplier for the zero-mean pressure constraint.
The matrix has the block form::

    [ a + j_u     B^T        0 ]
    [ B        -(c + j_p)    m ]
    [ 0           m^T        0 ]

Jumps and averages on an interior face use the owner as the ``+`` side and
``n_F`` pointing from owner to neighbor: ``[[v]] = v+ - v-``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import ElementBasis, normal_derivative
from .cases import ManufacturedCase
from .geometry import CutQuadrature, LevelSet, PointSet, build_quadrature
from .mesh import BackgroundMesh, UnfittedMeshView, classify_and_extract

GHOST_SCHEDULE = (None, 0.1, 0.01, 0.001)


def default_ghost(k: int) -> list[float]:
    return [40.0 * k * k, *GHOST_SCHEDULE[1:]][: k + 1]


@dataclass
class StokesParams:
    """Polynomial order and penalty parameters; ``None`` picks the defaults
    beta = 40 k^2 (k+1)^2, gamma = 10 k^2, ghost = {40 k^2, 0.1, 0.01, 0.001}."""

    k: int = 1
    beta: float | None = None
    gamma: float | None = None
    gamma_u: list[float] | None = None
    gamma_p: list[float] | None = None
    volume_degree: int | None = None
    face_degree: int | None = None
    interface_degree: int | None = None
    basis_variant: str = "orthonormal"

    def __post_init__(self):
        k = self.k
        if k not in (1, 2, 3):
            raise ValueError(f"k must be 1, 2 or 3, got {k}")
        if self.beta is None:
            self.beta = 40.0 * k * k * (k + 1) ** 2
        if self.gamma is None:
            self.gamma = 10.0 * k * k
        if self.gamma_u is None:
            self.gamma_u = default_ghost(k)
        if self.gamma_p is None:
            self.gamma_p = default_ghost(k)
        self.gamma_u = [float(g) for g in self.gamma_u]
        self.gamma_p = [float(g) for g in self.gamma_p]
        if self.volume_degree is None:
            self.volume_degree = 2 * k + 2
        if self.face_degree is None:
            self.face_degree = 2 * k + 1
        if self.interface_degree is None:
            self.interface_degree = 2 * k + 2
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        for name in ("gamma_u", "gamma_p"):
            coeffs = getattr(self, name)
            if len(coeffs) != k + 1:
                raise ValueError(f"{name} needs {k + 1} coefficients, got {len(coeffs)}")
            if any(c < 0 for c in coeffs):
                raise ValueError(f"{name} coefficients must be non-negative")

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "beta": self.beta,
            "gamma": self.gamma,
            "gamma_u": list(self.gamma_u),
            "gamma_p": list(self.gamma_p),
            "volume_degree": self.volume_degree,
            "face_degree": self.face_degree,
            "interface_degree": self.interface_degree,
        }


@dataclass(frozen=True)
class DofMap:
    n_active: int
    dim: int

    @property
    def block(self) -> int:
        return 3 * self.dim

    @property
    def multiplier(self) -> int:
        return self.n_active * self.block

    @property
    def size(self) -> int:
        return self.multiplier + 1

    def component(self, local: np.ndarray, comp: int) -> np.ndarray:
        """Dof indices (len(local), dim) of component 0 (u_x), 1 (u_y) or 2 (p)."""
        local = np.asarray(local)
        return local[..., None] * self.block + comp * self.dim + np.arange(self.dim)

    def velocity_dofs(self) -> np.ndarray:
        idx = np.arange(self.n_active)
        return np.concatenate([self.component(idx, 0), self.component(idx, 1)], axis=1).ravel()

    def pressure_dofs(self) -> np.ndarray:
        return self.component(np.arange(self.n_active), 2).ravel()


@dataclass
class BoundaryData:
    f: object
    g: object


@dataclass
class Triplets:
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)

    def add(self, rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray, symmetric_copy: bool = False):
        """Scatter blocks (E, nr, nc) at rows (E, nr) x cols (E, nc)."""
        if blocks.size == 0:
            return
        r = np.broadcast_to(rows[:, :, None], blocks.shape)
        c = np.broadcast_to(cols[:, None, :], blocks.shape)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(blocks.ravel())
        if symmetric_copy:
            self.rows.append(c.ravel())
            self.cols.append(r.ravel())
            self.vals.append(blocks.ravel())

    def extend(self, other: "Triplets"):
        self.rows += other.rows
        self.cols += other.cols
        self.vals += other.vals

    def tocsr(self, n: int) -> sp.csr_matrix:
        if not self.vals:
            return sp.csr_matrix((n, n))
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        return mat


@dataclass
class SaddleSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    params: StokesParams
    view: UnfittedMeshView
    quad: CutQuadrature
    basis: ElementBasis

    def velocity_block(self) -> sp.csr_matrix:
        idx = self.dofmap.velocity_dofs()
        return self.matrix[idx][:, idx]

    def pressure_block(self) -> sp.csr_matrix:
        idx = self.dofmap.pressure_dofs()
        return self.matrix[idx][:, idx]

    def without_constraint(self) -> sp.csr_matrix:
        n = self.dofmap.multiplier
        return self.matrix[:n][:, :n]


class Context:
    """Shared state of one assembly: view, rules, basis and dof map."""

    def __init__(self, view: UnfittedMeshView, quad: CutQuadrature, basis: ElementBasis):
        self.view = view
        self.mesh: BackgroundMesh = view.mesh
        self.quad = quad
        self.basis = basis
        self.dofs = DofMap(view.n_active, basis.dim)
        self._cache: dict = {}

    def local(self, elems: np.ndarray) -> np.ndarray:
        return self.view.active_index[elems]

    def side_tables(self, ps: PointSet, side: int, order: int = 1):
        key = (id(ps), side, order)
        if key not in self._cache:
            elems = ps.elem if side == 0 else ps.elem2
            self._cache[key] = self.basis.tables(elems, ps.points, order)
        return self._cache[key]

    def values_grads(self, ps: PointSet, side: int = 0):
        t = self.side_tables(ps, side, 1)
        return t[0][..., 0], t[1]

    def entity_elems(self, ps: PointSet, side: int = 0) -> np.ndarray:
        elems = ps.elem if side == 0 else ps.elem2
        return elems[ps.ptr[:-1]]


def make_context(mesh: BackgroundMesh, phi: LevelSet, params: StokesParams) -> Context:
    view = classify_and_extract(mesh, phi)
    quad = build_quadrature(view, params.volume_degree, params.face_degree, params.interface_degree)
    basis = ElementBasis(mesh.vertices, mesh.elements, params.k, params.basis_variant)
    return Context(view, quad, basis)


def _bilinear(ps: PointSet, test: np.ndarray, trial: np.ndarray, scale: np.ndarray | None = None) -> np.ndarray:
    """Per-entity blocks sum_p w test_i trial_j (optionally times per-point scale)."""
    w = ps.weights if scale is None else ps.weights * scale
    return ps.reduce(np.einsum("p,pi,pj->pij", w, test, trial))


SIDES = ((0, 1.0), (1, -1.0))


def assemble_a(ctx: Context, params: StokesParams) -> Triplets:
    """Velocity block of a_h: volume, SIP face terms over F∩Ω, Nitsche terms on Γ."""
    out = Triplets()
    dm = ctx.dofs
    beta = params.beta

    vol = ctx.quad.volume
    _, grad = ctx.values_grads(vol)
    blocks = ps_grad_grad(vol, grad)
    loc = ctx.local(ctx.entity_elems(vol))
    for comp in (0, 1):
        d = dm.component(loc, comp)
        out.add(d, d, blocks)

    fs = ctx.quad.faces
    if fs.n_entities:
        n = fs.normals
        hF = np.repeat(ctx.mesh.h_F[fs.ids], np.diff(fs.ptr))
        sides = {}
        for s, sign in SIDES:
            val, grad = ctx.values_grads(fs, s)
            sides[s] = (sign * val, 0.5 * np.einsum("pjc,pc->pj", grad, n), ctx.local(ctx.entity_elems(fs, s)))
        for t, _ in SIDES:
            jt, avg_t, loc_t = sides[t]
            for s, _ in SIDES:
                js, avg_s, loc_s = sides[s]
                blk = -_bilinear(fs, jt, avg_s) - _bilinear(fs, avg_t, js) + _bilinear(fs, jt, js, beta / hF)
                for comp in (0, 1):
                    out.add(dm.component(loc_t, comp), dm.component(loc_s, comp), blk)

    gs = ctx.quad.interface
    if gs.n_entities:
        val, grad = ctx.values_grads(gs)
        dn = np.einsum("pjc,pc->pj", grad, gs.normals)
        hT = np.repeat(ctx.mesh.h_T[gs.ids], np.diff(gs.ptr))
        blk = -_bilinear(gs, val, dn) - _bilinear(gs, dn, val) + _bilinear(gs, val, val, beta / hT)
        loc = ctx.local(gs.ids)
        for comp in (0, 1):
            d = dm.component(loc, comp)
            out.add(d, d, blk)
    return out


def ps_grad_grad(ps: PointSet, grad: np.ndarray) -> np.ndarray:
    return ps.reduce(np.einsum("p,pic,pjc->pij", ps.weights, grad, grad))


def assemble_b(ctx: Context) -> Triplets:
    """Pressure-velocity coupling b_h, stored in both off-diagonal blocks."""
    out = Triplets()
    dm = ctx.dofs

    vol = ctx.quad.volume
    val, grad = ctx.values_grads(vol)
    loc = ctx.local(ctx.entity_elems(vol))
    q = dm.component(loc, 2)
    for comp in (0, 1):
        blk = -_bilinear(vol, val, grad[..., comp])
        out.add(q, dm.component(loc, comp), blk, symmetric_copy=True)

    fs = ctx.quad.faces
    if fs.n_entities:
        n = fs.normals
        sides = {}
        for s, sign in SIDES:
            val, _ = ctx.values_grads(fs, s)
            sides[s] = (val, sign, ctx.local(ctx.entity_elems(fs, s)))
        for t, _ in SIDES:
            vt, _, loc_t = sides[t]
            for s, _ in SIDES:
                vs, sign_s, loc_s = sides[s]
                for comp in (0, 1):
                    # {q} [[u]] . n
                    blk = _bilinear(fs, 0.5 * vt, sign_s * vs, n[:, comp])
                    out.add(dm.component(loc_t, 2), dm.component(loc_s, comp), blk, symmetric_copy=True)

    gs = ctx.quad.interface
    if gs.n_entities:
        val, _ = ctx.values_grads(gs)
        loc = ctx.local(gs.ids)
        for comp in (0, 1):
            blk = _bilinear(gs, val, val, gs.normals[:, comp])
            out.add(dm.component(loc, 2), dm.component(loc, comp), blk, symmetric_copy=True)
    return out


def assemble_c(ctx: Context, params: StokesParams) -> Triplets:
    """Pressure face-jump penalty, entered with a negative sign."""
    out = Triplets()
    fs = ctx.quad.faces
    if params.gamma == 0 or fs.n_entities == 0:
        return out
    dm = ctx.dofs
    hF = np.repeat(ctx.mesh.h_F[fs.ids], np.diff(fs.ptr))
    sides = {}
    for s, sign in SIDES:
        val, _ = ctx.values_grads(fs, s)
        sides[s] = (sign * val, ctx.local(ctx.entity_elems(fs, s)))
    for t, _ in SIDES:
        jt, loc_t = sides[t]
        for s, _ in SIDES:
            js, loc_s = sides[s]
            blk = -params.gamma * _bilinear(fs, jt, js, hF)
            out.add(dm.component(loc_t, 2), dm.component(loc_s, 2), blk)
    return out


def ghost_jumps(ctx: Context, order: int) -> dict:
    """Signed normal-derivative traces sigma_s d^i_n phi on both sides of ghost faces."""
    gs = ctx.quad.ghost
    out = {}
    for s, sign in SIDES:
        tables = ctx.side_tables(gs, s, ctx.basis.k)
        out[s] = [sign * normal_derivative(i, tables, gs.normals) for i in range(order + 1)]
    return out


def assemble_ghost(ctx: Context, params: StokesParams) -> Triplets:
    """j_u on both velocity components and -j_p on the pressure, over full ghost faces."""
    out = Triplets()
    gs = ctx.quad.ghost
    k = params.k
    if gs.n_entities == 0 or not (any(params.gamma_u) or any(params.gamma_p)):
        return out
    dm = ctx.dofs
    jumps = ghost_jumps(ctx, k)
    hF = np.repeat(ctx.mesh.h_F[gs.ids], np.diff(gs.ptr))
    locs = {s: ctx.local(ctx.entity_elems(gs, s)) for s, _ in SIDES}
    for t, _ in SIDES:
        for s, _ in SIDES:
            vel = np.zeros((gs.n_entities, dm.dim, dm.dim))
            pre = np.zeros_like(vel)
            for i in range(k + 1):
                if params.gamma_u[i] == 0 and params.gamma_p[i] == 0:
                    continue
                base = _bilinear(gs, jumps[t][i], jumps[s][i], hF ** (2 * i))
                hent = ctx.mesh.h_F[gs.ids][:, None, None]
                vel += params.gamma_u[i] * base / hent
                pre += params.gamma_p[i] * base * hent
            for comp in (0, 1):
                out.add(dm.component(locs[t], comp), dm.component(locs[s], comp), vel)
            out.add(dm.component(locs[t], 2), dm.component(locs[s], 2), -pre)
    return out


def assemble_mean_constraint(ctx: Context) -> Triplets:
    out = Triplets()
    vol = ctx.quad.volume
    val, _ = ctx.values_grads(vol)
    m = vol.reduce(vol.weights[:, None] * val)
    loc = ctx.local(ctx.entity_elems(vol))
    q = ctx.dofs.component(loc, 2)
    lam = np.full((len(loc), 1), ctx.dofs.multiplier)
    out.add(q, lam, m[:, :, None], symmetric_copy=True)
    return out


def mean_vector(ctx: Context) -> np.ndarray:
    vol = ctx.quad.volume
    val, _ = ctx.values_grads(vol)
    vec = np.zeros(ctx.dofs.size)
    m = vol.reduce(vol.weights[:, None] * val)
    np.add.at(vec, ctx.dofs.component(ctx.local(ctx.entity_elems(vol)), 2), m)
    return vec


def assemble_rhs(ctx: Context, data: BoundaryData, params: StokesParams) -> np.ndarray:
    """Body force plus the symmetric Nitsche lift of the boundary velocity."""
    dm = ctx.dofs
    rhs = np.zeros(dm.size)
    vol = ctx.quad.volume
    val, _ = ctx.values_grads(vol)
    loc = ctx.local(ctx.entity_elems(vol))
    if data.f is not None:
        f = np.asarray(data.f(vol.points))
        for comp in (0, 1):
            contrib = vol.reduce((vol.weights * f[:, comp])[:, None] * val)
            np.add.at(rhs, dm.component(loc, comp), contrib)

    gs = ctx.quad.interface
    if data.g is not None and gs.n_entities:
        g = np.asarray(data.g(gs.points))
        val, grad = ctx.values_grads(gs)
        dn = np.einsum("pjc,pc->pj", grad, gs.normals)
        hT = np.repeat(ctx.mesh.h_T[gs.ids], np.diff(gs.ptr))
        loc = ctx.local(gs.ids)
        for comp in (0, 1):
            w = gs.weights * g[:, comp]
            contrib = gs.reduce(w[:, None] * (-dn + (params.beta / hT)[:, None] * val))
            np.add.at(rhs, dm.component(loc, comp), contrib)
        gn = np.einsum("pc,pc->p", g, gs.normals)
        contrib = gs.reduce((gs.weights * gn)[:, None] * val)
        np.add.at(rhs, dm.component(loc, 2), contrib)
    return rhs


def assemble_system(mesh: BackgroundMesh, phi: LevelSet, params: StokesParams,
                    data: BoundaryData | ManufacturedCase | None = None) -> SaddleSystem:
    ctx = make_context(mesh, phi, params)
    return assemble_from_context(ctx, params, data)


def assemble_from_context(ctx: Context, params: StokesParams, data=None) -> SaddleSystem:
    if isinstance(data, ManufacturedCase):
        data = BoundaryData(data.f, data.g)
    trip = Triplets()
    trip.extend(assemble_a(ctx, params))
    trip.extend(assemble_b(ctx))
    trip.extend(assemble_c(ctx, params))
    trip.extend(assemble_ghost(ctx, params))
    trip.extend(assemble_mean_constraint(ctx))
    mat = trip.tocsr(ctx.dofs.size)
    rhs = assemble_rhs(ctx, data, params) if data is not None else np.zeros(ctx.dofs.size)
    return SaddleSystem(mat, rhs, ctx.dofs, params, ctx.view, ctx.quad, ctx.basis)
