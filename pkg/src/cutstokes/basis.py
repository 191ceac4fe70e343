"""Scalar P_k bases on the reference triangle and their affine pull-back.

Every basis is stored as a coefficient matrix over the monomials
``xi**a * eta**b`` (``a + b <= k``), so derivatives of any order are exact.
Derivative tables are lists indexed by the derivative order ``r``; entry
``r`` has shape ``(..., dim, r + 1)`` and column ``b`` holds
``D^(r-b, b)``, i.e. ``r - b`` derivatives in x and ``b`` in y.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

MAX_ORDER = 3

VARIANTS = ("orthonormal", "monomial", "nodal")


def basis_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def monomial_exponents(k: int) -> list[tuple[int, int]]:
    """Exponents ``(a, b)`` ordered by total degree, then by ``b``."""
    return [(d - b, b) for d in range(k + 1) for b in range(d + 1)]


def multi_indices(r: int) -> list[tuple[int, int]]:
    return [(r - b, b) for b in range(r + 1)]


def _falling(n: int, m: int) -> int:
    """n (n-1) ... (n-m+1), zero when m > n."""
    if m > n:
        return 0
    out = 1
    for i in range(m):
        out *= n - i
    return out


def monomial_table(k: int, points: np.ndarray, max_order: int) -> list[np.ndarray]:
    """Derivative table of all monomials of degree <= k at ``points``."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    exps = monomial_exponents(k)
    xp = [np.ones_like(x)]
    yp = [np.ones_like(y)]
    for _ in range(k):
        xp.append(xp[-1] * x)
        yp.append(yp[-1] * y)
    table = []
    for r in range(max_order + 1):
        out = np.zeros(x.shape + (len(exps), r + 1))
        for m, (a, b) in enumerate(exps):
            for col, (p, q) in enumerate(multi_indices(r)):
                c = _falling(a, p) * _falling(b, q)
                if c:
                    out[..., m, col] = c * xp[a - p] * yp[b - q]
        table.append(out)
    return table


def _reference_monomial_mass(k: int) -> np.ndarray:
    # int_ref xi^a eta^b = a! b! / (a + b + 2)!
    exps = monomial_exponents(k)
    n = len(exps)
    mass = np.empty((n, n))
    for i, (a, b) in enumerate(exps):
        for j, (c, d) in enumerate(exps):
            mass[i, j] = factorial(a + c) * factorial(b + d) / factorial(a + b + c + d + 2)
    return mass


def lattice_points(k: int) -> np.ndarray:
    """Equispaced nodes of the order-k lattice on the reference triangle."""
    return np.array([(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)])


class ReferenceBasis:
    """P_k basis on the triangle (0,0), (1,0), (0,1).

    ``variant`` is one of ``"orthonormal"`` (L2-orthonormal on the reference
    triangle, the default used by the solver), ``"monomial"`` or ``"nodal"``
    (Lagrange on the equispaced lattice).
    """

    def __init__(self, k: int, variant: str = "orthonormal"):
        if not 1 <= k <= MAX_ORDER:
            raise ValueError(f"polynomial order must be in 1..{MAX_ORDER}, got {k}")
        if variant not in VARIANTS:
            raise ValueError(f"unknown basis variant {variant!r}")
        self.k = k
        self.variant = variant
        self.dim = basis_dim(k)
        if variant == "monomial":
            coeffs = np.eye(self.dim)
        elif variant == "orthonormal":
            chol = np.linalg.cholesky(_reference_monomial_mass(k))
            coeffs = np.linalg.inv(chol).T
        else:
            vander = monomial_table(k, lattice_points(k), 0)[0][..., 0]
            coeffs = np.linalg.inv(vander)
        # psi_j = sum_m coeffs[m, j] * mu_m
        self.coeffs = coeffs

    def eval_all(self, points: np.ndarray, max_order: int | None = None) -> list[np.ndarray]:
        if max_order is None:
            max_order = self.k
        if not 0 <= max_order <= self.k:
            raise ValueError(f"max_order must be in 0..{self.k}, got {max_order}")
        mono = monomial_table(self.k, points, max_order)
        return [np.einsum("...mc,mj->...jc", t, self.coeffs) for t in mono]

    def values(self, points: np.ndarray) -> np.ndarray:
        return self.eval_all(points, 0)[0][..., 0]


def eval_all(k: int, point: np.ndarray, max_order: int, variant: str = "orthonormal") -> list[np.ndarray]:
    """Derivative table of the order-k reference basis at one or more points."""
    return ReferenceBasis(k, variant).eval_all(point, max_order)


def normal_derivative(i: int, table: list[np.ndarray], n: np.ndarray) -> np.ndarray:
    """Sum over |alpha| = i of D^alpha v * n^alpha / alpha!.

    ``table[i]`` has shape ``(..., dim, i + 1)``; ``n`` broadcasts against
    the leading axes with a trailing axis of length 2.  The result has shape
    ``(..., dim)``.  This is the i-th Taylor coefficient along ``n``, equal
    to ``(n . grad)^i v / i!``.
    """
    if len(table) <= i:
        raise ValueError(f"derivative table lacks order {i}")
    n = np.asarray(n, dtype=float)
    weights = []
    for p, q in multi_indices(i):
        weights.append(n[..., 0] ** p * n[..., 1] ** q / (factorial(p) * factorial(q)))
    w = np.stack(weights, axis=-1)
    return np.einsum("...jc,...c->...j", table[i], w)


@dataclass(frozen=True)
class AffineMap:
    """x = origin + jac @ xi for the triangle with the given vertices."""

    origin: np.ndarray
    jac: np.ndarray
    jac_inv: np.ndarray
    det: float

    def to_physical(self, xi: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(xi) @ self.jac.T

    def to_reference(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.origin) @ self.jac_inv.T

    def transform_table(self, table: list[np.ndarray]) -> list[np.ndarray]:
        return transform_tables(table, self.jac_inv)


def physical_map(vertices: np.ndarray) -> AffineMap:
    v = np.asarray(vertices, dtype=float)
    jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
    det = float(np.linalg.det(jac))
    scale = max(np.abs(jac).max(), 1e-300)
    if abs(det) <= 1e-14 * scale * scale:
        raise ValueError("degenerate (zero-area) triangle")
    return AffineMap(v[0].copy(), jac, np.linalg.inv(jac), det)


def chain_rule_matrices(jac_inv: np.ndarray, max_order: int) -> list[np.ndarray]:
    """Matrices turning reference derivatives of order r into physical ones.

    With ``xi = jac_inv @ (x - origin)``, d/dx_j = sum_i jac_inv[i, j] d/dxi_i,
    so ``D_x^(r-b, b)`` is the product of r linear forms in (d/dxi, d/deta).
    ``jac_inv`` may carry leading batch axes; result entry r has shape
    ``(..., r + 1, r + 1)`` mapping reference columns to physical columns.
    """
    jinv = np.asarray(jac_inv, dtype=float)
    batch = jinv.shape[:-2]
    cx = jinv[..., :, 0]  # d/dx = cx[0] d/dxi + cx[1] d/deta
    cy = jinv[..., :, 1]
    mats = []
    for r in range(max_order + 1):
        mat = np.zeros(batch + (r + 1, r + 1))
        for b in range(r + 1):
            poly = np.ones(batch + (1,))
            for f in [cx] * (r - b) + [cy] * b:
                new = np.zeros(batch + (poly.shape[-1] + 1,))
                new[..., :-1] += poly * f[..., 0:1]
                new[..., 1:] += poly * f[..., 1:2]
                poly = new
            mat[..., b, :] = poly
        mats.append(mat)
    return mats


def transform_tables(table: list[np.ndarray], jac_inv: np.ndarray) -> list[np.ndarray]:
    mats = chain_rule_matrices(jac_inv, len(table) - 1)
    return [np.einsum("...jc,...bc->...jb", t, m) for t, m in zip(table, mats)]


class ElementBasis:
    """Affine pull-back of a reference basis to every element of a mesh.

    Functions are scaled by ``1/sqrt(|det J|)`` so that the orthonormal
    variant is L2-orthonormal on each physical triangle.
    """

    def __init__(self, vertices: np.ndarray, elements: np.ndarray, k: int, variant: str = "orthonormal"):
        self.ref = ReferenceBasis(k, variant)
        self.k = k
        self.dim = self.ref.dim
        tri = vertices[elements]
        self.origin = tri[:, 0]
        jac = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=-1)
        self.det = np.linalg.det(jac)
        self.jac_inv = np.linalg.inv(jac)
        self.scale = 1.0 / np.sqrt(np.abs(self.det))

    def to_reference(self, elems: np.ndarray, points: np.ndarray) -> np.ndarray:
        d = points - self.origin[elems]
        return np.einsum("pij,pj->pi", self.jac_inv[elems], d)

    def tables(self, elems: np.ndarray, points: np.ndarray, max_order: int = 1) -> list[np.ndarray]:
        """Physical derivative tables at ``points`` (P, 2) on elements ``elems`` (P,)."""
        xi = self.to_reference(elems, points)
        ref = self.ref.eval_all(xi, max_order)
        phys = transform_tables(ref, self.jac_inv[elems])
        s = self.scale[elems][:, None, None]
        return [t * s for t in phys]

    def values_grads(self, elems: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values (P, dim) and gradients (P, dim, 2)."""
        t = self.tables(elems, points, 1)
        return t[0][..., 0], t[1]
