"""Galerkin assembly of the primal, flux and auxiliary systems and their solvers.

Element matrices are formed in the local tensor B-spline basis of each cell
and mapped to the active hierarchical functions by a sparse extraction
matrix ``P`` (rows of the level expansions ``T^k``), so a global matrix is
``P^T blockdiag(K_e) P``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import cvxopt
    from cvxopt import cholmod
except ImportError:  # pragma: no cover
    cvxopt = cholmod = None

from .geometry import CellSet, Mesh, QuadratureRule, overlay
from .splines import basis_ders, tensor_cells as _tensor_q

__all__ = [
    "SparseSystem",
    "DiscreteField",
    "NotSPDError",
    "CGResult",
    "CellBasis",
    "cell_basis",
    "extraction",
    "space_mesh",
    "assemble_stiffness",
    "assemble_primal",
    "assemble_flux_operators",
    "assemble_flux_system",
    "boundary_data",
    "solve_direct",
    "solve_cg",
    "dump_coo",
]


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a factorisation reveals a matrix that is not SPD."""


def space_mesh(space, geometry, rule=None):
    """Mesh of the leaf cells of a hierarchical space."""
    if rule is None:
        rule = QuadratureRule(space.degree + 2, space.dim)
    return Mesh(CellSet.from_hierarchy(space.hierarchy), geometry, rule)


@dataclass
class CellBasis:
    """Local tensor basis of a space on a block of cells.

    ``rows`` are flat level-``dl`` tensor indices ``(nb, n_loc)``; values have
    shape ``(nb, nq, n_loc)``, physical gradients ``(nb, nq, n_loc, d)`` and
    physical Laplacians ``(nb, nq, n_loc)``.
    """

    dl: np.ndarray
    rows: np.ndarray
    val: np.ndarray
    grad: np.ndarray = None
    lap: np.ndarray = None


def _local_tables(space, mesh, batch, nder):
    """Domain levels, local tensor rows and per-direction 1D tables of a batch."""
    cells = mesh.cells.take(batch.sel)
    nb = len(cells)
    centers = cells.centers()
    dl = space.hierarchy.domain_level(centers)
    lo = cells.lower()
    size = cells.sizes()
    pts1 = mesh.rule.points_1d
    g = len(pts1)
    nloc = int(np.prod([p + 1 for p in space.degrees]))
    rows = np.empty((nb, nloc), dtype=np.int64)
    per_dir = [np.empty((nb, g, nder + 1, p + 1)) for p in space.degrees]
    for k in np.unique(dl):
        sel = np.flatnonzero(dl == k)
        kvs = space.knotvectors(k)
        shape = space.level_shape(k)
        flat = np.zeros((len(sel), 1), dtype=np.int64)
        for a, kv in enumerate(kvs):
            c = np.clip(np.floor(centers[sel, a] * kv.n_cells).astype(np.int64), 0, kv.n_cells - 1)
            span = kv.cell_span(c)
            xi = lo[sel, a, None] + size[sel, a, None] * pts1[None, :]
            _, D = basis_ders(kv, xi.ravel(), nder, np.repeat(span, g))
            per_dir[a][sel] = D.reshape(len(sel), g, nder + 1, kv.degree + 1)
            r = span[:, None] - kv.degree + np.arange(kv.degree + 1)[None, :]
            flat = (flat[:, :, None] * shape[a] + r[:, None, :]).reshape(len(sel), -1)
        rows[sel] = flat
    return dl, rows, per_dir


def _contract(per_dir, orders, coefs):
    """Sum-factorised ``sum_i B_i(q) c_i`` for local coefficients ``(nb, n_1, .., n_d, m)``."""
    d = len(per_dir)
    nb = coefs.shape[0]
    T = coefs
    for a in range(d):
        B = per_dir[a][:, :, orders[a], :]
        T = np.moveaxis(T, a + 1, -1)
        shape = T.shape
        T = np.matmul(T.reshape(nb, -1, shape[-1]), B.swapaxes(1, 2))
        T = np.moveaxis(T.reshape(shape[:-1] + (B.shape[1],)), -1, a + 1)
    return T.reshape(nb, -1, T.shape[-1])


def cell_basis(space, mesh, batch, nder=1):
    """Evaluate the local basis of ``space`` at the quadrature points of ``batch``.

    ``nder`` is 0 (values), 1 (plus physical gradients) or 2 (plus physical
    Laplacians; requires a batch built with ``second=True``).
    """
    d = space.dim
    dl, rows, per_dir = _local_tables(space, mesh, batch, nder)
    zero = [0] * d
    val = _tensor_q(per_dir, zero)
    out = CellBasis(dl, rows, val)
    if nder >= 1:
        gp = [_tensor_q(per_dir, [1 if b == a else 0 for b in range(d)]) for a in range(d)]
        grad = gp[0][..., None] * batch.Jinv[:, :, None, 0, :]
        for a in range(1, d):
            grad += gp[a][..., None] * batch.Jinv[:, :, None, a, :]
        out.grad = grad
        if nder >= 2:
            lap = np.zeros_like(val)
            for a in range(d):
                for b in range(d):
                    o = [0] * d
                    o[a] += 1
                    o[b] += 1
                    lap += batch.ginv[:, :, a, b][:, :, None] * _tensor_q(per_dir, o)
            lap -= np.matmul(out.grad, batch.hcurv[..., None])[..., 0]
            out.lap = lap
    return out


def extraction(space, dl, rows):
    """Sparse ``(nb * n_loc, n_active)`` map from active to local tensor coefficients."""
    nb, nloc = rows.shape
    parts, order = [], []
    for k in np.unique(dl):
        sel = np.flatnonzero(dl == k)
        parts.append(space.expansion(k)[rows[sel].ravel()])
        order.append((sel[:, None] * nloc + np.arange(nloc)[None, :]).ravel())
    P = sp.vstack(parts, format="csr")
    perm = np.empty(nb * nloc, dtype=np.int64)
    perm[np.concatenate(order)] = np.arange(nb * nloc)
    return P[perm]


def _gram(w, grad, other=None):
    """Per-cell ``sum_q w_q <a_i(q), b_j(q)>`` via batched matrix products."""
    nb, nq, nloc = grad.shape[:3]
    A = (grad * w.reshape((nb, nq) + (1,) * (grad.ndim - 2))).swapaxes(1, 2).reshape(nb, nloc, -1)
    B = grad if other is None else other
    B = B.swapaxes(1, 2).reshape(nb, B.shape[2], -1)
    return np.matmul(A, B.swapaxes(1, 2))


def _blockdiag(blocks):
    n, m, _ = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(n * m, n * m))


def _sym(A):
    A = sp.csr_matrix(A)
    return ((A + A.T) * 0.5).tocsr()


class DiscreteField:
    """Coefficients bound to a hierarchical space, optionally vector valued.

    ``coefs`` has shape ``(n_active,)`` for scalar fields and
    ``(n_active, ncomp)`` for vector fields.
    """

    def __init__(self, space, coefs, geometry):
        coefs = np.asarray(coefs, dtype=float)
        if coefs.shape[0] != space.n_active:
            raise ValueError("coefficient length %d does not match %d active functions"
                             % (coefs.shape[0], space.n_active))
        self.space = space
        self.coefs = coefs
        self.geometry = geometry

    @property
    def ncomp(self):
        return 1 if self.coefs.ndim == 1 else self.coefs.shape[1]

    def on_batch(self, mesh, batch, nder=1):
        """Values, physical gradients and Laplacians at the batch points.

        Scalar fields give shapes ``(nb, nq)``, ``(nb, nq, d)``, ``(nb, nq)``;
        vector fields carry a trailing component axis on values and
        ``(nb, nq, ncomp, d)`` gradients.
        """
        space = self.space
        d = space.dim
        dl, rows, per_dir = _local_tables(space, mesh, batch, nder)
        P = extraction(space, dl, rows)
        nb, nloc = rows.shape
        m = self.ncomp
        loc = (P @ self.coefs).reshape((nb,) + tuple(p + 1 for p in space.degrees) + (m,))
        val = _contract(per_dir, [0] * d, loc)
        grad = lap = None
        if nder >= 1:
            gp = [_contract(per_dir, [int(b == a) for b in range(d)], loc) for a in range(d)]
            # physical gradient: sum_a d_a u * Jinv[a, k]
            grad = sum(gp[a][..., None] * batch.Jinv[:, :, None, a, :] for a in range(d))
        if nder >= 2:
            lap = -np.matmul(grad, batch.hcurv[:, :, :, None])[..., 0]
            for a in range(d):
                for b in range(a, d):
                    o = [0] * d
                    o[a] += 1
                    o[b] += 1
                    w = batch.ginv[:, :, a, b] * (1.0 if a == b else 2.0)
                    lap += w[..., None] * _contract(per_dir, o, loc)
        if self.coefs.ndim == 1:
            val = val[..., 0]
            grad = grad[..., 0, :] if grad is not None else None
            lap = lap[..., 0] if lap is not None else None
        return val, grad, lap

    def __call__(self, points):
        """Values at parametric ``points`` of shape ``(N, d)``."""
        V = self.space.basis_matrices(points, nder=0)[0]
        return V @ self.coefs

    def __repr__(self):
        return "DiscreteField(n=%d, ncomp=%d)" % (self.space.n_active, self.ncomp)


@dataclass
class SparseSystem:
    """Symmetric system on the free indices with eliminated Dirichlet values."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_total: int = None
    full_matrix: sp.csr_matrix = None

    def __post_init__(self):
        if self.n_total is None:
            self.n_total = len(self.free) + len(self.fixed)

    @property
    def n(self):
        return self.matrix.shape[0]

    def expand(self, x):
        """Full coefficient vector from a solution on the free indices."""
        out = np.zeros(self.n_total)
        out[self.free] = x
        out[self.fixed] = self.fixed_values
        return out

    def restrict(self, full):
        return np.asarray(full)[self.free]

    def energy(self, full):
        """``sqrt(u^T K u)`` of a full coefficient vector (needs ``full_matrix``)."""
        full = np.asarray(full, dtype=float)
        return float(np.sqrt(max(full @ (self.full_matrix @ full), 0.0)))


def assemble_stiffness(space, mesh, f=None):
    """Stiffness matrix and load vector of ``space`` integrated on ``mesh``."""
    blocks = []
    loads = []
    Ps = []
    for b in mesh.batches():
        cb = cell_basis(space, mesh, b, 1)
        blocks.append(_gram(b.w, cb.grad))
        if f is not None:
            loads.append(np.matmul((b.w * f(b.x))[:, None, :], cb.val)[:, 0, :])
        Ps.append(extraction(space, cb.dl, cb.rows))
    P = sp.vstack(Ps, format="csr")
    K = _sym(P.T @ (_blockdiag(np.concatenate(blocks)) @ P))
    F = P.T @ np.concatenate(loads).ravel() if f is not None else np.zeros(space.n_active)
    return K, F


def _face_points(space, rule):
    """Gauss points on the boundary faces of the leaf cells of ``space``."""
    cells = CellSet.from_hierarchy(space.hierarchy)
    lo, size = cells.lower(), cells.sizes()
    d = space.dim
    face = QuadratureRule(rule.order, d - 1).points
    pts = []
    for a in range(d):
        other = [b for b in range(d) if b != a]
        for side in (0.0, 1.0):
            on = np.isclose(lo[:, a] if side == 0.0 else lo[:, a] + size[:, a], side)
            if not on.any():
                continue
            p = np.empty((on.sum(), len(face), d))
            p[:, :, a] = side
            for j, b in enumerate(other):
                p[:, :, b] = lo[on, b, None] + size[on, b, None] * face[None, :, j]
            pts.append(p.reshape(-1, d))
    return np.concatenate(pts)


def boundary_data(space, geometry, u_D=None, rule=None):
    """Indices of functions with non-zero trace and their Dirichlet coefficients.

    Coefficients are the discrete least-squares fit of ``u_D`` at boundary
    Gauss points, which reproduces data from the trace space exactly. With
    ``u_D`` ``None`` the data are homogeneous.
    """
    if rule is None:
        rule = QuadratureRule(space.degree + 2, space.dim)
    pts = _face_points(space, rule)
    V = space.basis_matrices(pts, nder=0)[0].tocsc()
    peak = abs(V).max(axis=0).toarray().ravel()
    fixed = np.flatnonzero(peak > 1e-10)
    if u_D is None:
        return fixed, np.zeros(len(fixed))
    x, _, _ = geometry.evaluate(pts)
    g = np.asarray(u_D(x), dtype=float)
    Vb = V[:, fixed]
    vals = spla.spsolve((Vb.T @ Vb).tocsc(), Vb.T @ g)
    return fixed, np.atleast_1d(vals)


def _eliminate(K, F, fixed, values):
    n = K.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    rhs = F[free] - K[free][:, fixed] @ values
    return SparseSystem(K[free][:, free].tocsr(), rhs, free, fixed, values, n, K)


def assemble_primal(space, geometry, f, dirichlet_data=None, rule=None, mesh=None):
    """Stiffness system ``K u = f`` with Dirichlet rows eliminated.

    Parameters
    ----------
    space : HierarchicalBasis
    geometry : GeometryMap
    f : callable
        Source term of physical points ``(..., d)``.
    dirichlet_data : callable, optional
        Boundary values; homogeneous when omitted.
    rule : QuadratureRule, optional
        Defaults to ``degree + 2`` points per direction.
    """
    if mesh is None:
        mesh = space_mesh(space, geometry, rule)
    K, F = assemble_stiffness(space, mesh, f)
    fixed, values = boundary_data(space, geometry, dirichlet_data, mesh.rule)
    return _eliminate(K, F, fixed, values)


@dataclass
class FluxOperators:
    """Blocks of the flux optimality system, assembled once per mesh."""

    div: sp.csr_matrix
    mass: sp.csr_matrix
    z: np.ndarray
    g: np.ndarray

    def system(self, C_F, beta):
        if not beta > 0:
            raise ValueError("beta must be positive")
        s = C_F ** 2 / beta
        A = (s * self.div + self.mass).tocsr()
        n = A.shape[0]
        return SparseSystem(A, -s * self.z + self.g, np.arange(n), n_total=n)


def assemble_flux_operators(flux_space, geometry, f, u_h, rule=None, mesh=None, own=None):
    """``Div_h``, ``M_h``, ``z_h`` on the flux mesh and ``g_h`` on the common refinement.

    ``g_h`` couples the flux basis with ``grad u_h``; it is integrated on the
    overlay of both meshes so that the integrand is polynomial per cell.
    ``own`` replaces the leaf-cell mesh of the flux space, e.g. by a finer one.
    """
    d = flux_space.dim
    if rule is None:
        rule = QuadratureRule(max(flux_space.degree, u_h.space.degree) + 2, d)
    if own is None:
        own = space_mesh(flux_space, geometry, rule)
    n = flux_space.n_active
    div_blocks = [[[] for _ in range(d)] for _ in range(d)]
    mass_blocks, zloc, Ps = [], [], []
    for b in own.batches():
        cb = cell_basis(flux_space, own, b, 1)
        wg = b.w[:, :, None, None] * cb.grad
        for a in range(d):
            for c in range(a, d):
                div_blocks[a][c].append(np.matmul(wg[..., a].swapaxes(1, 2), cb.grad[..., c]))
        mass_blocks.append(_gram(b.w, cb.val))
        fw = (b.w * f(b.x))[:, None, :]
        zloc.append(np.stack([np.matmul(fw, cb.grad[..., a])[:, 0, :] for a in range(d)], axis=1))
        Ps.append(extraction(flux_space, cb.dl, cb.rows))
    P = sp.vstack(Ps, format="csr")

    def glob(blocks):
        return P.T @ (_blockdiag(np.concatenate(blocks)) @ P)

    grid = [[None] * d for _ in range(d)]
    for a in range(d):
        for c in range(a, d):
            grid[a][c] = glob(div_blocks[a][c])
            if c != a:
                grid[c][a] = grid[a][c].T
    div = _sym(sp.bmat(grid))
    Ms = glob(mass_blocks)
    mass = _sym(sp.block_diag([Ms] * d))
    zl = np.concatenate(zloc)
    z = np.concatenate([P.T @ zl[:, a, :].ravel() for a in range(d)])
    if mesh is None:
        mesh = Mesh(overlay(CellSet.from_hierarchy(flux_space.hierarchy),
                            CellSet.from_hierarchy(u_h.space.hierarchy)), geometry, rule)
    g = np.zeros(d * n)
    for b in mesh.batches():
        _, gu, _ = u_h.on_batch(mesh, b, 1)
        cb = cell_basis(flux_space, mesh, b, 0)
        Pb = extraction(flux_space, cb.dl, cb.rows)
        loc = np.stack([np.matmul((b.w * gu[..., a])[:, None, :], cb.val)[:, 0, :] for a in range(d)])
        for a in range(d):
            g[a * n:(a + 1) * n] += Pb.T @ loc[a].ravel()
    return FluxOperators(div, mass, z, g)


def assemble_flux_system(flux_space, geometry, f, u_h, C_F, beta, rule=None, mesh=None):
    """Matrix ``(C_F^2/beta) Div + M`` and right-hand side ``-(C_F^2/beta) z + g``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    return assemble_flux_operators(flux_space, geometry, f, u_h, rule, mesh).system(C_F, beta)


def _as_system(sys_or_matrix, b=None):
    if isinstance(sys_or_matrix, SparseSystem):
        return sp.csc_matrix(sys_or_matrix.matrix), np.asarray(sys_or_matrix.rhs, dtype=float)
    return sp.csc_matrix(sys_or_matrix), np.asarray(b, dtype=float)


def _cholmod_solve(A, rhs):
    C = A.tocoo()
    M = cvxopt.spmatrix(C.data, C.row.astype(int), C.col.astype(int), size=A.shape)
    x = cvxopt.matrix(np.ascontiguousarray(rhs, dtype=float))
    try:
        cholmod.linsolve(M, x)
    except ArithmeticError as exc:
        raise NotSPDError("Cholesky factorisation failed: matrix is not SPD") from exc
    return np.array(x).ravel()


def solve_direct(sys, b=None):
    """Sparse Cholesky solve of an SPD system.

    Uses CHOLMOD when available. The fallback is SuperLU restricted to
    diagonal pivots under a symmetric fill-reducing ordering, an
    ``LDL^T``-type elimination in which a non-positive pivot means the
    matrix is not SPD.
    """
    A, rhs = _as_system(sys, b)
    if A.shape[0] == 0:
        return np.zeros(0)
    if cholmod is not None:
        return _cholmod_solve(A, rhs)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise NotSPDError("factorisation broke down: %s" % exc) from exc
    piv = lu.U.diagonal()
    if np.any(piv <= 0.0) or np.any(lu.perm_r != lu.perm_c):
        raise NotSPDError("matrix is not symmetric positive definite")
    return lu.solve(rhs)


@dataclass
class CGResult:
    """Outcome of :func:`solve_cg`."""

    x: np.ndarray
    iterations: int
    converged: bool
    residual: float


def solve_cg(sys, x0=None, tol=1e-10, max_iter=None, b=None):
    """Unpreconditioned conjugate gradients with relative residual ``tol``.

    Non-convergence is reported through ``CGResult.converged`` and a
    ``RuntimeWarning`` rather than an exception.
    """
    A, rhs = _as_system(sys, b)
    A = A.tocsr()
    n = A.shape[0]
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, True, 0.0)
    r = rhs - A @ x
    rr = r @ r
    it = 0
    p = r.copy()
    while np.sqrt(rr) > tol * bnorm and it < max_iter:
        Ap = A @ p
        alpha = rr / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    res = float(np.sqrt(rr) / bnorm)
    ok = res <= tol
    if not ok:
        warnings.warn("CG stopped after %d iterations at relative residual %.3e" % (it, res),
                      RuntimeWarning, stacklevel=2)
    return CGResult(x, it, ok, res)


def dump_coo(matrix, path):
    """Write ``row col value`` lines of a sparse matrix."""
    A = sp.coo_matrix(matrix)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write("%% %d %d %d\n" % (A.shape[0], A.shape[1], A.nnz))
        for i in order:
            fh.write("%d %d %.17g\n" % (A.row[i], A.col[i], A.data[i]))
