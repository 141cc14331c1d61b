"""Geometry maps, Gauss quadrature and physical meshes.

Every discrete space in a run lives on dyadic refinements of one base grid
of the unit parameter box, so cells are identified by ``(grid level,
integer index)``. :class:`CellSet` holds such cells, :func:`overlay` forms
the common refinement of several cell sets, and :class:`Mesh` adds the
geometry map and quadrature.
"""

import numpy as np

from .splines import KnotVector, TensorBasis, _rationalise, basis_ders, tensor_cells

__all__ = [
    "QuadratureRule",
    "GeometryMap",
    "DegenerateGeometryError",
    "map_point",
    "physical_gradient",
    "integrate",
    "unit_square",
    "unit_cube",
    "rectangle",
    "quarter_annulus",
    "CellSet",
    "overlay",
    "graded",
    "locate",
    "Mesh",
]


class DegenerateGeometryError(ValueError):
    """Raised when the Jacobian determinant of a map is not positive."""


class QuadratureRule:
    """Tensor Gauss--Legendre rule with ``order`` points per direction on ``[0, 1]``."""

    def __init__(self, order, dim):
        order = int(order)
        if order < 1:
            raise ValueError("quadrature order must be positive")
        x, w = np.polynomial.legendre.leggauss(order)
        self.order = order
        self.dim = int(dim)
        self.points_1d = 0.5 * (x + 1.0)
        self.weights_1d = 0.5 * w
        grids = np.meshgrid(*([self.points_1d] * self.dim), indexing="ij")
        self.points = np.stack([g.ravel() for g in grids], axis=1)
        wgrids = np.meshgrid(*([self.weights_1d] * self.dim), indexing="ij")
        self.weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)

    @property
    def n_points(self):
        return self.order ** self.dim

    def __repr__(self):
        return "QuadratureRule(order=%d, dim=%d)" % (self.order, self.dim)


class GeometryMap:
    """Spline map ``Phi(xi) = sum_i N_i(xi) c_i`` from ``[0,1]^d`` to physical space.

    Parameters
    ----------
    basis : TensorBasis
        B-spline or NURBS basis of the map.
    control_points : array_like
        Shape ``basis.shape + (d,)``.
    name : str
        Label used in reports.
    """

    def __init__(self, basis, control_points, name="geometry"):
        ctrl = np.asarray(control_points, dtype=float)
        if ctrl.shape != basis.shape + (basis.dim,):
            raise ValueError("control points must have shape %r" % (basis.shape + (basis.dim,),))
        ctrl.setflags(write=False)
        self.basis = basis
        self.control_points = ctrl
        self.name = name
        self._flat = ctrl.reshape(-1, basis.dim)
        self._validate()

    @property
    def dim(self):
        return self.basis.dim

    def _validate(self):
        rule = QuadratureRule(max(self.basis.degrees) + 2, self.dim)
        cells = [kv.breakpoints for kv in self.basis.knotvectors]
        grids = np.meshgrid(*[np.arange(len(b) - 1) for b in cells], indexing="ij")
        for multi in zip(*[g.ravel() for g in grids]):
            lo = np.array([cells[a][multi[a]] for a in range(self.dim)])
            hi = np.array([cells[a][multi[a] + 1] for a in range(self.dim)])
            _, J, _ = self.evaluate(lo + (hi - lo) * rule.points)
            if np.any(np.linalg.det(J) <= 0.0):
                raise DegenerateGeometryError("non-positive Jacobian determinant in %s" % self.name)

    def evaluate(self, points, hessian=False):
        """Physical points ``(N, d)``, Jacobians ``(N, d, d)`` and optionally Hessians.

        ``J[n, k, a] = d x_k / d xi_a``; the Hessian array has shape
        ``(N, d, d, d)`` indexed ``[n, k, a, b]``.
        """
        idx, ders = self.basis.evaluate(points, nder=2 if hessian else 1)
        c = self._flat[idx]
        x = np.einsum("ni,nik->nk", ders[0], c)
        J = np.einsum("nia,nik->nka", ders[1], c)
        H = np.einsum("niab,nik->nkab", ders[2], c) if hessian else None
        return x, J, H

    def evaluate_cells(self, lo, size, points_1d, hessian=False):
        """Map data at tensor Gauss points of parametric boxes.

        Each box must lie inside one cell of the map. Returns arrays shaped
        ``(nb, nq, ...)`` like :meth:`evaluate`.
        """
        nb, d = lo.shape
        g = len(points_1d)
        nder = 2 if hessian else 1
        per_dir = []
        flat = np.zeros((nb, 1), dtype=np.int64)
        for a, kv in enumerate(self.basis.knotvectors):
            span = kv.span(lo[:, a] + 0.5 * size[:, a])
            xi = lo[:, a, None] + size[:, a, None] * points_1d[None, :]
            _, D = basis_ders(kv, xi.ravel(), nder, np.repeat(span, g))
            per_dir.append(D.reshape(nb, g, nder + 1, kv.degree + 1))
            r = span[:, None] - kv.degree + np.arange(kv.degree + 1)[None, :]
            flat = (flat[:, :, None] * self.basis.shape[a] + r[:, None, :]).reshape(nb, -1)
        val = tensor_cells(per_dir, [0] * d)
        nq, nloc = val.shape[1:]
        ders = [val.reshape(-1, nloc),
                np.stack([tensor_cells(per_dir, [int(b == a) for b in range(d)]) for a in range(d)],
                         axis=-1).reshape(-1, nloc, d)]
        if hessian:
            H = np.empty((nb, nq, nloc, d, d))
            for a in range(d):
                for b in range(a, d):
                    o = [0] * d
                    o[a] += 1
                    o[b] += 1
                    H[..., a, b] = H[..., b, a] = tensor_cells(per_dir, o)
            ders.append(H.reshape(-1, nloc, d, d))
        if self.basis.weights is not None:
            w = np.repeat(self.basis.weights.ravel()[flat], nq, axis=0)
            ders = _rationalise(ders, w)
        c = self._flat[flat]
        x = np.matmul(ders[0].reshape(nb, nq, nloc), c)
        G = ders[1].reshape(nb, nq, nloc, d)
        J = np.stack([np.matmul(G[..., a], c) for a in range(d)], axis=-1)
        H = None
        if hessian:
            Hs = ders[2].reshape(nb, nq, nloc, d, d)
            Hf = Hs.reshape(nb, nq, nloc, d * d).swapaxes(2, 3)
            H = np.matmul(Hf, c[:, None, :, :]).swapaxes(2, 3).reshape(nb, nq, d, d, d)
        return x, J, H

    def bounding_box(self):
        """Axis-aligned box enclosing the image, from a dense sample of the map."""
        t = np.linspace(0.0, 1.0, 65)
        grids = np.meshgrid(*([t] * self.dim), indexing="ij")
        x, _, _ = self.evaluate(np.stack([g.ravel() for g in grids], axis=1))
        return x.min(axis=0), x.max(axis=0)

    def __repr__(self):
        return "GeometryMap(%s, dim=%d)" % (self.name, self.dim)


def map_point(geometry, xi):
    """Physical point, Jacobian and its determinant at one parametric point."""
    xi = np.asarray(xi, dtype=float).reshape(1, -1)
    x, J, _ = geometry.evaluate(xi)
    det = float(np.linalg.det(J[0]))
    if det <= 0.0:
        raise DegenerateGeometryError("non-positive Jacobian determinant %g" % det)
    return x[0], J[0], det


def physical_gradient(J, grad):
    """Push a parametric gradient forward: ``J^{-T} g``."""
    J = np.asarray(J, dtype=float)
    if abs(np.linalg.det(J)) < 1e-300:
        raise np.linalg.LinAlgError("singular Jacobian")
    return np.linalg.solve(J.T, np.asarray(grad, dtype=float))


def integrate(rule, element, f):
    """Integrate ``f(x)`` over the image of a parametric box.

    ``element`` is ``(geometry, lo, hi)`` with box corners in ``[0,1]^d``.
    """
    geometry, lo, hi = element
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    xi = lo + (hi - lo) * rule.points
    x, J, _ = geometry.evaluate(xi)
    det = np.linalg.det(J)
    vals = np.asarray(f(x), dtype=float)
    return float(np.sum(rule.weights * vals * np.abs(det)) * np.prod(hi - lo))


def _linear_map(corners_lo, corners_hi, name):
    d = len(corners_lo)
    kvs = [KnotVector([0, 0, 1, 1], 1)] * d
    grids = np.meshgrid(*[np.array([lo, hi]) for lo, hi in zip(corners_lo, corners_hi)], indexing="ij")
    ctrl = np.stack(grids, axis=-1)
    return GeometryMap(TensorBasis(kvs), ctrl, name)


def unit_square():
    return _linear_map((0.0, 0.0), (1.0, 1.0), "unit square")


def unit_cube():
    return _linear_map((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), "unit cube")


def rectangle(lx=2.0, ly=1.0):
    return _linear_map((0.0, 0.0), (float(lx), float(ly)), "rectangle %gx%g" % (lx, ly))


def quarter_annulus(r_inner=1.0, r_outer=2.0):
    """Exact NURBS quarter annulus; ``xi_1`` is radial, ``xi_2`` angular."""
    radial = KnotVector([0, 0, 1, 1], 1)
    angular = KnotVector([0, 0, 0, 1, 1, 1], 2)
    w = np.cos(np.pi / 4)
    ctrl = np.zeros((2, 3, 2))
    for i, r in enumerate((r_inner, r_outer)):
        ctrl[i] = [[r, 0.0], [r, r], [0.0, r]]
    weights = np.array([[1.0, w, 1.0], [1.0, w, 1.0]])
    return GeometryMap(TensorBasis([radial, angular], weights), ctrl,
                       "quarter annulus r=%g..%g" % (r_inner, r_outer))


class CellSet:
    """Cells of dyadic grids over a base grid of the unit parameter box.

    Parameters
    ----------
    base_shape : tuple of int
        Level-0 cells per direction.
    level : array_like of int
        Grid level of each cell.
    index : array_like of int, shape (n, d)
        Cell index on the grid of its level.
    """

    def __init__(self, base_shape, level, index):
        self.base_shape = tuple(int(n) for n in base_shape)
        self.level = np.asarray(level, dtype=np.int64).ravel()
        self.index = np.asarray(index, dtype=np.int64).reshape(len(self.level), len(self.base_shape))

    @classmethod
    def from_hierarchy(cls, hierarchy):
        gl, cells, _ = hierarchy.elements()
        return cls(hierarchy.base_shape, gl, cells)

    def __len__(self):
        return len(self.level)

    @property
    def dim(self):
        return len(self.base_shape)

    def sizes(self):
        """Parametric side lengths ``(n, d)``."""
        return 1.0 / (np.array(self.base_shape)[None, :] * 2.0 ** self.level[:, None])

    def lower(self):
        return self.index * self.sizes()

    def upper(self):
        return (self.index + 1) * self.sizes()

    def centers(self):
        return (self.index + 0.5) * self.sizes()

    def keys(self, max_level=None):
        """Unique integer key of each cell across levels."""
        top = int(self.level.max()) if max_level is None else max_level
        offsets = _level_offsets(self.base_shape, top)
        return _keys(self.base_shape, self.level, self.index, offsets)

    def take(self, sel):
        return CellSet(self.base_shape, self.level[sel], self.index[sel])


def _level_offsets(base_shape, top):
    sizes = [int(np.prod(base_shape)) * 2 ** (len(base_shape) * k) for k in range(top + 1)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def _keys(base_shape, level, index, offsets):
    flat = np.zeros(len(level), dtype=np.int64)
    for a, n in enumerate(base_shape):
        flat = flat * (n * 2 ** level) + index[:, a]
    return offsets[level] + flat


def _ancestor_keys(cs, offsets):
    """Keys of all strict ancestors of the cells in ``cs``."""
    out = []
    for shift in range(1, int(cs.level.max()) + 1 if len(cs) else 1):
        sel = cs.level >= shift
        if not sel.any():
            break
        out.append(_keys(cs.base_shape, cs.level[sel] - shift, cs.index[sel] >> shift, offsets))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def overlay(*cellsets):
    """Common refinement of partitions of the parameter box.

    At every point the finest of the cells containing it is kept; the result
    is sorted by level and index.
    """
    base = cellsets[0].base_shape
    top = max(int(c.level.max()) for c in cellsets)
    offsets = _level_offsets(base, top)
    anc = [_ancestor_keys(c, offsets) for c in cellsets]
    kept_l, kept_i, kept_k = [], [], []
    for a, cs in enumerate(cellsets):
        keys = _keys(base, cs.level, cs.index, offsets)
        strict = np.zeros(len(cs), dtype=bool)
        for b in range(len(cellsets)):
            if b != a:
                strict |= np.isin(keys, anc[b])
        kept_l.append(cs.level[~strict])
        kept_i.append(cs.index[~strict])
        kept_k.append(keys[~strict])
    keys = np.concatenate(kept_k)
    _, first = np.unique(keys, return_index=True)
    level = np.concatenate(kept_l)[first]
    index = np.concatenate(kept_i)[first]
    return CellSet(base, level, index)


def graded(cells, point, depth):
    """Split cells near a parametric ``point`` repeatedly, ``depth`` times at most.

    A cell is split into its ``2^d`` children while its distance to the
    point is below twice its width, which resolves point singularities of
    integrands without touching cells away from the point.
    """
    point = np.asarray(point, dtype=float)
    d = cells.dim
    offsets = np.stack(np.meshgrid(*[[0, 1]] * d, indexing="ij"), axis=-1).reshape(-1, d)
    level, index = cells.level, cells.index
    for _ in range(int(depth)):
        cs = CellSet(cells.base_shape, level, index)
        lo, size = cs.lower(), cs.sizes()
        gap = np.maximum(np.maximum(lo - point, point - lo - size), 0.0)
        near = np.linalg.norm(gap, axis=1) < 2.0 * size.max(axis=1)
        if not near.any():
            break
        kids = (2 * index[near])[:, None, :] + offsets[None]
        level = np.concatenate([level[~near], np.repeat(level[near] + 1, len(offsets))])
        index = np.concatenate([index[~near], kids.reshape(-1, d)])
    return CellSet(cells.base_shape, level, index)


def locate(fine, coarse):
    """Index of the cell of ``coarse`` containing each cell of ``fine``."""
    top = max(int(fine.level.max()), int(coarse.level.max()))
    offsets = _level_offsets(fine.base_shape, top)
    ck = _keys(coarse.base_shape, coarse.level, coarse.index, offsets)
    order = np.argsort(ck)
    sk = ck[order]
    out = np.full(len(fine), -1, dtype=np.int64)
    for shift in range(0, int(fine.level.max()) + 1):
        sel = (fine.level >= shift) & (out < 0)
        if not sel.any():
            continue
        k = _keys(fine.base_shape, fine.level[sel] - shift, fine.index[sel] >> shift, offsets)
        pos = np.clip(np.searchsorted(sk, k), 0, len(sk) - 1)
        hit = sk[pos] == k
        idx = np.flatnonzero(sel)[hit]
        out[idx] = order[pos[hit]]
    if np.any(out < 0):
        raise ValueError("cells are not nested in the coarse partition")
    return out


def _inv_det(J):
    """Closed-form inverse and determinant of stacked 2x2 or 3x3 matrices."""
    d = J.shape[-1]
    if d == 2:
        a, b, c, e = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
        det = a * e - b * c
        inv = np.stack([np.stack([e, -b], -1), np.stack([-c, a], -1)], -2) / det[..., None, None]
        return inv, det
    if d == 3:
        cof = np.empty_like(J)
        for i in range(3):
            for j in range(3):
                i1, i2 = (i + 1) % 3, (i + 2) % 3
                j1, j2 = (j + 1) % 3, (j + 2) % 3
                cof[..., j, i] = J[..., i1, j1] * J[..., i2, j2] - J[..., i1, j2] * J[..., i2, j1]
        det = np.einsum("...j,...j->...", J[..., 0, :], cof[..., :, 0])
        return cof / det[..., None, None], det
    return np.linalg.inv(J), np.linalg.det(J)


def _spectral_norm(J):
    """Largest singular value of stacked square matrices."""
    G = np.matmul(J.swapaxes(-1, -2), J)
    if J.shape[-1] == 2:
        tr = G[..., 0, 0] + G[..., 1, 1]
        det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
        return np.sqrt(0.5 * (tr + np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))))
    return np.sqrt(np.linalg.eigvalsh(G)[..., -1])


class QuadBatch:
    """Geometry data at the quadrature points of a block of cells."""

    __slots__ = ("sel", "xi", "x", "J", "Jinv", "det", "w", "ginv", "hcurv")

    def __init__(self, sel, xi, x, J, Jinv, det, w, ginv=None, hcurv=None):
        self.sel = sel
        self.xi = xi
        self.x = x
        self.J = J
        self.Jinv = Jinv
        self.det = det
        self.w = w
        self.ginv = ginv
        self.hcurv = hcurv


class Mesh:
    """Cells of a parameter partition mapped by a geometry, with quadrature.

    Parameters
    ----------
    cells : CellSet
        Partition of the parameter box.
    geometry : GeometryMap
        Map to physical space.
    rule : QuadratureRule
        Per-cell tensor Gauss rule.
    chunk : int
        Number of cells processed per vectorised block.
    cache_points : int
        Geometry data of meshes with at most this many quadrature points
        is kept after the first pass and reused.
    """

    def __init__(self, cells, geometry, rule, chunk=4096, cache_points=2_000_000):
        if cells.dim != geometry.dim or rule.dim != geometry.dim:
            raise ValueError("dimension mismatch between cells, geometry and rule")
        self.cells = cells
        self.geometry = geometry
        self.rule = rule
        self.chunk = int(chunk)
        self.cache_points = int(cache_points)
        self._cache = None
        self._cache_second = False
        self._h = None
        self._vol = None

    def __len__(self):
        return len(self.cells)

    def batches(self, second=False):
        """Yield :class:`QuadBatch` blocks covering all cells in order.

        With ``second=True`` the batch also carries the inverse metric
        ``J^{-1} J^{-T}`` and the curvature terms needed for physical
        Laplacians.
        """
        if self._cache is not None and (self._cache_second or not second):
            yield from self._cache
            return
        keep = len(self.cells) * self.rule.n_points <= self.cache_points
        out = []
        for b in self._compute(second):
            if keep:
                out.append(b)
            yield b
        if keep:
            self._cache, self._cache_second = out, second

    def _compute(self, second):
        n = len(self.cells)
        lo_all = self.cells.lower()
        size_all = self.cells.sizes()
        for start in range(0, n, self.chunk):
            sel = np.arange(start, min(start + self.chunk, n))
            lo = lo_all[sel]
            size = size_all[sel]
            xi = lo[:, None, :] + size[:, None, :] * self.rule.points[None, :, :]
            x, J, H = self.geometry.evaluate_cells(lo, size, self.rule.points_1d, hessian=second)
            Jinv, det = _inv_det(J)
            if np.any(det <= 0.0):
                raise DegenerateGeometryError("non-positive Jacobian determinant")
            w = self.rule.weights[None, :] * np.prod(size, axis=1)[:, None] * det
            ginv = hcurv = None
            if second:
                ginv = np.matmul(Jinv, Jinv.swapaxes(-1, -2))
                d = ginv.shape[-1]
                hcurv = np.matmul(H.reshape(H.shape[:3] + (d * d,)),
                                  ginv.reshape(ginv.shape[:2] + (d * d, 1)))[..., 0]
            yield QuadBatch(sel, xi, x, J, Jinv, det, w, ginv, hcurv)

    def _metrics(self):
        h = np.empty(len(self.cells))
        vol = np.empty(len(self.cells))
        diam = np.sqrt(np.sum(self.cells.sizes() ** 2, axis=1))
        for b in self.batches():
            norms = _spectral_norm(b.J)
            h[b.sel] = norms.max(axis=1) * diam[b.sel]
            vol[b.sel] = b.w.sum(axis=1)
        self._h, self._vol = h, vol

    @property
    def h(self):
        """Physical element sizes ``h_K``."""
        if self._h is None:
            self._metrics()
        return self._h

    @property
    def volumes(self):
        if self._vol is None:
            self._metrics()
        return self._vol

    def integrate(self, f):
        """Per-cell integrals of ``f(x)`` with ``x`` of shape ``(..., d)``."""
        out = np.empty(len(self.cells))
        for b in self.batches():
            out[b.sel] = np.sum(b.w * f(b.x), axis=1)
        return out

    def dump(self):
        """Text listing ``level; lo; hi; h_K`` per cell."""
        lo, hi = self.cells.lower(), self.cells.upper()
        lines = ["# level; box-min; box-max; h_K"]
        for k in range(len(self.cells)):
            lines.append("%d; %s; %s; %.10e" % (
                self.cells.level[k], " ".join("%.10g" % v for v in lo[k]),
                " ".join("%.10g" % v for v in hi[k]), self.h[k]))
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return "Mesh(%d cells, %r)" % (len(self.cells), self.geometry)
