"""Domain hierarchies and (truncated) hierarchical B-spline bases.

A :class:`DomainHierarchy` stores the nested subdomains ``Omega^0 ⊇ Omega^1
⊇ ...`` as boolean cell masks on the dyadic grids of each level, so all set
operations are exact integer operations. A :class:`HierarchicalBasis` builds
the active index set and, for every level ``k``, a sparse matrix ``T^k`` that
expresses each active (truncated) function in the level-``k`` tensor basis.
On a cell whose deepest containing subdomain is ``Omega^k`` the hierarchical
functions are exactly the rows of ``T^k`` combined with the level-``k``
B-splines, which is how evaluation and assembly work.
"""

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .splines import KnotVector, TensorBasis, dyadic_refine, greville_abscissae

__all__ = [
    "DomainHierarchy",
    "HierarchicalBasis",
    "HierarchyDepthError",
    "insert_box",
    "truncate",
    "eval_hier",
]

DEFAULT_MAX_DEPTH = 12


class HierarchyDepthError(ValueError):
    """Raised when a refinement would exceed the configured maximum depth."""


def _upsample(mask):
    for a in range(mask.ndim):
        mask = mask.repeat(2, axis=a)
    return mask


def _children_count(mask):
    """Number of covered children per parent cell of a level mask."""
    shape = []
    for n in mask.shape:
        shape += [n // 2, 2]
    axes = tuple(range(1, 2 * mask.ndim, 2))
    return mask.reshape(shape).sum(axis=axes)


def _coarsen_any(mask):
    return _children_count(mask) > 0


def _summed_area(mask):
    s = np.zeros(tuple(n + 1 for n in mask.shape), dtype=np.int64)
    inner = mask.astype(np.int64)
    for a in range(mask.ndim):
        inner = inner.cumsum(axis=a)
    s[tuple(slice(1, None) for _ in mask.shape)] = inner
    return s


def _box_count(sat, lo, hi):
    """Number of marked cells in boxes ``lo..hi`` (inclusive) via inclusion-exclusion."""
    d = lo.shape[1]
    total = np.zeros(lo.shape[0], dtype=np.int64)
    for corner in range(2 ** d):
        idx = []
        sign = 1
        for a in range(d):
            if corner >> a & 1:
                idx.append(lo[:, a])
                sign = -sign
            else:
                idx.append(hi[:, a] + 1)
        total += sign * sat[tuple(idx)]
    return total


def _mask_to_boxes(mask):
    """Greedy decomposition of a boolean mask into disjoint inclusive boxes."""
    remaining = mask.copy()
    boxes = []
    d = mask.ndim
    while remaining.any():
        start = np.unravel_index(np.flatnonzero(remaining)[0], mask.shape)
        lo = list(start)
        hi = list(start)
        for a in reversed(range(d)):
            while hi[a] + 1 < mask.shape[a]:
                trial = hi.copy()
                trial[a] += 1
                sl = tuple(slice(lo[b], trial[b] + 1) if b != a else slice(trial[a], trial[a] + 1)
                           for b in range(d))
                if not remaining[sl].all():
                    break
                hi = trial
        remaining[tuple(slice(lo[b], hi[b] + 1) for b in range(d))] = False
        boxes.append((tuple(int(v) for v in lo), tuple(int(v) for v in hi)))
    return boxes


class DomainHierarchy:
    """Nested cell sets on dyadically refined grids of a base tensor mesh.

    Parameters
    ----------
    base_shape : tuple of int
        Number of level-0 cells per direction.
    max_depth : int
        Deepest admissible level.
    masks : sequence of ndarray of bool, optional
        Level masks; level ``k`` has shape ``base_shape * 2**k``.
    """

    def __init__(self, base_shape, max_depth=DEFAULT_MAX_DEPTH, masks=None):
        self.base_shape = tuple(int(n) for n in base_shape)
        self.max_depth = int(max_depth)
        if masks is None:
            masks = [np.ones(self.base_shape, dtype=bool)]
        masks = [np.asarray(m, dtype=bool) for m in masks]
        while len(masks) > 1 and not masks[-1].any():
            masks.pop()
        for k, m in enumerate(masks):
            if m.shape != self.level_shape(k):
                raise ValueError("mask of level %d has wrong shape" % k)
            m.setflags(write=False)
        if not masks[0].all():
            raise ValueError("level 0 must cover the whole parameter domain")
        for k in range(1, len(masks)):
            if np.any(masks[k] & ~_upsample(masks[k - 1])):
                raise ValueError("domains are not nested at level %d" % k)
        self.masks = tuple(masks)
        self._elements = None

    @property
    def dim(self):
        return len(self.base_shape)

    @property
    def n_levels(self):
        return len(self.masks)

    def level_shape(self, k):
        return tuple(n * 2 ** k for n in self.base_shape)

    def mask(self, k):
        """Cell mask of ``Omega^k`` (empty beyond the deepest level)."""
        if k < self.n_levels:
            return self.masks[k]
        return np.zeros(self.level_shape(k), dtype=bool)

    def __eq__(self, other):
        return (isinstance(other, DomainHierarchy) and self.base_shape == other.base_shape
                and self.n_levels == other.n_levels
                and all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks)))

    def __hash__(self):
        return hash((self.base_shape, tuple(m.tobytes() for m in self.masks)))

    # -- modification -------------------------------------------------

    def insert_cells(self, level, cells, extend=True):
        """Add a cell mask at ``level``; optionally dilate it by one cell.

        ``cells`` is a boolean array on the level grid. Coarser levels are
        enlarged to restore nestedness.
        """
        level = int(level)
        if level < 1:
            raise ValueError("boxes are inserted at level >= 1")
        if level > self.max_depth:
            raise HierarchyDepthError("level %d exceeds maximum depth %d" % (level, self.max_depth))
        cells = np.asarray(cells, dtype=bool)
        if cells.shape != self.level_shape(level):
            raise ValueError("cell mask has wrong shape for level %d" % level)
        if extend:
            cells = ndimage.binary_dilation(cells, structure=np.ones((3,) * self.dim, dtype=bool))
        masks = [self.mask(k).copy() for k in range(max(self.n_levels, level + 1))]
        masks[level] |= cells
        for k in range(level - 1, 0, -1):
            masks[k] |= _coarsen_any(masks[k + 1])
        return DomainHierarchy(self.base_shape, self.max_depth, masks)

    def insert_box(self, level, lo, hi, extend=True):
        """Add the inclusive cell box ``lo..hi`` of the level grid."""
        shape = self.level_shape(level) if level <= self.max_depth else None
        lo = tuple(int(v) for v in lo)
        hi = tuple(int(v) for v in hi)
        if level > self.max_depth:
            raise HierarchyDepthError("level %d exceeds maximum depth %d" % (level, self.max_depth))
        if len(lo) != self.dim or len(hi) != self.dim:
            raise ValueError("box dimension mismatch")
        if any(l < 0 or h >= n or l > h for l, h, n in zip(lo, hi, shape)):
            raise ValueError("box %r-%r outside the level-%d grid %r" % (lo, hi, level, shape))
        cells = np.zeros(shape, dtype=bool)
        cells[tuple(slice(l, h + 1) for l, h in zip(lo, hi))] = True
        return self.insert_cells(level, cells, extend=extend)

    def coarsened(self, levels):
        """Hierarchy whose level ``k`` covers ``Omega^{k+levels}``, clamped at level 0."""
        levels = int(levels)
        if levels < 0:
            raise ValueError("coarsening must be non-negative")
        masks = [np.ones(self.base_shape, dtype=bool)]
        for k in range(1, self.n_levels - levels):
            m = self.masks[k + levels]
            for _ in range(levels):
                m = _coarsen_any(m)
            masks.append(m)
        return DomainHierarchy(self.base_shape, self.max_depth, masks)

    # -- mesh -------------------------------------------------------

    def elements(self):
        """Leaf cells as ``(grid_level, cells, domain_level)``.

        ``cells`` holds integer cell indices on the grid of ``grid_level``.
        A coarse cell only partly covered by the next subdomain is split;
        its uncovered children are elements of one finer grid level whose
        domain level stays that of the parent.
        """
        if self._elements is not None:
            return self._elements
        d = self.dim
        gl, cells, dl = [], [], []
        for k in range(self.n_levels):
            m = self.masks[k]
            if k + 1 < self.n_levels:
                child = self.masks[k + 1]
                cnt = _children_count(child)
                none = cnt == 0
                partial = m & ~none & (cnt < 2 ** d)
            else:
                child = None
                none = np.ones_like(m)
                partial = np.zeros_like(m)
            idx = np.argwhere(m & none)
            gl.append(np.full(len(idx), k))
            cells.append(idx)
            dl.append(np.full(len(idx), k))
            if partial.any():
                idx = np.argwhere(_upsample(partial) & ~child)
                gl.append(np.full(len(idx), k + 1))
                cells.append(idx)
                dl.append(np.full(len(idx), k))
        self._elements = (np.concatenate(gl), np.concatenate(cells).reshape(-1, d),
                          np.concatenate(dl))
        return self._elements

    @property
    def n_elements(self):
        return len(self.elements()[0])

    def domain_level(self, points):
        """Deepest level ``k`` whose subdomain contains each parametric point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts), dtype=int)
        for k in range(1, self.n_levels):
            shape = np.array(self.level_shape(k))
            c = np.clip(np.floor(pts * shape).astype(int), 0, shape - 1)
            out[self.masks[k][tuple(c.T)]] = k
        return out

    # -- serialisation ------------------------------------------------

    def boxes(self, level):
        """Disjoint inclusive boxes whose union is ``Omega^level``."""
        return _mask_to_boxes(self.mask(level))

    def to_text(self):
        lines = ["# base_cells: " + " ".join(map(str, self.base_shape)),
                 "# max_depth: %d" % self.max_depth]
        for k in range(1, self.n_levels):
            for lo, hi in self.boxes(k):
                lines.append("%d; %s; %s" % (k, " ".join(map(str, lo)), " ".join(map(str, hi))))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        base = None
        depth = DEFAULT_MAX_DEPTH
        entries = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "base_cells":
                    base = tuple(int(v) for v in val.split())
                elif key.strip() == "max_depth":
                    depth = int(val)
                continue
            lev, lo, hi = (part.strip() for part in line.split(";"))
            entries.append((int(lev), tuple(int(v) for v in lo.split()),
                            tuple(int(v) for v in hi.split())))
        if base is None:
            raise ValueError("missing '# base_cells:' header")
        h = cls(base, depth)
        n_levels = max([e[0] for e in entries], default=0) + 1
        masks = [h.mask(k).copy() for k in range(n_levels)]
        for lev, lo, hi in entries:
            masks[lev][tuple(slice(l, u + 1) for l, u in zip(lo, hi))] = True
        return cls(base, depth, masks)

    def __repr__(self):
        return "DomainHierarchy(base=%r, levels=%d, elements=%d)" % (
            self.base_shape, self.n_levels, self.n_elements)


def _padded_rows(R):
    """Fixed-width (columns, values) arrays of the rows of a CSR matrix."""
    R = sp.csr_matrix(R)
    nnz = np.diff(R.indptr)
    w = max(int(nnz.max()), 1)
    cols = np.zeros((R.shape[0], w), dtype=np.int64)
    vals = np.zeros((R.shape[0], w))
    pos = np.arange(w)[None, :] < nnz[:, None]
    cols[pos] = R.indices
    vals[pos] = R.data
    return cols, vals


def _kron_rows(padded, fine_shape, coarse_shape, rows):
    """Selected rows of the Kronecker product of 1D two-scale matrices."""
    n_fine, n_coarse = int(np.prod(fine_shape)), int(np.prod(coarse_shape))
    if len(rows) == 0:
        return sp.csr_matrix((n_fine, n_coarse))
    multi = np.unravel_index(rows, fine_shape)
    cols = np.zeros((len(rows), 1), dtype=np.int64)
    vals = np.ones((len(rows), 1))
    for a, (pc, pv) in enumerate(padded):
        c = pc[multi[a]]
        v = pv[multi[a]]
        cols = (cols[:, :, None] * coarse_shape[a] + c[:, None, :]).reshape(len(rows), -1)
        vals = (vals[:, :, None] * v[:, None, :]).reshape(len(rows), -1)
    r = np.broadcast_to(rows[:, None], cols.shape)
    keep = vals != 0.0
    return sp.csr_matrix((vals[keep], (r[keep], cols[keep])), shape=(n_fine, n_coarse))


class HierarchicalBasis:
    """Hierarchical B-spline space over a :class:`DomainHierarchy`.

    Parameters
    ----------
    degree : int or tuple of int
        Polynomial degree, per direction if a tuple.
    hierarchy : DomainHierarchy
        Nested subdomains.
    base_breakpoints : sequence of array_like, optional
        Level-0 breakpoints per direction; defaults to uniform grids with
        ``hierarchy.base_shape`` cells.
    truncated : bool
        THB mode when true, plain HB otherwise.
    """

    def __init__(self, degree, hierarchy, base_breakpoints=None, truncated=True):
        d = hierarchy.dim
        degrees = (int(degree),) * d if np.isscalar(degree) else tuple(int(p) for p in degree)
        if len(degrees) != d:
            raise ValueError("need one degree per direction")
        if base_breakpoints is None:
            base_breakpoints = [np.linspace(0.0, 1.0, n + 1) for n in hierarchy.base_shape]
        self.degrees = degrees
        self.hierarchy = hierarchy
        self.base_breakpoints = tuple(np.asarray(b, dtype=float) for b in base_breakpoints)
        if tuple(len(b) - 1 for b in self.base_breakpoints) != hierarchy.base_shape:
            raise ValueError("base breakpoints do not match the hierarchy base grid")
        self.truncated = bool(truncated)
        self._kvs = [[KnotVector.from_breakpoints(b, p)] for b, p in zip(self.base_breakpoints, degrees)]
        self._R1d = [[None] for _ in range(d)]
        self._build()

    # -- level spaces -------------------------------------------------

    @property
    def dim(self):
        return self.hierarchy.dim

    @property
    def degree(self):
        return max(self.degrees)

    @property
    def n_levels(self):
        return self.hierarchy.n_levels

    def knotvectors(self, k):
        for a in range(self.dim):
            while len(self._kvs[a]) <= k:
                fine, R = dyadic_refine(self._kvs[a][-1])
                self._kvs[a].append(fine)
                self._R1d[a].append(R)
        return tuple(self._kvs[a][k] for a in range(self.dim))

    def level_basis(self, k):
        return TensorBasis(self.knotvectors(k))

    def level_shape(self, k):
        return tuple(kv.n for kv in self.knotvectors(k))

    def refinement_1d(self, k):
        """Per-direction two-scale matrices from level ``k-1`` to ``k``."""
        self.knotvectors(k)
        return tuple(self._R1d[a][k] for a in range(self.dim))

    def refinement(self, k):
        """Full tensor two-scale matrix from level ``k-1`` to ``k``."""
        R = None
        for r in self.refinement_1d(k):
            R = r if R is None else sp.kron(R, r, format="csr")
        return sp.csr_matrix(R)

    def _support_boxes(self, k):
        los, his = zip(*(kv.support_cells() for kv in self.knotvectors(k)))
        grids = np.meshgrid(*[np.arange(n) for n in self.level_shape(k)], indexing="ij")
        multi = [g.ravel() for g in grids]
        lo = np.stack([los[a][multi[a]] for a in range(self.dim)], axis=1)
        hi = np.stack([his[a][multi[a]] for a in range(self.dim)], axis=1)
        return lo, hi

    # -- construction ---------------------------------------------------

    def _build(self):
        h = self.hierarchy
        L = h.n_levels
        sats = [_summed_area(h.mask(k)) for k in range(L + 1)]
        self._inside, self._intersects, self._active = [], [], []
        for k in range(L):
            lo, hi = self._support_boxes(k)
            vol = np.prod(hi - lo + 1, axis=1)
            cnt = _box_count(sats[k], lo, hi)
            nxt = _box_count(sats[k + 1], 2 * lo, 2 * hi + 1)
            inside = cnt == vol
            inside_next = nxt == vol * 2 ** self.dim
            self._inside.append(inside)
            self._intersects.append(cnt > 0)
            self._active.append(inside & ~inside_next)
        counts = [int(a.sum()) for a in self._active]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        self.n_active = int(self.offsets[-1])
        self.active_flat = [np.flatnonzero(a) for a in self._active]
        self.active_level = np.repeat(np.arange(L), counts)
        self._T = []
        for k in range(L):
            n_k = int(np.prod(self.level_shape(k)))
            act = self.active_flat[k]
            E = sp.csr_matrix((np.ones(len(act)), (act, self.offsets[k] + np.arange(len(act)))),
                              shape=(n_k, self.n_active))
            if k == 0:
                self._T.append(E)
                continue
            need = self._intersects[k] & ~self._inside[k] if self.truncated else self._intersects[k]
            rows = np.flatnonzero(need)
            padded = [_padded_rows(r) for r in self.refinement_1d(k)]
            Rk = _kron_rows(padded, self.level_shape(k), self.level_shape(k - 1), rows)
            T = (Rk @ self._T[k - 1]).tocsr()
            T.eliminate_zeros()
            self._T.append((T + E).tocsr())

    # -- queries --------------------------------------------------------

    def characteristic(self, k):
        """Diagonal 0/1 flags ``x^k_i`` of active level-``k`` functions."""
        if k < self.n_levels:
            return self._active[k].astype(float)
        return np.zeros(int(np.prod(self.level_shape(k))))

    def expansion(self, k):
        """Sparse ``T^k``: active functions in the level-``k`` tensor basis."""
        return self._T[k]

    def active_pairs(self):
        """``(level, flat index)`` of every active function in global order."""
        return np.stack([self.active_level, np.concatenate(self.active_flat)], axis=1)

    def greville_points(self):
        """Greville point of each active function at its own level."""
        out = []
        for k in range(self.n_levels):
            g = [greville_abscissae(kv) for kv in self.knotvectors(k)]
            multi = np.unravel_index(self.active_flat[k], self.level_shape(k))
            out.append(np.stack([g[a][multi[a]] for a in range(self.dim)], axis=1))
        return np.concatenate(out).reshape(-1, self.dim)

    def insert_box(self, level, lo, hi, extend=True):
        return HierarchicalBasis(self.degrees, self.hierarchy.insert_box(level, lo, hi, extend),
                                 self.base_breakpoints, self.truncated)

    def with_hierarchy(self, hierarchy, degree=None):
        return HierarchicalBasis(self.degrees if degree is None else degree, hierarchy,
                                 self.base_breakpoints, self.truncated)

    def truncate(self, level, coefs):
        """``(I - X^{level+1}) R^{level+1} C``: coarse coefficients truncated one level up."""
        level = int(level)
        if not 0 <= level < self.hierarchy.max_depth:
            raise ValueError("level %d out of range" % level)
        coefs = np.asarray(coefs, dtype=float)
        n = int(np.prod(self.level_shape(level)))
        if coefs.shape[0] != n:
            raise ValueError("expected %d level-%d coefficients" % (n, level))
        fine = self.refinement(level + 1) @ coefs
        x = self.characteristic(level + 1)
        return (1.0 - x).reshape((-1,) + (1,) * (fine.ndim - 1)) * fine

    def basis_matrices(self, points, nder=1):
        """Sparse ``(N, n_active)`` matrices of values and parametric derivatives.

        Returns ``[V, [G_0, .., G_{d-1}]]`` and, for ``nder == 2``, also the
        nested list of second derivative matrices.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        N = len(pts)
        dl = self.hierarchy.domain_level(pts)
        d = self.dim
        parts_v, parts_g, parts_h = [], [[] for _ in range(d)], [[[] for _ in range(d)] for _ in range(d)]
        order = []
        for k in np.unique(dl):
            sel = np.flatnonzero(dl == k)
            order.append(sel)
            idx, ders = self.level_basis(k).evaluate(pts[sel], nder=nder)
            n_k = int(np.prod(self.level_shape(k)))
            r = np.repeat(np.arange(len(sel)), idx.shape[1])

            def mat(vals):
                return sp.csr_matrix((vals.ravel(), (r, idx.ravel())), shape=(len(sel), n_k)) @ self._T[k]

            parts_v.append(mat(ders[0]))
            if nder >= 1:
                for a in range(d):
                    parts_g[a].append(mat(ders[1][..., a]))
            if nder >= 2:
                for a in range(d):
                    for b in range(d):
                        parts_h[a][b].append(mat(ders[2][..., a, b]))
        perm = np.argsort(np.concatenate(order))

        def stack(parts):
            return sp.vstack(parts, format="csr")[perm]

        out = [stack(parts_v)]
        if nder >= 1:
            out.append([stack(p) for p in parts_g])
        if nder >= 2:
            out.append([[stack(p) for p in row] for row in parts_h])
        return out

    def __repr__(self):
        return "HierarchicalBasis(degrees=%r, levels=%d, n_active=%d, %s)" % (
            self.degrees, self.n_levels, self.n_active, "THB" if self.truncated else "HB")


def insert_box(h, level, lo, hi):
    """Insert the cell box ``lo..hi`` at ``level`` with one-cell extension."""
    return h.insert_box(level, lo, hi, extend=True)


def truncate(h, level, coefs):
    """Level-``level+1`` coefficients of the truncated refinement of ``coefs``."""
    return h.truncate(level, coefs)


def eval_hier(h, point):
    """Active ``(level, index)`` pairs with non-zero value, values and gradients at a point."""
    V, G = h.basis_matrices(np.asarray(point, dtype=float).reshape(1, -1), nder=1)
    v = V.toarray()[0]
    g = np.stack([Ga.toarray()[0] for Ga in G], axis=1)
    nz = np.flatnonzero((v != 0.0) | np.any(g != 0.0, axis=1))
    pairs = h.active_pairs()[nz]
    return [(int(l), int(i)) for l, i in pairs], v[nz], g[nz]
