"""Univariate and tensor-product B-spline and NURBS bases.

Evaluation follows the Cox--de Boor recursion on half-open knot spans
``[t_i, t_{i+1})``; the right end point of the parameter interval is
attached to the last non-empty span so that every point of ``[0, 1]``
has exactly ``p + 1`` non-vanishing functions.
"""

from itertools import product
from math import factorial

import numpy as np
import scipy.sparse as sp

__all__ = [
    "KnotVector",
    "TensorBasis",
    "eval_univariate",
    "basis_ders",
    "greville_abscissae",
    "dyadic_refine",
    "eval_tensor",
    "tensor_combine",
    "tensor_cells",
]


class KnotVector:
    """Open, non-decreasing knot sequence on ``[0, 1]`` with degree ``p``.

    Parameters
    ----------
    knots : array_like
        Knot sequence with the first and last knot repeated ``p + 1`` times.
    degree : int
        Polynomial degree ``p >= 0``.
    """

    def __init__(self, knots, degree):
        knots = np.asarray(knots, dtype=float).ravel()
        p = int(degree)
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.size < 2 * p + 2:
            raise ValueError("knot vector too short for degree %d" % p)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knots must span [0, 1]")
        if np.any(knots[: p + 1] != knots[0]) or np.any(knots[-p - 1:] != knots[-1]):
            raise ValueError("knot vector must be open (end knots repeated p+1 times)")
        if knots.size > 2 * p + 2 and (knots[p + 1] == 0.0 or knots[-p - 2] == 1.0):
            raise ValueError("end knots repeated more than p+1 times")
        knots.setflags(write=False)
        self.knots = knots
        self.degree = p

    @classmethod
    def from_breakpoints(cls, breakpoints, degree):
        """Open knot vector with single interior knots at ``breakpoints``."""
        bp = np.unique(np.asarray(breakpoints, dtype=float))
        p = int(degree)
        knots = np.concatenate([np.repeat(bp[0], p), bp, np.repeat(bp[-1], p)])
        return cls(knots, p)

    @classmethod
    def uniform(cls, n_cells, degree):
        return cls.from_breakpoints(np.linspace(0.0, 1.0, int(n_cells) + 1), degree)

    @property
    def n(self):
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self):
        return np.unique(self.knots)

    @property
    def n_cells(self):
        return self.breakpoints.size - 1

    def span(self, xi):
        """Knot index ``s`` with ``t_s <= xi < t_{s+1}`` (last span closed)."""
        xi = np.asarray(xi, dtype=float)
        s = np.searchsorted(self.knots, xi, side="right") - 1
        return np.clip(s, self.degree, self.n - 1)

    def cell_index(self, xi):
        """Index of the cell (non-empty span) containing ``xi``."""
        bp = self.breakpoints
        c = np.searchsorted(bp, np.asarray(xi, dtype=float), side="right") - 1
        return np.clip(c, 0, bp.size - 2)

    def cell_span(self, cells):
        """Knot span index of each cell; active functions are ``span-p .. span``."""
        bp = self.breakpoints
        return np.searchsorted(self.knots, bp[np.asarray(cells)], side="right") - 1

    def support_cells(self):
        """First and last cell index covered by each basis function."""
        bp = self.breakpoints
        i = np.arange(self.n)
        lo = np.searchsorted(bp, self.knots[i], side="right") - 1
        hi = np.searchsorted(bp, self.knots[i + self.degree + 1], side="left") - 1
        return lo, hi

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return "KnotVector(degree=%d, n=%d, n_cells=%d)" % (self.degree, self.n, self.n_cells)


def _check_xi(xi):
    if not 0.0 <= xi <= 1.0:
        raise ValueError("parameter %r outside [0, 1]" % (xi,))


def eval_univariate(kv, i, xi, deriv_order=0):
    """Value or derivative of ``B_{i,p}`` at ``xi`` by the literal recursion.

    Divisions by zero in the recursion are defined to be zero. At ``xi = 1``
    the last non-empty span is treated as closed.
    """
    if not 0 <= i < kv.n:
        raise IndexError("basis index %d out of range [0, %d)" % (i, kv.n))
    _check_xi(xi)
    if deriv_order not in (0, 1, 2):
        raise ValueError("deriv_order must be 0, 1 or 2")
    t = kv.knots
    last = t[-1]

    def ratio(a, b):
        return 0.0 if b == 0.0 else a / b

    def rec(j, k, der):
        if der > k:
            return 0.0
        if k == 0:
            if t[j] <= xi < t[j + 1]:
                return 1.0
            return 1.0 if (xi == last and t[j] < t[j + 1] == last) else 0.0
        if der == 0:
            return (ratio(xi - t[j], t[j + k] - t[j]) * rec(j, k - 1, 0)
                    + ratio(t[j + k + 1] - xi, t[j + k + 1] - t[j + 1]) * rec(j + 1, k - 1, 0))
        return k * (ratio(rec(j, k - 1, der - 1), t[j + k] - t[j])
                    - ratio(rec(j + 1, k - 1, der - 1), t[j + k + 1] - t[j + 1]))

    return rec(i, kv.degree, deriv_order)


def basis_ders(kv, xi, nder=1, spans=None):
    """Non-zero basis functions and derivatives at many points.

    Returns ``(spans, ders)`` where ``ders`` has shape ``(N, nder + 1, p + 1)``
    and ``ders[:, k, r]`` is the k-th derivative of function ``spans - p + r``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    p = kv.degree
    t = kv.knots
    if spans is None:
        spans = kv.span(xi)
    spans = np.asarray(spans)
    N = xi.size
    ndu = np.zeros((N, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((N, p + 1))
    right = np.zeros((N, p + 1))
    for j in range(1, p + 1):
        left[:, j] = xi - t[spans + 1 - j]
        right[:, j] = t[spans + j] - xi
        saved = np.zeros(N)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved
    ders = np.zeros((N, nder + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    a = np.zeros((2, N, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[0, :, 0] = 1.0
        for k in range(1, min(nder, p) + 1):
            d = np.zeros(N)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, :, 0] = a[s1, :, 0] / ndu[:, pk + 1, rk]
                d += a[s2, :, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, :, j] = (a[s1, :, j] - a[s1, :, j - 1]) / ndu[:, pk + 1, rk + j]
                d += a[s2, :, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[s2, :, k] = -a[s1, :, k - 1] / ndu[:, pk + 1, r]
                d += a[s2, :, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    for k in range(1, min(nder, p) + 1):
        ders[:, k, :] *= factorial(p) / factorial(p - k)
    return spans, ders


def greville_abscissae(kv):
    """Knot averages ``(t_{i+1} + ... + t_{i+p}) / p``."""
    p = kv.degree
    t = kv.knots
    if p == 0:
        return 0.5 * (t[:-1] + t[1:])
    c = np.concatenate([[0.0], np.cumsum(t)])
    i = np.arange(kv.n)
    return (c[i + p + 1] - c[i + 1]) / p


def _refinement_matrix(coarse, fine):
    """Two-scale matrix by the discrete B-spline (Oslo) recursion."""
    p = coarse.degree
    t = coarse.knots
    tau = fine.knots
    nf, nc = fine.n, coarse.n
    i = np.arange(nf)
    mu = np.clip(np.searchsorted(t, tau[i], side="right") - 1, p, nc - 1)
    cols = mu[:, None] - p + np.arange(p + 1)[None, :]
    alpha = np.zeros((nf, p + 2))
    alpha[:, p] = 1.0
    tt = np.concatenate([t, np.repeat(t[-1], p + 2)])

    def div(a, b):
        out = np.zeros_like(a)
        np.divide(a, b, out=out, where=b != 0)
        return out

    for k in range(1, p + 1):
        x = tau[i + k][:, None]
        j = np.maximum(cols, 0)
        w1 = div(x - tt[j], tt[j + k] - tt[j])
        w2 = div(tt[j + k + 1] - x, tt[j + k + 1] - tt[j + 1])
        new = np.zeros_like(alpha)
        new[:, : p + 1] = w1 * alpha[:, : p + 1] + w2 * alpha[:, 1: p + 2]
        new[:, : p + 1][cols < 0] = 0.0
        alpha = new
    vals = alpha[:, : p + 1]
    keep = (cols >= 0) & (cols < nc) & (vals != 0.0)
    rows = np.broadcast_to(i[:, None], cols.shape)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nf, nc))


def dyadic_refine(kv):
    """Bisect every non-empty span; return the fine knot vector and ``R``.

    ``R`` has one row per fine function and one column per coarse function,
    so fine coefficients are ``R @ c`` for coarse coefficients ``c``.
    """
    bp = kv.breakpoints
    mids = 0.5 * (bp[:-1] + bp[1:])
    fine = KnotVector(np.sort(np.concatenate([kv.knots, mids])), kv.degree)
    return fine, _refinement_matrix(kv, fine)


def tensor_cells(per_dir, orders):
    """Tensor products of per-cell 1D tables at tensor quadrature points.

    ``per_dir[a]`` has shape ``(nb, g_a, nder + 1, p_a + 1)``; the result has
    shape ``(nb, prod g_a, prod (p_a + 1))`` for derivative ``orders``.
    """
    out = per_dir[0][:, :, orders[0], :]
    for a in range(1, len(per_dir)):
        f = per_dir[a][:, :, orders[a], :]
        nb, Q, L = out.shape
        out = (out[:, :, None, :, None] * f[:, None, :, None, :]).reshape(nb, Q * f.shape[1], L * f.shape[2])
    return out


def tensor_combine(factors):
    """Outer product of per-direction arrays ``(N, n_a)`` into ``(N, prod n_a)``."""
    out = factors[0]
    for f in factors[1:]:
        out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
    return out


class TensorBasis:
    """Tensor-product B-spline basis, rational when ``weights`` are given.

    Parameters
    ----------
    knotvectors : sequence of KnotVector
        One knot vector per parametric direction.
    weights : array_like, optional
        Positive weights with shape ``tuple(kv.n for kv in knotvectors)``.
    """

    def __init__(self, knotvectors, weights=None):
        self.knotvectors = tuple(knotvectors)
        self.shape = tuple(kv.n for kv in self.knotvectors)
        if weights is not None:
            weights = np.asarray(weights, dtype=float).reshape(self.shape)
            if np.any(weights <= 0):
                raise ValueError("NURBS weights must be positive")
            weights.setflags(write=False)
        self.weights = weights

    @property
    def dim(self):
        return len(self.knotvectors)

    @property
    def degrees(self):
        return tuple(kv.degree for kv in self.knotvectors)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def is_rational(self):
        return self.weights is not None

    def evaluate(self, points, nder=1):
        """Vectorised evaluation at ``points`` of shape ``(N, d)``.

        Returns ``(idx, derivs)`` with flat indices ``idx`` of shape
        ``(N, n_loc)`` and a list ``derivs`` holding values ``(N, n_loc)``,
        gradients ``(N, n_loc, d)`` and, for ``nder == 2``, Hessians
        ``(N, n_loc, d, d)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError("points must have %d columns" % self.dim)
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("points outside the parameter domain")
        per_dir = []
        idx_dir = []
        for a, kv in enumerate(self.knotvectors):
            spans, ders = basis_ders(kv, pts[:, a], nder)
            per_dir.append(ders)
            idx_dir.append(spans[:, None] - kv.degree + np.arange(kv.degree + 1)[None, :])
        return _assemble_tensor(self.shape, idx_dir, per_dir, nder, self.weights)


def _assemble_tensor(shape, idx_dir, per_dir, nder, weights=None):
    d = len(shape)
    idx = idx_dir[0]
    for a in range(1, d):
        idx = (idx[:, :, None] * shape[a] + idx_dir[a][:, None, :]).reshape(idx.shape[0], -1)
    val = tensor_combine([D[:, 0, :] for D in per_dir])
    out = [val]
    if nder >= 1:
        grad = np.stack([tensor_combine([D[:, 1 if b == a else 0, :] for b, D in enumerate(per_dir)])
                         for a in range(d)], axis=-1)
        out.append(grad)
    if nder >= 2:
        hess = np.empty(val.shape + (d, d))
        for a in range(d):
            for b in range(a, d):
                orders = [0] * d
                orders[a] += 1
                orders[b] += 1
                h = tensor_combine([D[:, orders[c], :] for c, D in enumerate(per_dir)])
                hess[..., a, b] = h
                hess[..., b, a] = h
        out.append(hess)
    if weights is not None:
        out = _rationalise(out, weights.ravel()[idx])
    return idx, out


def _rationalise(derivs, w):
    """Quotient rule for ``R_i = w_i N_i / sum_j w_j N_j``."""
    A = derivs[0] * w
    W = A.sum(axis=1, keepdims=True)
    R = A / W
    out = [R]
    if len(derivs) > 1:
        Ag = derivs[1] * w[:, :, None]
        Wg = Ag.sum(axis=1, keepdims=True)
        Rg = (Ag - R[:, :, None] * Wg) / W[:, :, None]
        out.append(Rg)
    if len(derivs) > 2:
        Ah = derivs[2] * w[:, :, None, None]
        Wh = Ah.sum(axis=1, keepdims=True)
        Wg0 = Wg[:, 0]
        Rh = (Ah
              - Rg[:, :, :, None] * Wg0[:, None, None, :]
              - Rg[:, :, None, :] * Wg0[:, None, :, None]
              - R[:, :, None, None] * Wh) / W[:, :, None, None]
        out.append(Rh)
    return out


def eval_tensor(basis, point):
    """Active multi-indices, values and parametric gradients at one point."""
    pt = np.asarray(point, dtype=float).reshape(1, -1)
    idx, (val, grad) = basis.evaluate(pt, nder=1)
    multi = np.stack(np.unravel_index(idx[0], basis.shape), axis=-1)
    return multi, val[0], grad[0]


def all_multi_indices(shape):
    """Multi-indices of a tensor grid in C order."""
    return np.array(list(product(*[range(n) for n in shape])), dtype=int)
