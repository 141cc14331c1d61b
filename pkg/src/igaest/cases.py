"""Built-in Poisson problems with manufactured or known exact solutions."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import GeometryMap, QuadratureRule, quarter_annulus, rectangle, unit_cube, unit_square
from .hierarchy import DomainHierarchy, HierarchicalBasis

__all__ = ["ProblemCase", "get_case", "list_cases", "weak_residual", "polynomial_case"]


@dataclass
class ProblemCase:
    """``-Lap u = f`` in ``Omega``, ``u = u_D`` on the boundary.

    ``u`` and ``grad_u`` are optional; without them exact errors are not
    reported. ``u_D`` of ``None`` means homogeneous data.
    """

    name: str
    description: str
    geometry: GeometryMap
    f: Callable
    u: Optional[Callable] = None
    grad_u: Optional[Callable] = None
    u_D: Optional[Callable] = None
    kink: Optional[tuple] = None

    @property
    def dim(self):
        return self.geometry.dim


def _split(x):
    return [x[..., a] for a in range(x.shape[-1])]


def _ex1():
    def u(x):
        X, Y = _split(x)
        return (1 - X) * X ** 2 * (1 - Y) * Y

    def grad_u(x):
        X, Y = _split(x)
        return np.stack([(2 * X - 3 * X ** 2) * (1 - Y) * Y, (1 - X) * X ** 2 * (1 - 2 * Y)], axis=-1)

    def f(x):
        X, Y = _split(x)
        return -(2 * (1 - 3 * X) * (1 - Y) * Y - 2 * (1 - X) * X ** 2)

    return ProblemCase("ex1", "polynomial (1-x)x^2(1-y)y on the unit square", unit_square(), f, u, grad_u)


def _ex2(k1=1.0, k2=1.0):
    a, b = k1 * np.pi, k2 * np.pi

    def u(x):
        X, Y = _split(x)
        return np.sin(a * X) * np.sin(b * Y)

    def grad_u(x):
        X, Y = _split(x)
        return np.stack([a * np.cos(a * X) * np.sin(b * Y), b * np.sin(a * X) * np.cos(b * Y)], axis=-1)

    def f(x):
        return (a ** 2 + b ** 2) * u(x)

    return ProblemCase("ex2", "sin(k1 pi x) sin(k2 pi y) on the unit square (k1=%g, k2=%g)" % (k1, k2),
                       unit_square(), f, u, grad_u)


EX3_CENTER = (1.4, 0.95)


def _ex3(alpha=100.0, center=EX3_CENTER):
    cx, cy = center

    def parts(x):
        X, Y = _split(x)
        P1, P2 = X ** 2 - 2 * X, Y ** 2 - Y
        dx, dy = X - cx, Y - cy
        r = np.sqrt(dx ** 2 + dy ** 2)
        E = np.exp(-alpha * r)
        return X, Y, P1, P2, dx, dy, r, E

    def u(x):
        _, _, P1, P2, _, _, _, E = parts(x)
        return P1 * P2 * E

    def grad_u(x):
        X, Y, P1, P2, dx, dy, r, E = parts(x)
        rs = np.where(r > 0, r, 1.0)
        Ex = np.where(r > 0, -alpha * E * dx / rs, 0.0)
        Ey = np.where(r > 0, -alpha * E * dy / rs, 0.0)
        return np.stack([(2 * X - 2) * P2 * E + P1 * P2 * Ex, P1 * (2 * Y - 1) * E + P1 * P2 * Ey], axis=-1)

    def f(x):
        # -Lap(P E) = -(Lap P) E - 2 grad P . grad E - P Lap E
        # with Lap E = E (alpha^2 - alpha / r) in two dimensions
        X, Y, P1, P2, dx, dy, r, E = parts(x)
        rs = np.where(r > 0, r, np.inf)
        P = P1 * P2
        lapP = 2 * P2 + 2 * P1
        gradP_gradE = -alpha * E * ((2 * X - 2) * P2 * dx + P1 * (2 * Y - 1) * dy) / rs
        lapE = E * (alpha ** 2 - alpha / rs)
        return -(lapP * E + 2 * gradP_gradE + P * lapE)

    return ProblemCase("ex3", "localised peak exp(-100|x-(1.4,0.95)|) on the rectangle (0,2)x(0,1)",
                       rectangle(2.0, 1.0), f, u, grad_u, kink=(cx / 2.0, cy))


def _ex5():
    def u(x):
        X, Y = _split(x)
        return np.cos(X) * np.exp(Y)

    def grad_u(x):
        X, Y = _split(x)
        return np.stack([-np.sin(X) * np.exp(Y), np.cos(X) * np.exp(Y)], axis=-1)

    def f(x):
        return np.zeros(x.shape[:-1])

    return ProblemCase("ex5", "harmonic cos(x) exp(y) on a quarter annulus, non-homogeneous data",
                       quarter_annulus(), f, u, grad_u, u_D=u)


def _ex6():
    def factors(x):
        out = []
        for t in _split(x):
            g = (1 - t) * t ** 2
            out.append((g, 2 * t - 3 * t ** 2, 2 - 6 * t))
        return out

    def u(x):
        (a, _, _), (b, _, _), (c, _, _) = factors(x)
        return a * b * c

    def grad_u(x):
        (a, da, _), (b, db, _), (c, dc, _) = factors(x)
        return np.stack([da * b * c, a * db * c, a * b * dc], axis=-1)

    def f(x):
        (a, _, aa), (b, _, bb), (c, _, cc) = factors(x)
        return -(aa * b * c + a * bb * c + a * b * cc)

    return ProblemCase("ex6", "polynomial (1-x)x^2(1-y)y^2(1-z)z^2 on the unit cube", unit_cube(), f, u, grad_u)


def polynomial_case(coefs, dim=2):
    """Manufactured case ``u = b(x) * c(x)`` with ``b`` the box bubble and ``c`` affine.

    ``coefs`` holds ``dim + 1`` numbers ``c_0 + sum_a c_a x_a``. Used for
    randomised checks of the estimator bounds.
    """
    coefs = np.asarray(coefs, dtype=float)
    if coefs.shape != (dim + 1,):
        raise ValueError("need dim + 1 coefficients")

    def pieces(x):
        xs = _split(x)
        bub = [t * (1 - t) for t in xs]
        dbub = [1 - 2 * t for t in xs]
        c = coefs[0] + sum(coefs[a + 1] * xs[a] for a in range(dim))
        return xs, bub, dbub, c

    def prod_except(bub, skip):
        out = 1.0
        for a, b in enumerate(bub):
            if a not in skip:
                out = out * b
        return out

    def u(x):
        _, bub, _, c = pieces(x)
        return prod_except(bub, ()) * c

    def grad_u(x):
        _, bub, dbub, c = pieces(x)
        B = prod_except(bub, ())
        return np.stack([dbub[a] * prod_except(bub, (a,)) * c + B * coefs[a + 1] for a in range(dim)], axis=-1)

    def f(x):
        _, bub, dbub, c = pieces(x)
        lap = 0.0
        for a in range(dim):
            rest = prod_except(bub, (a,))
            lap = lap + (-2.0) * rest * c + 2.0 * dbub[a] * rest * coefs[a + 1]
        return -lap

    geo = unit_square() if dim == 2 else unit_cube()
    return ProblemCase("poly", "bubble times affine polynomial", geo, f, u, grad_u)


_REGISTRY = {
    "ex1": _ex1,
    "ex2": _ex2,
    "ex3": _ex3,
    "ex5": _ex5,
    "ex6": _ex6,
}

_OPTIONS = {"ex2": ("k1", "k2")}


def list_cases():
    """``(name, description)`` of every registered case in a stable order."""
    return [(name, _REGISTRY[name]().description) for name in sorted(_REGISTRY)]


def case_options(name):
    """Names of the extra numeric options a case accepts."""
    return _OPTIONS.get(name, ())


def get_case(name, **options):
    """Build a registered case; ``options`` are case parameters such as ``k1``."""
    if name not in _REGISTRY:
        raise KeyError("unknown case %r; available: %s" % (name, ", ".join(sorted(_REGISTRY))))
    allowed = case_options(name)
    bad = [k for k, v in options.items() if v is not None and k not in allowed]
    if bad:
        raise ValueError("case %s does not accept options %s" % (name, bad))
    return _REGISTRY[name](**{k: float(v) for k, v in options.items() if v is not None})


def _boxes(level, d, kink, depth):
    """Uniform level-``level`` boxes graded ``depth`` times towards ``kink``.

    A box is split while its distance to the kink is below its own width,
    so the graded region shrinks geometrically around the point.
    """
    n = 2 ** level
    grid = np.stack(np.meshgrid(*[np.arange(n)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    lo, size = grid / n, np.full((len(grid), d), 1.0 / n)
    if kink is None:
        return lo, size
    kink = np.asarray(kink, dtype=float)
    offsets = np.stack(np.meshgrid(*[[0, 1]] * d, indexing="ij"), axis=-1).reshape(-1, d)
    for _ in range(depth):
        gap = np.maximum(np.maximum(lo - kink, kink - lo - size), 0.0)
        near = np.linalg.norm(gap, axis=1) < 2.0 * size.max(axis=1)
        if not near.any():
            break
        half = size[near] / 2
        kids = (lo[near][:, None, :] + offsets[None] * half[:, None, :]).reshape(-1, d)
        lo = np.concatenate([lo[~near], kids])
        size = np.concatenate([size[~near], np.repeat(half, len(offsets), axis=0)])
    return lo, size


def weak_residual(case, level=3, degree=2, order=12, depth=30):
    """Relative weak residual of the exact solution against interior test functions.

    Returns ``max_i |(grad u, grad phi_i) - (f, phi_i)|`` relative to
    ``(|grad u|, |grad phi_i|) + (|f|, |phi_i|)``
    over the interior B-splines of a uniform level-``level`` space; zero up
    to quadrature error when ``f`` and ``u`` are consistent. Cells near a
    kink of the solution are graded ``depth`` levels towards it.
    """
    if case.grad_u is None:
        raise ValueError("case %s has no exact gradient" % case.name)
    d = case.dim
    h = DomainHierarchy((1,) * d)
    for k in range(1, level + 1):
        h = h.insert_cells(k, np.ones(h.level_shape(k), dtype=bool), extend=False)
    space = HierarchicalBasis(degree, h)
    rule = QuadratureRule(order, d)
    lo, size = _boxes(level, d, case.kink, depth)
    pts = (lo[:, None, :] + size[:, None, :] * rule.points[None]).reshape(-1, d)
    x, J, _ = case.geometry.evaluate(pts)
    w = (rule.weights[None, :] * np.prod(size, axis=1)[:, None]).ravel() * np.linalg.det(J)
    V, G = space.basis_matrices(pts, nder=1)[:2]
    gu = np.asarray(case.grad_u(x))
    # parametric gradient of u: J^T grad_x u
    gp = np.einsum("nab,na->nb", J, gu)
    # grad u . grad phi = (J^{-1} J^{-T} J^T grad u) . grad_xi phi
    ginv = np.linalg.inv(np.einsum("nka,nkb->nab", J, J))
    gq = np.einsum("nab,nb->na", ginv, gp)
    a = sum(G[b].T @ (w * gq[:, b]) for b in range(d))
    fx = case.f(x)
    load = V.T @ (w * fx)
    mag = sum(abs(G[b]).T @ (w * np.abs(gq[:, b])) for b in range(d)) + abs(V).T @ (w * np.abs(fx))
    r = a - load
    shape = space.level_shape(level)
    multi = np.unravel_index(space.active_flat[level], shape)
    interior = np.ones(space.n_active, dtype=bool)
    for b in range(d):
        interior &= (multi[b] > 0) & (multi[b] < shape[b] - 1)
    return float(np.max(np.abs(r[interior]) / np.maximum(mag[interior], 1e-300)))
