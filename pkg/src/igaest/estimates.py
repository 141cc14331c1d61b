"""Functional error majorant and minorant, residual estimator and exact errors.

All quantities are integrated on an *integration mesh*, normally the
common refinement of the primal, flux and auxiliary cell sets, so every
integrand is a polynomial (or rational, on NURBS maps) on each cell.
Element-wise contributions are reported on the elements of the primal
mesh; integration cells are mapped to their primal element with
:func:`~igaest.geometry.locate`.
"""

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .assembly import (
    DiscreteField,
    assemble_flux_operators,
    assemble_primal,
    solve_cg,
    solve_direct,
    space_mesh,
)
from .geometry import CellSet, GeometryMap, Mesh, QuadratureRule, locate, overlay

__all__ = [
    "MajorantResult",
    "MinorantResult",
    "ErrorReport",
    "friedrichs_constant",
    "integration_mesh",
    "compute_majorant",
    "compute_minorant",
    "compute_residual_estimator",
    "compute_exact_error",
    "efficiency_and_eoc",
    "majorant_value",
    "report_csv",
    "REPORT_COLUMNS",
]


def friedrichs_constant(domain):
    """Upper bound of the Friedrichs constant ``C_F`` of a domain.

    Parameters
    ----------
    domain : GeometryMap or sequence of float
        Side lengths of a box, or a geometry whose image is bounded by its
        axis-aligned bounding box. ``C_F`` is monotone under inclusion, so
        the box value bounds the constant of any subdomain.

    Returns
    -------
    float
        ``1 / (pi * sqrt(sum_a L_a^-2))``.
    """
    if isinstance(domain, GeometryMap):
        lo, hi = domain.bounding_box()
        sides = hi - lo
    else:
        try:
            sides = np.asarray(domain, dtype=float).ravel()
        except (TypeError, ValueError):
            raise TypeError("unsupported domain descriptor %r" % (domain,)) from None
    if sides.size == 0 or not np.all(np.isfinite(sides)) or np.any(sides <= 0.0):
        raise ValueError("box sides must be positive and finite, got %s" % sides)
    return float(1.0 / (np.pi * np.sqrt(np.sum(sides ** -2.0))))


def integration_mesh(geometry, rule, *spaces):
    """Mesh on the common refinement of the leaf cells of ``spaces``."""
    cells = [CellSet.from_hierarchy(s.hierarchy) for s in spaces]
    return Mesh(overlay(*cells) if len(cells) > 1 else cells[0], geometry, rule)


def _setup(u_h, mesh, rule):
    """Integration mesh, primal element cells and the cell-to-element map."""
    elements = CellSet.from_hierarchy(u_h.space.hierarchy)
    if mesh is None:
        if rule is None:
            rule = QuadratureRule(u_h.space.degree + 2, u_h.space.dim)
        mesh = Mesh(elements, u_h.geometry, rule)
    owner = locate(mesh.cells, elements)
    return mesh, elements, owner


def _per_element(values, owner, n):
    return np.bincount(owner, weights=values, minlength=n)


def _solve(system, solver, x0=None):
    if solver == "direct":
        return system.expand(solve_direct(system)), None
    if solver == "cg":
        res = solve_cg(system, x0=None if x0 is None else system.restrict(x0))
        return system.expand(res.x), res
    raise ValueError("unknown solver %r" % solver)


def majorant_value(m_d, m_f, C_F, beta):
    """``sqrt((1+beta) m_d^2 + (1+1/beta) C_F^2 m_f^2)``; ``beta = inf`` drops the first term."""
    if beta == math.inf:
        return C_F * m_f
    if beta == 0.0:
        return m_d
    return math.sqrt((1.0 + beta) * m_d ** 2 + (1.0 + 1.0 / beta) * C_F ** 2 * m_f ** 2)


@dataclass
class MajorantResult:
    """Outcome of the majorant reconstruction.

    ``indicator`` holds ``m_{d,K}^2`` per primal element; ``trace`` the
    value of the majorant after each flux solve.
    """

    maj: float
    m_d: float
    m_f: float
    beta: float
    C_F: float
    indicator: np.ndarray
    trace: list
    flux: DiscreteField = None
    iterations: int = 0
    timings: dict = field(default_factory=dict)


@dataclass
class MinorantResult:
    """Outcome of the minorant reconstruction.

    ``J_u`` and ``J_w`` are values of ``J(v) = (f, v) - 1/2 ||grad v||^2``,
    maximised by the exact solution, so the lower bound is
    ``2 (J(w_h) - J(u_h))``. ``raw`` is that difference before clamping.
    """

    minorant: float
    J_u: float
    J_w: float
    raw: float
    clamped: bool
    aux: DiscreteField = None
    timings: dict = field(default_factory=dict)


def _flux_residuals(y, u_grads, f_vals, mesh):
    """Per-cell ``|y - grad u_h|^2`` and ``(div y + f)^2`` integrals."""
    md = np.empty(len(mesh.cells))
    mf = np.empty(len(mesh.cells))
    for b, gu, fv in zip(mesh.batches(), u_grads, f_vals):
        val, grad, _ = y.on_batch(mesh, b, 1)
        div = np.trace(grad, axis1=-2, axis2=-1)
        md[b.sel] = np.sum(b.w * np.sum((val - gu) ** 2, axis=-1), axis=1)
        mf[b.sel] = np.sum(b.w * (div + fv) ** 2, axis=1)
    return md, mf


def compute_majorant(u_h, flux_space, f, C_F, n_iter=2, mesh=None, rule=None,
                     solver="direct", early_exit=1e-4, system_mesh=None):
    """Minimise the functional majorant over a vector spline space.

    Starting from ``beta = 1`` each iteration solves
    ``(C_F^2/beta Div + M) y = -C_F^2/beta z + g``, evaluates
    ``m_d = ||y - grad u_h||`` and ``m_f = ||div y + f||`` and sets
    ``beta = C_F m_f / m_d``. The loop stops after ``n_iter`` solves or when
    ``C_F^2 m_f^2 / m_d^2 < early_exit``.

    Parameters
    ----------
    u_h : DiscreteField
        Scalar Galerkin approximation.
    flux_space : HierarchicalBasis
        Space of each flux component.
    f : callable
        Source term of physical points.
    C_F : float
        Friedrichs constant bound.
    n_iter : int
        Maximal number of flux solves.
    mesh : Mesh, optional
        Integration mesh; defaults to the overlay of the primal and flux cells.
    solver : {"direct", "cg"}
    system_mesh : Mesh, optional
        Mesh for the flux-only blocks; defaults to the flux leaf cells.

    Returns
    -------
    MajorantResult
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    if flux_space.degree < 2:
        raise ValueError("flux degree must be at least 2")
    if not C_F > 0:
        raise ValueError("C_F must be positive")
    geometry = u_h.geometry
    d = flux_space.dim
    if rule is None:
        rule = mesh.rule if mesh is not None else QuadratureRule(
            max(flux_space.degree, u_h.space.degree) + 2, d)
    if mesh is None:
        mesh = integration_mesh(geometry, rule, u_h.space, flux_space)
    mesh, elements, owner = _setup(u_h, mesh, rule)
    timings = {"assemble": 0.0, "solve": 0.0, "evaluate": 0.0}

    t0 = time.perf_counter()
    ops = assemble_flux_operators(flux_space, geometry, f, u_h, rule, mesh, own=system_mesh)
    timings["assemble"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    u_grads, f_vals = [], []
    for b in mesh.batches():
        u_grads.append(u_h.on_batch(mesh, b, 1)[1])
        f_vals.append(np.asarray(f(b.x), dtype=float))
    timings["evaluate"] += time.perf_counter() - t0

    n = flux_space.n_active
    beta = 1.0
    trace = []
    coefs = None
    y = None
    md_cells = np.zeros(len(mesh.cells))
    m_d = m_f = 0.0
    it = 0
    for it in range(1, n_iter + 1):
        system = ops.system(C_F, beta)
        t0 = time.perf_counter()
        coefs, _ = _solve(system, solver, coefs)
        timings["solve"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        y = DiscreteField(flux_space, coefs.reshape(d, n).T, geometry)
        md_cells, mf_cells = _flux_residuals(y, u_grads, f_vals, mesh)
        timings["evaluate"] += time.perf_counter() - t0
        m_d = math.sqrt(max(md_cells.sum(), 0.0))
        m_f = math.sqrt(max(mf_cells.sum(), 0.0))
        if m_d == 0.0:
            beta = math.inf
            trace.append(majorant_value(m_d, m_f, C_F, beta))
            break
        if m_f == 0.0:
            beta = 0.0
            trace.append(m_d)
            break
        beta = C_F * m_f / m_d
        trace.append(majorant_value(m_d, m_f, C_F, beta))
        if (C_F * m_f / m_d) ** 2 < early_exit:
            break
    indicator = _per_element(md_cells, owner, len(elements))
    return MajorantResult(trace[-1], m_d, m_f, beta, C_F, indicator, trace, y, it, timings)


def _energy_terms(u_h, delta_field, f, mesh):
    """``(f, delta)``, ``(grad u_h, grad delta)``, ``||grad delta||^2``, ``(f, u_h)``, ``||grad u_h||^2``."""
    acc = np.zeros(5)
    for b in mesh.batches():
        uv, ug, _ = u_h.on_batch(mesh, b, 1)
        dv, dg, _ = delta_field(mesh, b)
        fv = f(b.x)
        acc += [np.sum(b.w * fv * dv), np.sum(b.w * np.sum(ug * dg, -1)),
                np.sum(b.w * np.sum(dg * dg, -1)), np.sum(b.w * fv * uv),
                np.sum(b.w * np.sum(ug * ug, -1))]
    return acc


def compute_minorant(u_h, w_space, f, dirichlet_data=None, mesh=None, rule=None,
                     solver="direct", x0=None, system_mesh=None):
    """Lower bound of the energy error from an auxiliary Galerkin solution.

    ``w_h`` solves the Poisson problem in ``w_space`` with the same Dirichlet
    data as ``u_h``. The bound ``2 (J(w_h) - J(u_h))`` is evaluated in the
    cancellation-free form ``2 (f, w_h - u_h) - 2 (grad u_h, grad(w_h - u_h))
    - ||grad(w_h - u_h)||^2``; a negative value is clamped to zero and
    flagged. ``system_mesh`` replaces the leaf-cell mesh of ``w_space`` for
    the auxiliary system.
    """
    geometry = u_h.geometry
    d = w_space.dim
    if rule is None:
        rule = mesh.rule if mesh is not None else QuadratureRule(
            max(w_space.degree, u_h.space.degree) + 2, d)
    if mesh is None:
        mesh = integration_mesh(geometry, rule, u_h.space, w_space)
    timings = {"assemble": 0.0, "solve": 0.0, "evaluate": 0.0}
    t0 = time.perf_counter()
    if system_mesh is None:
        system_mesh = space_mesh(w_space, geometry, rule)
    system = assemble_primal(w_space, geometry, f, dirichlet_data, mesh=system_mesh)
    timings["assemble"] += time.perf_counter() - t0
    t0 = time.perf_counter()
    coefs, _ = _solve(system, solver, x0)
    timings["solve"] += time.perf_counter() - t0
    w_h = DiscreteField(w_space, coefs, geometry)

    t0 = time.perf_counter()

    def delta(m, b):
        wv, wg, _ = w_h.on_batch(m, b, 1)
        uv, ug, _ = u_h.on_batch(m, b, 1)
        return wv - uv, wg - ug, None

    f_d, cross, dd, f_u, uu = _energy_terms(u_h, delta, f, mesh)
    timings["evaluate"] += time.perf_counter() - t0
    raw = 2.0 * (f_d - cross) - dd
    J_u = f_u - 0.5 * uu
    J_w = J_u + f_d - cross - 0.5 * dd
    clamped = raw < 0.0
    value = 0.0 if clamped else math.sqrt(raw)
    return MinorantResult(value, J_u, J_w, raw, clamped, w_h, timings)


def compute_residual_estimator(u_h, f, mesh=None, rule=None):
    """Residual estimator ``eta_K^2 = h_K^2 ||f + Lap u_h||_K^2`` on primal elements.

    The jump terms vanish for ``C^1`` splines (degree at least two with
    simple knots) and are omitted.

    Returns
    -------
    eta : float
    indicator : ndarray
        ``eta_K^2`` per primal element.
    """
    mesh, elements, owner = _setup(u_h, mesh, rule)
    res = np.empty(len(mesh.cells))
    for b in mesh.batches(second=True):
        _, _, lap = u_h.on_batch(mesh, b, 2)
        res[b.sel] = np.sum(b.w * (f(b.x) + lap) ** 2, axis=1)
    if len(mesh.cells) == len(elements) and np.array_equal(owner, np.arange(len(elements))):
        h = mesh.h
    else:
        h = Mesh(elements, u_h.geometry, mesh.rule).h
    indicator = h ** 2 * _per_element(res, owner, len(elements))
    return float(math.sqrt(indicator.sum())), indicator


def compute_exact_error(u_h, grad_u, mesh=None, rule=None):
    """Energy error ``||grad(u - u_h)||`` and its squared element contributions."""
    mesh, elements, owner = _setup(u_h, mesh, rule)
    err = np.empty(len(mesh.cells))
    for b in mesh.batches():
        _, g, _ = u_h.on_batch(mesh, b, 1)
        err[b.sel] = np.sum(b.w * np.sum((np.asarray(grad_u(b.x)) - g) ** 2, axis=-1), axis=1)
    indicator = _per_element(err, owner, len(elements))
    return float(math.sqrt(indicator.sum())), indicator


REPORT_COLUMNS = [
    "ref", "err", "maj", "m_d", "m_f", "ieff_maj", "ieff_eta", "eoc",
    "min", "ieff_min", "maj_over_min", "eta", "beta",
    "dof_u", "dof_y", "dof_w", "n_elems",
    "t_as_u", "t_sol_u", "t_as_y", "t_sol_y", "t_as_w", "t_sol_w",
    "t_ew_err", "t_ew_maj", "t_ew_min", "t_ew_eta",
]
TIMING_COLUMNS = [c for c in REPORT_COLUMNS if c.startswith("t_")]


@dataclass
class ErrorReport:
    """One refinement step of a run.

    Missing quantities (no exact solution, minorant disabled) are ``nan``.
    ``flags`` collects textual notes such as a clamped minorant or an
    undefined efficiency index.
    """

    ref: int
    dof_u: int
    n_elems: int
    dof_y: int = 0
    dof_w: int = 0
    err: float = math.nan
    maj: float = math.nan
    m_d: float = math.nan
    m_f: float = math.nan
    beta: float = math.nan
    min: float = math.nan
    eta: float = math.nan
    ieff_maj: float = math.nan
    ieff_min: float = math.nan
    ieff_eta: float = math.nan
    maj_over_min: float = math.nan
    eoc: float = math.nan
    t_as_u: float = 0.0
    t_sol_u: float = 0.0
    t_as_y: float = 0.0
    t_sol_y: float = 0.0
    t_as_w: float = 0.0
    t_sol_w: float = 0.0
    t_ew_err: float = 0.0
    t_ew_maj: float = 0.0
    t_ew_min: float = 0.0
    t_ew_eta: float = 0.0
    flags: list = field(default_factory=list)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _ratio(a, b):
    if not (np.isfinite(a) and np.isfinite(b)) or b == 0.0:
        return math.nan
    return a / b


def efficiency_and_eoc(rows, dim):
    """Fill efficiency indices, ``M/M_`` ratios and e.o.c. of report rows in place.

    The e.o.c. of row ``i`` is ``d log(e_{i-1}/e_i) / log(N_i/N_{i-1})``
    with ``N`` the primal degrees of freedom, so it measures the rate in
    terms of ``h ~ N^{-1/d}`` also on adaptive meshes. A zero error leaves
    the indices undefined (``nan``) and adds a flag.
    """
    prev = None
    for row in rows:
        if row.err == 0.0:
            if "efficiency undefined" not in row.flags:
                row.flags.append("efficiency undefined")
        row.ieff_maj = _ratio(row.maj, row.err)
        row.ieff_min = _ratio(row.min, row.err)
        row.ieff_eta = _ratio(row.eta, row.err)
        row.maj_over_min = _ratio(row.maj, row.min)
        row.eoc = math.nan
        if prev is not None and prev.dof_u != row.dof_u and prev.err > 0 and row.err > 0:
            row.eoc = dim * math.log(prev.err / row.err) / math.log(row.dof_u / prev.dof_u)
        prev = row
    return rows


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return "%d" % v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.10e" % v


def report_csv(rows, columns=REPORT_COLUMNS):
    """Serialise report rows to CSV text with a fixed column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(getattr(r, c)) for c in columns])
    return buf.getvalue()
