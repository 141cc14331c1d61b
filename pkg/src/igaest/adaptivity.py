"""Marking criteria, refinement of marked elements and the adaptive driver.

One step of :func:`adaptive_solve` runs the chain approximate, estimate,
mark and refine. Flux and auxiliary spaces live on the primal hierarchy
coarsened by ``log2 M`` and ``log2 L`` levels.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import DiscreteField, NotSPDError, assemble_primal, solve_cg, solve_direct
from .estimates import (
    ErrorReport,
    compute_exact_error,
    compute_majorant,
    compute_minorant,
    compute_residual_estimator,
    efficiency_and_eoc,
    friedrichs_constant,
)
from .geometry import CellSet, Mesh, QuadratureRule, graded, overlay
from .hierarchy import DomainHierarchy, HierarchicalBasis
from .validation import check_indicator, check_power_of_two

__all__ = [
    "MarkingCriterion",
    "AdaptiveRunConfig",
    "AdaptiveResult",
    "mark",
    "refine_marked",
    "refine_uniform",
    "adaptive_solve",
]

log = logging.getLogger(__name__)

STRATEGIES = ("GARU", "PUCA", "BULK", "UNIFORM")
INDICATORS = ("majorant", "residual", "exact")
SOLVERS = ("direct", "cg")


@dataclass(frozen=True)
class MarkingCriterion:
    """Marking strategy and its parameter ``theta`` in ``(0, 1)``."""

    strategy: str = "BULK"
    theta: float = 0.4

    def __post_init__(self):
        s = str(self.strategy).upper()
        if s not in STRATEGIES:
            raise ValueError("unknown marking strategy %r; choose from %s" % (self.strategy, STRATEGIES))
        object.__setattr__(self, "strategy", s)
        if s != "UNIFORM" and not 0.0 < float(self.theta) < 1.0:
            raise ValueError("theta must lie strictly inside (0, 1), got %r" % (self.theta,))


def mark(indicator, criterion, zero_tol=0.0):
    """Select elements for refinement.

    Parameters
    ----------
    indicator : array_like
        Non-negative element indicators (squared local contributions).
    criterion : MarkingCriterion
    zero_tol : float
        Indicators whose maximum does not exceed this value count as zero.

    Returns
    -------
    marked : ndarray of int
        Sorted element indices.
    converged : bool
        True when the indicator vanishes and nothing is marked.
    """
    v = check_indicator(np.ravel(indicator))
    if v.size == 0:
        raise ValueError("indicator is empty")
    if v.max() <= zero_tol:
        return np.zeros(0, dtype=np.int64), True
    s, theta = criterion.strategy, criterion.theta
    if s == "UNIFORM":
        return np.arange(v.size), False
    if s == "GARU":
        return np.flatnonzero(v >= theta * v.max()), False
    # descending by value, ascending index among ties
    order = np.lexsort((np.arange(v.size), -v))
    if s == "PUCA":
        count = int(math.ceil((1.0 - theta) * v.size - 1e-12))
        return np.sort(order[:max(count, 1)]), False
    csum = np.cumsum(v[order])
    target = (1.0 - theta) * csum[-1]
    count = int(np.searchsorted(csum, target * (1.0 - 1e-14), side="left")) + 1
    return np.sort(order[:min(count, v.size)]), False


def refine_marked(hierarchy, marked, extend=True):
    """Subdivide the marked elements of ``hierarchy``.

    Each marked element of grid level ``l`` is covered by its children on
    level ``l + 1``, dilated by one cell when ``extend`` is true, and all
    children are inserted in one batch.
    """
    marked = np.asarray(marked, dtype=np.int64).ravel()
    if marked.size == 0:
        return hierarchy
    gl, cells, _ = hierarchy.elements()
    if marked.min() < 0 or marked.max() >= len(gl):
        raise IndexError("marked element index out of range")
    d = hierarchy.dim
    offsets = np.stack(np.meshgrid(*[[0, 1]] * d, indexing="ij"), axis=-1).reshape(-1, d)
    h = hierarchy
    for level in np.unique(gl[marked]):
        sel = marked[gl[marked] == level]
        child = (2 * cells[sel])[:, None, :] + offsets[None, :, :]
        mask = np.zeros(h.level_shape(level + 1), dtype=bool)
        mask[tuple(child.reshape(-1, d).T)] = True
        h = h.insert_cells(level + 1, mask, extend=extend)
    return h


def refine_uniform(hierarchy):
    """One global dyadic refinement of every element."""
    return refine_marked(hierarchy, np.arange(hierarchy.n_elements), extend=False)


def _log2(n, name):
    return check_power_of_two(n, name)


@dataclass
class AdaptiveRunConfig:
    """Parameters of an adaptive (or uniform) refinement run.

    ``p``, ``q`` and ``r`` are the degrees of the primal, flux and
    auxiliary spaces; ``M`` and ``L`` the coarsening ratios of the flux and
    auxiliary meshes. ``steps`` refinement steps follow ``warmup`` uniform
    refinements of the base element, giving ``steps + 1`` report rows.
    ``quad_order`` overrides the default ``max(p, q, r) + 2`` Gauss points
    per direction. For cases with a known point singularity every
    integration mesh is graded ``kink_depth`` levels towards it.
    """

    p: int = 2
    q: int = 3
    r: int = 3
    M: int = 8
    L: int = 8
    steps: int = 7
    warmup: int = 1
    marking: str = "uniform"
    theta: float = 0.4
    maj_iters: int = 2
    solver: str = "direct"
    indicator: str = "majorant"
    minorant: bool = True
    residual: bool = True
    extend: bool = True
    max_depth: int = 12
    zero_rtol: float = 1e-12
    quad_order: int = None
    kink_depth: int = 16

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("p", "q", "r"):
            if int(getattr(self, name)) < 1:
                raise ValueError("%s must be a positive degree" % name)
        if self.q < self.p or self.r < self.p:
            raise ValueError("flux and auxiliary degrees must satisfy q >= p and r >= p")
        if self.q < 2:
            raise ValueError("flux degree q must be at least 2")
        _log2(self.M, "M")
        _log2(self.L, "L")
        if int(self.steps) < 0 or int(self.warmup) < 0:
            raise ValueError("steps and warmup must be non-negative")
        if self.quad_order is not None and int(self.quad_order) < 1:
            raise ValueError("quad_order must be positive")
        if int(self.kink_depth) < 0:
            raise ValueError("kink_depth must be non-negative")
        if int(self.maj_iters) < 1:
            raise ValueError("maj_iters must be at least 1")
        if self.solver not in SOLVERS:
            raise ValueError("solver must be one of %s" % (SOLVERS,))
        if self.indicator not in INDICATORS:
            raise ValueError("indicator must be one of %s" % (INDICATORS,))
        self.criterion()
        return self

    def criterion(self):
        return MarkingCriterion(self.marking, self.theta)

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class AdaptiveResult:
    """Report rows and per-step artefacts of a run."""

    rows: list
    hierarchies: list
    marked: list = field(default_factory=list)
    marked_centers: list = field(default_factory=list)
    converged: bool = False
    failed: bool = False
    message: str = ""
    solution: DiscreteField = None


def _solve_primal(system, solver, x0):
    if solver == "direct":
        return system.expand(solve_direct(system))
    res = solve_cg(system, x0=None if x0 is None else system.restrict(x0))
    return system.expand(res.x)


def _initial_guess(prev, space):
    """Previous solution sampled at the Greville points of the new space."""
    if prev is None:
        return None
    return prev(space.greville_points())


def adaptive_solve(case, config, on_step=None):
    """Run warm-up refinements and ``config.steps`` estimate-mark-refine steps.

    Parameters
    ----------
    case : ProblemCase
    config : AdaptiveRunConfig
    on_step : callable, optional
        Called as ``on_step(step, row, hierarchy, u_h)`` after each step.

    Returns
    -------
    AdaptiveResult
        A solver failure stops the run and returns the rows computed so far
        with ``failed`` set.
    """
    config.validate()
    geometry = case.geometry
    d = geometry.dim
    mM, mL = _log2(config.M, "M"), _log2(config.L, "L")
    rule = QuadratureRule(config.quad_order or max(config.p, config.q, config.r) + 2, d)
    C_F = friedrichs_constant(geometry)
    criterion = config.criterion()

    h = DomainHierarchy((1,) * d, max_depth=config.max_depth)
    for _ in range(config.warmup):
        h = refine_uniform(h)

    def make_mesh(cells):
        if case.kink is not None and config.kink_depth > 0:
            cells = graded(cells, case.kink, config.kink_depth)
        return Mesh(cells, geometry, rule)

    def leaf_mesh(space):
        return make_mesh(CellSet.from_hierarchy(space.hierarchy))

    result = AdaptiveResult([], [])
    prev = None
    for step in range(config.steps + 1):
        row = ErrorReport(ref=1 + config.warmup + step, dof_u=0, n_elems=h.n_elements)
        try:
            u_space = HierarchicalBasis(config.p, h)
            row.dof_u = u_space.n_active
            t0 = time.perf_counter()
            system = assemble_primal(u_space, geometry, case.f, case.u_D,
                                     mesh=leaf_mesh(u_space))
            row.t_as_u = time.perf_counter() - t0
            t0 = time.perf_counter()
            coefs = _solve_primal(system, config.solver, _initial_guess(prev, u_space))
            row.t_sol_u = time.perf_counter() - t0
            u_h = DiscreteField(u_space, coefs, geometry)

            y_space = HierarchicalBasis(config.q, h.coarsened(mM))
            spaces = [u_space, y_space]
            w_space = None
            if config.minorant:
                w_space = HierarchicalBasis(config.r, h.coarsened(mL))
                spaces.append(w_space)
            row.dof_y = y_space.n_active
            mesh = make_mesh(overlay(*[CellSet.from_hierarchy(s.hierarchy) for s in spaces]))

            # second-order geometry is cached first and reused by later passes
            eta_ind = None
            if config.residual:
                t0 = time.perf_counter()
                row.eta, eta_ind = compute_residual_estimator(u_h, case.f, mesh=mesh)
                row.t_ew_eta = time.perf_counter() - t0

            maj = compute_majorant(u_h, y_space, case.f, C_F, config.maj_iters, mesh=mesh,
                                   solver=config.solver, system_mesh=leaf_mesh(y_space))
            row.maj, row.m_d, row.m_f, row.beta = maj.maj, maj.m_d, maj.m_f, maj.beta
            row.t_as_y = maj.timings["assemble"]
            row.t_sol_y = maj.timings["solve"]
            row.t_ew_maj = maj.timings["evaluate"]

            if w_space is not None:
                mn = compute_minorant(u_h, w_space, case.f, case.u_D, mesh=mesh,
                                      solver=config.solver, system_mesh=leaf_mesh(w_space))
                row.dof_w = w_space.n_active
                row.min = mn.minorant
                row.t_as_w = mn.timings["assemble"]
                row.t_sol_w = mn.timings["solve"]
                row.t_ew_min = mn.timings["evaluate"]
                if mn.clamped:
                    row.flags.append("minorant clamped")

            err_ind = None
            if case.grad_u is not None:
                t0 = time.perf_counter()
                row.err, err_ind = compute_exact_error(u_h, case.grad_u, mesh=mesh)
                row.t_ew_err = time.perf_counter() - t0
        except (NotSPDError, np.linalg.LinAlgError) as exc:
            result.failed = True
            result.message = "solver failure at step %d: %s" % (step, exc)
            log.error(result.message)
            break

        result.rows.append(row)
        result.hierarchies.append(h)
        result.solution = u_h
        efficiency_and_eoc(result.rows, d)
        log.info("ref %d: dofs %d, err %.4e, maj %.4e", row.ref, row.dof_u, row.err, row.maj)
        if on_step is not None:
            on_step(step, row, h, u_h)
        if step == config.steps:
            break

        if config.indicator == "majorant":
            ind = maj.indicator
        elif config.indicator == "residual":
            if eta_ind is None:
                raise ValueError("residual indicator requested with residual=False")
            ind = eta_ind
        else:
            if err_ind is None:
                raise ValueError("exact-error marking needs an analytic gradient")
            ind = err_ind
        zero_tol = (config.zero_rtol * system.energy(coefs)) ** 2
        marked, converged = mark(ind, criterion, zero_tol=zero_tol)
        result.marked.append(marked)
        gl, cells, _ = h.elements()
        centers = CellSet(h.base_shape, gl[marked], cells[marked]).centers()
        result.marked_centers.append(geometry.evaluate(centers)[0] if len(marked) else np.zeros((0, d)))
        if converged:
            result.converged = True
            row.flags.append("converged")
            break
        h = refine_marked(h, marked, extend=config.extend)
        prev = u_h
    return result

