"""Randomised property suites; every test draws at least 100 instances."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import uniform_hierarchy
from igaest.adaptivity import MarkingCriterion, mark
from igaest.assembly import DiscreteField, assemble_primal, solve_direct
from igaest.cases import polynomial_case
from igaest.estimates import (
    compute_exact_error,
    compute_majorant,
    compute_minorant,
    friedrichs_constant,
    majorant_value,
)
from igaest.geometry import QuadratureRule
from igaest.hierarchy import HierarchicalBasis
from igaest.splines import KnotVector, TensorBasis, dyadic_refine

N = 100
unit = st.floats(0.0, 1.0, allow_nan=False)
positive = st.floats(1e-6, 1e6, allow_nan=False)


@st.composite
def knot_vectors(draw, max_degree=5):
    p = draw(st.integers(1, max_degree))
    inner = draw(st.lists(st.floats(0.01, 0.99), max_size=6))
    # keep interior knots simple and away from each other
    inner = sorted({round(x, 3) for x in inner})
    return KnotVector.from_breakpoints([0.0] + inner + [1.0], p)


@st.composite
def hierarchies(draw, dim=2, max_base_level=2):
    """Uniform base level plus up to two random boxes on finer levels."""
    level = draw(st.integers(1, max_base_level))
    h = uniform_hierarchy(level, dim)
    for _ in range(draw(st.integers(0, 2))):
        k = h.n_levels
        n = h.level_shape(k)[0]
        lo = [draw(st.integers(0, n - 1)) for _ in range(dim)]
        hi = [min(n - 1, a + draw(st.integers(0, 2))) for a in lo]
        h = h.insert_box(k, lo, hi, extend=draw(st.booleans()))
    return h


points2 = arrays(np.float64, (20, 2), elements=unit)
coefs3 = arrays(np.float64, 3, elements=st.floats(-2.0, 2.0, allow_nan=False))


@settings(max_examples=N)
@given(kvs=st.tuples(knot_vectors(), knot_vectors()), pts=points2,
       weights_seed=st.integers(0, 2 ** 32 - 1), rational=st.booleans())
def test_partition_of_unity_tensor(kvs, pts, weights_seed, rational):
    shape = tuple(kv.n for kv in kvs)
    w = np.random.default_rng(weights_seed).uniform(0.2, 5.0, shape) if rational else None
    _, (val, grad) = TensorBasis(kvs, w).evaluate(pts)
    np.testing.assert_allclose(val.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(val >= -1e-14)


@settings(max_examples=N)
@given(h=hierarchies(), p=st.integers(1, 4), pts=points2)
def test_partition_of_unity_thb(h, p, pts):
    V = HierarchicalBasis(p, h).basis_matrices(pts, nder=0)[0]
    np.testing.assert_allclose(np.asarray(V.sum(axis=1)).ravel(), 1.0, atol=1e-12)


@settings(max_examples=N)
@given(kv=knot_vectors(), seed=st.integers(0, 2 ** 32 - 1),
       xi=arrays(np.float64, 30, elements=unit))
def test_refinement_pointwise_exact(kv, seed, xi):
    fine, R = dyadic_refine(kv)
    c = np.random.default_rng(seed).standard_normal(kv.n)
    one = TensorBasis([kv]).evaluate(xi[:, None], nder=0)
    two = TensorBasis([fine]).evaluate(xi[:, None], nder=0)
    coarse_vals = (one[1][0] * c[one[0]]).sum(axis=1)
    fine_vals = (two[1][0] * (R @ c)[two[0]]).sum(axis=1)
    np.testing.assert_allclose(fine_vals, coarse_vals, atol=1e-12 * max(1.0, np.abs(c).max()))


def _galerkin(case, h, p=2):
    space = HierarchicalBasis(p, h)
    system = assemble_primal(space, case.geometry, case.f, case.u_D)
    return DiscreteField(space, system.expand(solve_direct(system)), case.geometry), system


@settings(max_examples=N)
@given(c=coefs3, h=hierarchies(max_base_level=2), coarsen=st.integers(0, 2))
def test_two_sided_bounds(c, h, coarsen):
    case = polynomial_case(c)
    u_h, _ = _galerkin(case, h)
    err, _ = compute_exact_error(u_h, case.grad_u)
    C_F = friedrichs_constant(case.geometry)
    maj = compute_majorant(u_h, HierarchicalBasis(3, h.coarsened(coarsen)), case.f, C_F)
    mn = compute_minorant(u_h, HierarchicalBasis(3, h.coarsened(coarsen)), case.f)
    slack = 1e-8 * maj.maj
    assert mn.minorant - slack <= err <= maj.maj + slack
    # the majorant is minimal in beta for the reconstructed flux
    if np.isfinite(maj.beta) and maj.beta > 0:
        for s in (0.9, 1.1):
            assert majorant_value(maj.m_d, maj.m_f, C_F, s * maj.beta) ** 2 >= maj.maj ** 2 * (1 - 1e-14)


@settings(max_examples=N)
@given(m_d=positive, m_f=positive, C_F=st.floats(1e-3, 10.0), s=st.floats(0.9, 1.1))
def test_beta_local_optimality(m_d, m_f, C_F, s):
    beta = C_F * m_f / m_d
    best = majorant_value(m_d, m_f, C_F, beta) ** 2
    assert majorant_value(m_d, m_f, C_F, s * beta) ** 2 >= best * (1 - 1e-14)


indicators = arrays(np.float64, st.integers(1, 60), elements=st.floats(0.0, 1e3, allow_nan=False))


@settings(max_examples=N)
@given(v=indicators, theta=st.floats(0.01, 0.99), s=st.floats(1e-3, 1e3),
       strategy=st.sampled_from(["GARU", "PUCA", "BULK"]))
def test_marking_scale_invariant(v, theta, s, strategy):
    crit = MarkingCriterion(strategy, theta)
    a, ca = mark(v, crit)
    b, cb = mark(s * v, crit)
    assert ca == cb
    np.testing.assert_array_equal(a, b)


@settings(max_examples=N)
@given(v=indicators, t1=st.floats(0.01, 0.99), t2=st.floats(0.01, 0.99))
def test_bulk_theta_monotone(v, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    more, _ = mark(v, MarkingCriterion("BULK", lo))
    fewer, _ = mark(v, MarkingCriterion("BULK", hi))
    assert set(fewer.tolist()) <= set(more.tolist())


@settings(max_examples=N)
@given(c=coefs3, h=hierarchies(max_base_level=2))
def test_galerkin_orthogonality(c, h):
    """a(u - u_h, v) = (f, v) - a(u_h, v) vanishes for every interior basis function.

    Checked with an independent quadrature on the finest uniform grid, where
    every cell lies inside one element so the integrands are polynomial.
    """
    case = polynomial_case(c)
    u_h, system = _galerkin(case, h)
    top = h.n_levels - 1
    n = 2 ** top
    rule = QuadratureRule(4, 2)
    grid = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), -1).reshape(-1, 2)
    pts = ((grid[:, None, :] + rule.points[None]) / n).reshape(-1, 2)
    w = np.tile(rule.weights, len(grid)) / n ** 2
    V, G = u_h.space.basis_matrices(pts)
    gu = [Ga @ u_h.coefs for Ga in G]
    a = sum(Ga.T @ (w * g) for Ga, g in zip(G, gu))
    load = V.T @ (w * case.f(pts))
    scale = sum(abs(Ga).T @ (w * np.abs(g)) for Ga, g in zip(G, gu)) + abs(V).T @ (w * np.abs(case.f(pts)))
    free = system.free
    assert np.max(np.abs(a[free] - load[free]) / np.maximum(scale[free], 1e-300)) <= 1e-8
