import numpy as np
import pytest
from scipy.interpolate import BSpline, insert

from igaest.splines import (
    KnotVector,
    TensorBasis,
    basis_ders,
    dyadic_refine,
    eval_tensor,
    eval_univariate,
    greville_abscissae,
)

KV2 = KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2)


def scipy_values(kv, xi):
    """Independent oracle: scipy design matrix of the same knot vector."""
    xi = np.atleast_1d(xi)
    return BSpline.design_matrix(xi, kv.knots, kv.degree, extrapolate=False).toarray()


class TestKnotVector:
    def test_counts(self):
        assert KV2.n == 4
        assert KV2.n_cells == 2
        np.testing.assert_array_equal(KV2.breakpoints, [0, 0.5, 1])

    @pytest.mark.parametrize("knots, p", [
        ([0, 0.5, 1, 1], 1),        # not open at the left
        ([0, 0, 0.7, 0.5, 1, 1], 1),  # decreasing
        ([0, 0, 2, 2], 1),          # outside [0, 1]
        ([0, 1], 1),                # too short
    ])
    def test_rejects_invalid(self, knots, p):
        with pytest.raises(ValueError):
            KnotVector(knots, p)

    def test_uniform(self):
        kv = KnotVector.uniform(3, 2)
        np.testing.assert_allclose(kv.knots, [0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1])


class TestEvalUnivariate:
    def test_hand_values(self):
        vals = [eval_univariate(KV2, i, 0.25) for i in range(4)]
        np.testing.assert_allclose(vals, [0.25, 0.625, 0.125, 0.0], atol=1e-15)

    def test_degree_zero(self):
        assert eval_univariate(KnotVector([0, 1], 0), 0, 0.3) == 1.0

    def test_right_end_closed(self):
        assert eval_univariate(KV2, 3, 1.0) == 1.0

    def test_partition_of_unity(self, rng):
        kv = KnotVector.from_breakpoints(np.r_[0, np.sort(rng.random(4)), 1], 3)
        for xi in rng.random(50):
            assert abs(sum(eval_univariate(kv, i, xi) for i in range(kv.n)) - 1) < 1e-12

    def test_matches_scipy(self, rng):
        kv = KnotVector.from_breakpoints(np.r_[0, np.sort(rng.random(5)), 1], 3)
        xi = rng.random(20)
        ref = scipy_values(kv, xi)
        ours = np.array([[eval_univariate(kv, i, x) for i in range(kv.n)] for x in xi])
        np.testing.assert_allclose(ours, ref, atol=1e-13)

    def test_derivative_finite_difference(self, rng):
        kv = KnotVector.uniform(4, 3)
        for xi in 0.05 + 0.9 * rng.random(10):
            for i in range(kv.n):
                fd = (eval_univariate(kv, i, xi + 1e-6) - eval_univariate(kv, i, xi - 1e-6)) / 2e-6
                assert abs(eval_univariate(kv, i, xi, 1) - fd) < 1e-5

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            eval_univariate(KV2, 0, 1.5)
        with pytest.raises(IndexError):
            eval_univariate(KV2, 4, 0.5)


class TestBasisDers:
    def test_agrees_with_recursion(self, rng):
        kv = KnotVector.uniform(5, 4)
        xi = rng.random(30)
        spans, ders = basis_ders(kv, xi, nder=2)
        for n, x in enumerate(xi):
            for r in range(kv.degree + 1):
                i = spans[n] - kv.degree + r
                for k in range(3):
                    assert ders[n, k, r] == pytest.approx(eval_univariate(kv, i, x, k), abs=1e-10)

    def test_c1_across_knots(self):
        kv = KnotVector.uniform(4, 2)
        for knot in kv.breakpoints[1:-1]:
            left = [eval_univariate(kv, i, knot - 1e-12, 1) for i in range(kv.n)]
            right = [eval_univariate(kv, i, knot, 1) for i in range(kv.n)]
            np.testing.assert_allclose(left, right, atol=1e-9)


class TestGreville:
    def test_hand_values(self):
        np.testing.assert_allclose(greville_abscissae(KV2), [0, 0.25, 0.75, 1])

    def test_linear(self):
        np.testing.assert_allclose(greville_abscissae(KnotVector([0, 0, 1, 1], 1)), [0, 1])

    def test_uniform_quadratic(self):
        kv = KnotVector([0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1], 2)
        np.testing.assert_allclose(greville_abscissae(kv), [0, 1 / 6, 1 / 2, 5 / 6, 1])


class TestTensor:
    def test_hand_value(self):
        basis = TensorBasis([KV2, KV2])
        multi, val, _ = eval_tensor(basis, [0.25, 0.25])
        k = np.flatnonzero((multi == [1, 1]).all(axis=1))[0]
        assert val[k] == pytest.approx(0.390625, abs=1e-15)

    def test_partition_of_unity(self, rng):
        basis = TensorBasis([KnotVector.uniform(3, 2), KnotVector.uniform(2, 3)])
        _, (val, grad) = basis.evaluate(rng.random((50, 2)))
        np.testing.assert_allclose(val.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-10)

    def test_unit_weights_equal_bspline(self, rng):
        kvs = [KnotVector.uniform(3, 2), KnotVector.uniform(2, 2)]
        pts = rng.random((50, 2))
        plain = TensorBasis(kvs).evaluate(pts, nder=2)
        rational = TensorBasis(kvs, np.ones((5, 4))).evaluate(pts, nder=2)
        np.testing.assert_array_equal(plain[0], rational[0])
        for a, b in zip(plain[1], rational[1]):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_nurbs_gradient_finite_difference(self, rng):
        kvs = [KnotVector.uniform(2, 2), KnotVector.uniform(2, 2)]
        basis = TensorBasis(kvs, 0.5 + rng.random((4, 4)))
        pt = np.array([[0.37, 0.61]])
        idx, (_, grad) = basis.evaluate(pt)
        for a in range(2):
            e = np.zeros((1, 2))
            e[0, a] = 1e-6
            _, (vp,) = basis.evaluate(pt + e, nder=0)
            _, (vm,) = basis.evaluate(pt - e, nder=0)
            np.testing.assert_allclose(grad[0, :, a], (vp - vm)[0] / 2e-6, atol=1e-6)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            TensorBasis([KV2, KV2], -np.ones((4, 4)))


class TestDyadicRefine:
    def test_linear(self):
        fine, R = dyadic_refine(KnotVector([0, 0, 1, 1], 1))
        np.testing.assert_allclose(fine.knots, [0, 0, 0.5, 1, 1])
        np.testing.assert_allclose(R.toarray() @ [2.0, 6.0], [2.0, 4.0, 6.0])

    def test_constant_preserved(self):
        _, R = dyadic_refine(KnotVector.uniform(3, 3))
        np.testing.assert_allclose(R @ np.ones(R.shape[1]), 1.0, atol=1e-14)

    def test_against_scipy_knot_insertion(self, rng):
        fine, R = dyadic_refine(KV2)
        assert fine.n == 6
        c = rng.standard_normal(KV2.n)
        # scipy/FITPACK inserts one knot at a time
        tck = (KV2.knots.copy(), np.r_[c, np.zeros(KV2.degree + 1)], KV2.degree)
        for x in (0.25, 0.75):
            tck = insert(x, tck)
        np.testing.assert_allclose(tck[0], fine.knots)
        np.testing.assert_allclose(tck[1][:fine.n], R @ c, atol=1e-13)
        xi = rng.random(100)
        np.testing.assert_allclose(scipy_values(fine, xi) @ (R @ c), scipy_values(KV2, xi) @ c, atol=1e-12)

    def test_entries_non_negative(self):
        _, R = dyadic_refine(KnotVector.uniform(4, 4))
        assert R.min() >= 0.0
