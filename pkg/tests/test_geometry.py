import numpy as np
import pytest

from conftest import uniform_hierarchy
from igaest.geometry import (
    CellSet,
    DegenerateGeometryError,
    GeometryMap,
    Mesh,
    QuadratureRule,
    graded,
    integrate,
    locate,
    map_point,
    overlay,
    physical_gradient,
    quarter_annulus,
    rectangle,
    unit_cube,
    unit_square,
)
from igaest.splines import KnotVector, TensorBasis


class TestQuadrature:
    def test_exact_for_cubic(self):
        rule = QuadratureRule(2, 1)
        assert np.sum(rule.weights * rule.points[:, 0] ** 2) == pytest.approx(1 / 3, abs=1e-15)
        assert np.sum(rule.weights * rule.points[:, 0] ** 3) == pytest.approx(1 / 4, abs=1e-15)

    def test_tensor_weights(self):
        rule = QuadratureRule(4, 3)
        assert rule.n_points == 64
        assert rule.weights.sum() == pytest.approx(1.0)


class TestMaps:
    def test_identity(self, rng):
        for xi in rng.random((20, 2)):
            x, J, det = map_point(unit_square(), xi)
            np.testing.assert_allclose(x, xi, atol=1e-13)
            np.testing.assert_allclose(J, np.eye(2), atol=1e-13)
            assert det == pytest.approx(1.0, abs=1e-13)

    def test_rectangle_determinant(self, rng):
        _, J, _ = rectangle(2.0, 1.0).evaluate(rng.random((10, 2)))
        np.testing.assert_allclose(np.linalg.det(J), 2.0)

    def test_quarter_annulus(self, rng):
        geo = quarter_annulus()
        x0, _, _ = map_point(geo, [0.0, 0.0])
        assert np.linalg.norm(x0) == pytest.approx(1.0, abs=1e-14)
        x, _, _ = geo.evaluate(rng.random((200, 2)))
        r = np.linalg.norm(x, axis=1)
        assert r.min() >= 1.0 - 1e-12 and r.max() <= 2.0 + 1e-12
        # exact circle along the angular direction
        t = np.linspace(0, 1, 50)
        xs, _, _ = geo.evaluate(np.stack([np.ones(50), t], axis=1))
        np.testing.assert_allclose(np.linalg.norm(xs, axis=1), 2.0, atol=1e-13)

    def test_hessian_finite_difference(self):
        geo = quarter_annulus()
        xi = np.array([[0.3, 0.6]])
        _, _, H = geo.evaluate(xi, hessian=True)
        for b in range(2):
            e = np.zeros((1, 2))
            e[0, b] = 1e-6
            _, Jp, _ = geo.evaluate(xi + e)
            _, Jm, _ = geo.evaluate(xi - e)
            np.testing.assert_allclose(H[0, :, :, b], (Jp - Jm)[0] / 2e-6, atol=1e-6)

    def test_degenerate_rejected(self):
        kvs = [KnotVector([0, 0, 1, 1], 1)] * 2
        ctrl = np.array([[[0, 0], [0, 1]], [[0, 0], [0, 1]]], dtype=float)
        with pytest.raises(DegenerateGeometryError):
            GeometryMap(TensorBasis(kvs), ctrl)

    def test_cube_bounding_box(self):
        lo, hi = unit_cube().bounding_box()
        np.testing.assert_allclose(lo, 0.0)
        np.testing.assert_allclose(hi, 1.0)


class TestPhysicalGradient:
    def test_identity(self):
        np.testing.assert_allclose(physical_gradient(np.eye(2), [1, 2]), [1, 2])

    def test_diagonal(self):
        np.testing.assert_allclose(physical_gradient(np.diag([2.0, 1.0]), [2, 3]), [1, 3])

    def test_inverse_transpose_identity(self, rng):
        for _ in range(20):
            J = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
            g = rng.standard_normal(2)
            np.testing.assert_allclose(J.T @ physical_gradient(J, g), g, atol=1e-12)

    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            physical_gradient(np.zeros((2, 2)), [1, 1])


class TestIntegrate:
    def test_unit_area(self):
        assert integrate(QuadratureRule(2, 2), (unit_square(), [0, 0], [1, 1]), lambda x: np.ones(len(x))) == 1.0

    def test_quadratic_1d_exact(self):
        kv = KnotVector([0, 0, 1, 1], 1)
        line = GeometryMap(TensorBasis([kv]), np.array([[0.0], [1.0]]))
        assert integrate(QuadratureRule(2, 1), (line, [0], [1]), lambda x: x[:, 0] ** 2) == pytest.approx(1 / 3, abs=1e-15)

    def test_annulus_area(self):
        val = integrate(QuadratureRule(6, 2), (quarter_annulus(), [0, 0], [1, 1]), lambda x: np.ones(len(x)))
        assert val == pytest.approx(3 * np.pi / 4, abs=1e-6)


class TestMesh:
    def test_volumes_and_h(self):
        mesh = Mesh(CellSet.from_hierarchy(uniform_hierarchy(2)), rectangle(2.0, 1.0), QuadratureRule(3, 2))
        assert len(mesh) == 16
        assert mesh.volumes.sum() == pytest.approx(2.0)
        # h_K = max ||J||_2 times the parametric diagonal, bounding the true diameter
        np.testing.assert_allclose(mesh.h, 2.0 * 0.25 * np.sqrt(2.0))
        assert np.all(mesh.h >= np.hypot(0.5, 0.25))

    def test_integrate_annulus(self):
        mesh = Mesh(CellSet.from_hierarchy(uniform_hierarchy(3)), quarter_annulus(), QuadratureRule(4, 2))
        assert mesh.integrate(lambda x: np.ones(x.shape[:-1])).sum() == pytest.approx(3 * np.pi / 4, rel=1e-10)

    def test_dump_format(self):
        mesh = Mesh(CellSet.from_hierarchy(uniform_hierarchy(1)), unit_square(), QuadratureRule(2, 2))
        lines = mesh.dump().splitlines()
        assert lines[0].startswith("#")
        assert len(lines) == 5
        level, lo, hi, h = lines[1].split(";")
        assert int(level) == 1 and float(h) == pytest.approx(np.sqrt(0.5))

    def test_overlay_and_locate(self):
        a = CellSet.from_hierarchy(uniform_hierarchy(2))
        b = CellSet.from_hierarchy(uniform_hierarchy(1).insert_box(2, (0, 0), (0, 0), extend=False)
                                   .insert_box(3, (0, 0), (0, 0), extend=False))
        both = overlay(a, b)
        assert np.sum(np.prod(both.sizes(), axis=1)) == pytest.approx(1.0)
        owner = locate(both, a)
        assert owner.min() == 0 and owner.max() == len(a) - 1

    def test_graded_refines_towards_point(self):
        cells = CellSet.from_hierarchy(uniform_hierarchy(2))
        g = graded(cells, (0.3, 0.7), 5)
        assert np.sum(np.prod(g.sizes(), axis=1)) == pytest.approx(1.0)
        inside = np.all((g.lower() <= [0.3, 0.7]) & (g.upper() >= [0.3, 0.7]), axis=1)
        assert g.level.max() == 2 + 5
        assert np.all(g.level[inside] == 2 + 5)
