import math

import numpy as np
import pytest

from conftest import uniform_hierarchy
from igaest.assembly import DiscreteField, assemble_primal, solve_direct
from igaest.cases import get_case
from igaest.estimates import (
    REPORT_COLUMNS,
    ErrorReport,
    compute_exact_error,
    compute_majorant,
    compute_minorant,
    compute_residual_estimator,
    efficiency_and_eoc,
    friedrichs_constant,
    majorant_value,
    report_csv,
)
from igaest.geometry import quarter_annulus, rectangle, unit_cube, unit_square
from igaest.hierarchy import HierarchicalBasis


def galerkin(case, degree, h):
    space = HierarchicalBasis(degree, h)
    system = assemble_primal(space, case.geometry, case.f, case.u_D)
    return DiscreteField(space, system.expand(solve_direct(system)), case.geometry)


@pytest.fixture(scope="module")
def ex1_ref3():
    """Ex. 1 at refinement 3: 4x4 elements, 36 d.o.f."""
    case = get_case("ex1")
    h = uniform_hierarchy(2)
    u_h = galerkin(case, 2, h)
    err, _ = compute_exact_error(u_h, case.grad_u)
    return case, h, u_h, err


class TestFriedrichs:
    def test_unit_square(self):
        assert friedrichs_constant(unit_square()) == pytest.approx(1 / (np.pi * np.sqrt(2)), rel=1e-12)
        assert friedrichs_constant(unit_square()) == pytest.approx(0.225079, abs=1e-6)

    def test_unit_cube(self):
        assert friedrichs_constant(unit_cube()) == pytest.approx(1 / (np.pi * np.sqrt(3)), rel=1e-12)

    def test_rectangle(self):
        assert friedrichs_constant(rectangle(2.0, 1.0)) == pytest.approx(2 / (np.pi * np.sqrt(5)), rel=1e-12)
        assert friedrichs_constant([2.0, 1.0]) == friedrichs_constant(rectangle(2.0, 1.0))

    def test_annulus_uses_bounding_box(self):
        assert friedrichs_constant(quarter_annulus()) == pytest.approx(friedrichs_constant([2.0, 2.0]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            friedrichs_constant([1.0, -1.0])


class TestMajorantValue:
    def test_limits(self):
        assert majorant_value(0.3, 0.5, 0.2, math.inf) == pytest.approx(0.1)
        assert majorant_value(0.3, 0.0, 0.2, 0.0) == 0.3

    def test_optimal_beta(self):
        m_d, m_f, C_F = 0.4, 1.3, 0.22
        beta = C_F * m_f / m_d
        assert majorant_value(m_d, m_f, C_F, beta) == pytest.approx(m_d + C_F * m_f)


class TestMajorant:
    def test_vanishes_for_exact_solution(self):
        case = get_case("ex1")
        h = uniform_hierarchy(2)
        u_h = galerkin(case, 3, h)
        res = compute_majorant(u_h, HierarchicalBasis(3, h), case.f, friedrichs_constant(case.geometry))
        assert res.maj <= 1e-10

    def test_ex1_refinement_3(self, ex1_ref3):
        case, h, u_h, err = ex1_ref3
        flux = HierarchicalBasis(3, h.coarsened(2))
        res = compute_majorant(u_h, flux, case.f, friedrichs_constant(case.geometry), n_iter=2)
        assert flux.n_active == 16
        assert res.maj >= err
        assert res.maj / err <= 1.35
        # reference bound 3.0154e-03 for the same flux space
        assert res.maj <= 3.0154e-03
        assert res.indicator.shape == (h.n_elements,)
        assert res.indicator.sum() == pytest.approx(res.m_d ** 2, rel=1e-10)

    def test_beta_is_optimal_for_final_flux(self, ex1_ref3):
        case, h, u_h, _ = ex1_ref3
        C_F = friedrichs_constant(case.geometry)
        res = compute_majorant(u_h, HierarchicalBasis(3, h.coarsened(1)), case.f, C_F, n_iter=3)
        assert res.beta == pytest.approx(C_F * res.m_f / res.m_d)
        for s in (0.9, 1.1):
            assert majorant_value(res.m_d, res.m_f, C_F, s * res.beta) >= res.maj

    def test_argument_checks(self, ex1_ref3):
        case, h, u_h, _ = ex1_ref3
        with pytest.raises(ValueError):
            compute_majorant(u_h, HierarchicalBasis(3, h), case.f, 0.2, n_iter=0)
        with pytest.raises(ValueError):
            compute_majorant(u_h, HierarchicalBasis(1, h), case.f, 0.2)


class TestMinorant:
    def test_same_space_gives_zero(self, ex1_ref3):
        case, h, u_h, _ = ex1_ref3
        res = compute_minorant(u_h, HierarchicalBasis(2, h), case.f)
        assert res.minorant <= 1e-9

    def test_ex1_refinement_3(self, ex1_ref3):
        case, h, u_h, err = ex1_ref3
        res = compute_minorant(u_h, HierarchicalBasis(3, h.coarsened(2)), case.f)
        # reference value 2.5648e-03 with I_eff(M_) = 1.0000
        assert res.minorant == pytest.approx(2.5648e-03, rel=1e-2)
        assert res.minorant <= err * (1 + 1e-8)
        assert res.minorant / err >= 0.999
        assert not res.clamped

    def test_richer_space_non_negative(self, ex1_ref3):
        case, h, u_h, err = ex1_ref3
        richer = h.insert_box(3, (0, 0), (7, 7))
        res = compute_minorant(u_h, HierarchicalBasis(2, richer), case.f)
        assert res.raw >= -1e-12 * err ** 2
        assert 0 < res.minorant <= err

    def test_j_values_consistent(self, ex1_ref3):
        case, h, u_h, _ = ex1_ref3
        res = compute_minorant(u_h, HierarchicalBasis(3, h.coarsened(1)), case.f)
        assert res.raw == pytest.approx(2 * (res.J_w - res.J_u), rel=1e-6)


class TestResidualEstimator:
    def test_vanishes_for_exact_solution(self):
        case = get_case("ex1")
        u_h = galerkin(case, 3, uniform_hierarchy(2))
        eta, _ = compute_residual_estimator(u_h, case.f)
        assert eta <= 1e-10

    def test_single_element_constant_residual(self):
        space = HierarchicalBasis(2, uniform_hierarchy(0))
        zero = DiscreteField(space, np.zeros(space.n_active), unit_square())
        r0 = 3.0
        eta, ind = compute_residual_estimator(zero, lambda x: np.full(x.shape[:-1], r0))
        # h_K = sqrt(2), |K| = 1
        assert eta == pytest.approx(np.sqrt(2) * r0 * 1.0, rel=1e-13)
        assert ind.shape == (1,)

    def test_ex1_efficiency(self, ex1_ref3):
        case, h, u_h, err = ex1_ref3
        eta, _ = compute_residual_estimator(u_h, case.f)
        assert 8 <= eta / err <= 13


class TestExactError:
    def test_linear_function(self):
        space = HierarchicalBasis(2, uniform_hierarchy(1))
        zero = DiscreteField(space, np.zeros(space.n_active), unit_square())
        err, _ = compute_exact_error(zero, lambda x: np.stack([np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], -1))
        assert err == pytest.approx(1.0, abs=1e-14)

    def test_additivity(self, ex1_ref3):
        case, _, u_h, err = ex1_ref3
        _, ind = compute_exact_error(u_h, case.grad_u)
        assert ind.sum() == pytest.approx(err ** 2, rel=1e-12)


class TestReport:
    def test_eoc_order_two(self):
        rows = [ErrorReport(ref=1, err=1e-2, dof_u=100, n_elems=1), ErrorReport(ref=2, err=2.5e-3, dof_u=400, n_elems=4)]
        efficiency_and_eoc(rows, 2)
        assert math.isnan(rows[0].eoc)
        assert rows[1].eoc == pytest.approx(2.0)

    def test_unit_efficiency(self):
        rows = efficiency_and_eoc([ErrorReport(ref=1, err=0.3, maj=0.3, dof_u=10, n_elems=1)], 2)
        assert rows[0].ieff_maj == 1.0

    def test_zero_error_flagged(self):
        rows = efficiency_and_eoc([ErrorReport(ref=1, err=0.0, maj=1e-17, dof_u=10, n_elems=1)], 2)
        assert math.isnan(rows[0].ieff_maj)
        assert "efficiency undefined" in rows[0].flags

    def test_eoc_uses_dofs(self):
        # one uniform step of p = 2 splines in 2D: 36 -> 100 d.o.f.
        rows = [ErrorReport(ref=3, err=2.5705e-3, dof_u=36, n_elems=16),
                ErrorReport(ref=4, err=6.3907e-4, dof_u=100, n_elems=64)]
        efficiency_and_eoc(rows, 2)
        assert rows[1].eoc == pytest.approx(2 * math.log(2.5705e-3 / 6.3907e-4) / math.log(100 / 36))

    def test_csv_header_and_nan(self):
        text = report_csv([ErrorReport(ref=2, err=0.5, dof_u=9, n_elems=1)])
        header, row = text.splitlines()
        assert header.split(",") == REPORT_COLUMNS
        values = dict(zip(REPORT_COLUMNS, row.split(",")))
        assert values["ref"] == "2" and values["maj"] == "nan"
        assert values["err"] == "5.0000000000e-01"
