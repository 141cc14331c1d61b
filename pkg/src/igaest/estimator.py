"""Estimator-style wrapper around the adaptive solve-estimate-refine loop."""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .adaptivity import AdaptiveRunConfig, adaptive_solve
from .cases import ProblemCase, get_case
from .validation import check_parametric_points

__all__ = ["IgaPoissonEstimator"]


class IgaPoissonEstimator(BaseEstimator):
    """Solve a Poisson case with guaranteed error bounds.

    The constructor parameters are those of
    :class:`~igaest.adaptivity.AdaptiveRunConfig`. ``fit`` takes a problem
    case (or registered case name) in place of training data; ``predict``
    evaluates the final discrete solution at parametric points.

    Attributes
    ----------
    report_ : list of dict
        One entry per refinement step, keyed like ``report.csv``.
    hierarchy_ : DomainHierarchy
        Mesh of the last step.
    solution_ : DiscreteField
    majorant_, error_ : float
        Final majorant and exact energy error (``nan`` when unknown).
    converged_, failed_ : bool

    Examples
    --------
    >>> est = IgaPoissonEstimator(steps=2, minorant=False).fit("ex1")
    >>> est.majorant_ >= est.error_
    True
    """

    def __init__(self, p=2, q=3, r=3, M=8, L=8, steps=7, warmup=1, marking="uniform",
                 theta=0.4, maj_iters=2, solver="direct", indicator="majorant",
                 minorant=True, residual=True, extend=True, max_depth=12,
                 zero_rtol=1e-12, quad_order=None, kink_depth=16):
        self.p = p
        self.q = q
        self.r = r
        self.M = M
        self.L = L
        self.steps = steps
        self.warmup = warmup
        self.marking = marking
        self.theta = theta
        self.maj_iters = maj_iters
        self.solver = solver
        self.indicator = indicator
        self.minorant = minorant
        self.residual = residual
        self.extend = extend
        self.max_depth = max_depth
        self.zero_rtol = zero_rtol
        self.quad_order = quad_order
        self.kink_depth = kink_depth

    def _config(self):
        names = [f.name for f in dataclasses.fields(AdaptiveRunConfig)]
        return AdaptiveRunConfig(**{k: getattr(self, k) for k in names})

    def fit(self, case, y=None, **case_options):
        """Run the refinement loop on ``case``; ``y`` is ignored."""
        if not isinstance(case, ProblemCase):
            case = get_case(str(case), **case_options)
        result = adaptive_solve(case, self._config())
        if not result.rows:
            raise RuntimeError(result.message or "run produced no rows")
        self.case_ = case
        self.result_ = result
        self.report_ = [row.as_dict() for row in result.rows]
        self.hierarchy_ = result.hierarchies[-1]
        self.solution_ = result.solution
        self.majorant_ = float(result.rows[-1].maj)
        self.error_ = float(result.rows[-1].err)
        self.converged_ = result.converged
        self.failed_ = result.failed
        self.n_features_in_ = case.dim
        return self

    def predict(self, X):
        """Discrete solution at parametric points ``X`` of shape ``(n, dim)``."""
        check_is_fitted(self, "solution_")
        X = check_parametric_points(X, self.n_features_in_)
        return np.asarray(self.solution_(X))

    def score(self, X=None, y=None):
        """Negative final majorant, so larger is better."""
        check_is_fitted(self, "majorant_")
        return -self.majorant_
