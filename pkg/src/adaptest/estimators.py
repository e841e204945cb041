"""scikit-learn compatible wrappers.

``X`` is either an :class:`~adaptest.ingest.OutcomeMatrix` or an ``(N, M)``
array of 0/1 step outcomes (1 = pass).  For arrays, ``y`` optionally gives
board-level failure labels; by default a board fails iff some step failed.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from . import cover as _cover
from .exceptions import InsufficientPoints
from .ingest import CostVector, OutcomeMatrix
from .policy import PolicyConfig
from .replay import replay, subset_from_ids


def as_outcome_matrix(X, y=None, feature_names=None):
    if isinstance(X, OutcomeMatrix):
        return X
    X = check_array(X, dtype=None, ensure_all_finite=True)
    if not np.isin(X, (0, 1)).all():
        raise ValueError("outcome matrix entries must be 0 (fail) or 1 (pass)")
    X = X.astype(np.uint8)
    if y is None:
        board_fail = (X == 0).any(axis=1)
    else:
        board_fail = np.asarray(y).astype(bool).reshape(-1)
        if board_fail.shape[0] != X.shape[0]:
            raise ValueError("y must have one board label per row of X")
    if feature_names is None:
        feature_names = [f"s{i}" for i in range(X.shape[1])]
    units = [f"u{t}" for t in range(X.shape[0])]
    return OutcomeMatrix(units, list(feature_names), X, board_fail, np.zeros(X.shape[0], dtype=bool))


def check_costs(costs, n_steps):
    if costs is None:
        return CostVector(np.ones(n_steps))
    if isinstance(costs, CostVector):
        c = costs
    else:
        c = CostVector(check_array(np.asarray(costs, dtype=float).reshape(1, -1)).ravel())
    if len(c) != n_steps:
        raise ValueError(f"expected {n_steps} step costs, got {len(c)}")
    return c


def _fit_input(est, X, y):
    if isinstance(X, OutcomeMatrix):
        est.n_features_in_ = X.m
        return X
    names = getattr(X, "columns", None)
    X = validate_data(est, X, dtype=None)
    if names is not None:
        names = [str(n) for n in names]
    return as_outcome_matrix(X, y, names)


class CoverSelector(SelectorMixin, BaseEstimator):
    """Select the cheapest set of test steps that lets at most ``epsilon`` failing units escape.

    ``transform`` keeps only the selected step columns.
    """

    def __init__(self, epsilon=0, solver="greedy", mandatory_steps=(), exhaustive_limit=20):
        self.epsilon = epsilon
        self.solver = solver
        self.mandatory_steps = mandatory_steps
        self.exhaustive_limit = exhaustive_limit

    def fit(self, X, y=None, costs=None):
        m = _fit_input(self, X, y)
        c = check_costs(costs, m.m)
        cfg = _cover.CoverConfig(self.epsilon, frozenset(self.mandatory_steps), self.exhaustive_limit)
        if self.solver == "greedy":
            self.subset_ = _cover.greedy_cover(m, c, cfg)
        elif self.solver == "exhaustive":
            self.subset_ = _cover.exhaustive_cover(m, c, cfg)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        support = np.zeros(m.m, dtype=bool)
        support[list(self.subset_.members)] = True
        self.support_ = support
        self.steps_ = m.steps
        self.cost_ = self.subset_.cost
        self.saving_pct_ = self.subset_.saving_pct
        self.escape_risk_ = self.subset_.escape_risk
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def selected_steps(self):
        check_is_fitted(self, "support_")
        return [self.steps_[i] for i in self.subset_.members]


class ParetoFrontier(BaseEstimator):
    """Cost-saving vs. escape-risk frontier over every integer escape tolerance."""

    def __init__(self, solver="greedy", mandatory_steps=(), stride=1, exhaustive_limit=20):
        self.solver = solver
        self.mandatory_steps = mandatory_steps
        self.stride = stride
        self.exhaustive_limit = exhaustive_limit

    def fit(self, X, y=None, costs=None):
        m = _fit_input(self, X, y)
        c = check_costs(costs, m.m)
        self.candidates_ = _cover.frontier_candidates(
            m, c, self.solver, self.mandatory_steps, self.stride, self.exhaustive_limit
        )
        self.frontier_ = _cover.filter_dominated(self.candidates_)
        try:
            self.log_fit_ = _cover.fit_log_frontier(self.frontier_)
        except InsufficientPoints:
            self.log_fit_ = None
        return self

    def to_rows(self):
        check_is_fitted(self, "frontier_")
        return [p.to_row() for p in self.frontier_]


class AdaptivePlanSelector(BaseEstimator):
    """Stability-aware bandit choosing the full or reduced plan per unit.

    ``fit`` builds the reduced plan (unless ``reduced_steps`` is given) and
    replays the training stream; ``evaluate`` replays a new stream from the
    priors with the fitted plan.
    """

    def __init__(self, algorithm="thompson", w=100, tau=0.93, beta_sens=10.0, kappa=10.0,
                 prior_full=(5.0, 1.0), prior_red=(1.0, 1.0), epsilon_explore=0.1,
                 ucb_c=np.sqrt(2.0), delta=8.5e-5, seed=0, freeze_full_arm=False,
                 observed_only=False, epsilon=0):
        self.algorithm = algorithm
        self.w = w
        self.tau = tau
        self.beta_sens = beta_sens
        self.kappa = kappa
        self.prior_full = prior_full
        self.prior_red = prior_red
        self.epsilon_explore = epsilon_explore
        self.ucb_c = ucb_c
        self.delta = delta
        self.seed = seed
        self.freeze_full_arm = freeze_full_arm
        self.observed_only = observed_only
        self.epsilon = epsilon

    def policy_config(self):
        params = self.get_params()
        params.pop("epsilon")
        params["ucb_c"] = float(params["ucb_c"])
        return PolicyConfig(**params)

    def fit(self, X, y=None, costs=None, reduced_steps=None):
        m = _fit_input(self, X, y)
        c = check_costs(costs, m.m)
        if reduced_steps is None:
            self.reduced_plan_ = _cover.greedy_cover(m, c, _cover.CoverConfig(self.epsilon))
        else:
            self.reduced_plan_ = subset_from_ids(list(reduced_steps), m, c)
        self.costs_ = c
        self.result_ = replay(m, c, self.reduced_plan_, self.policy_config())
        self.sel_rate_ = self.result_.sel_rate
        self.saving_pct_ = self.result_.saving_pct
        self.escaped_ = self.result_.escaped
        return self

    def evaluate(self, X, y=None):
        check_is_fitted(self, "result_")
        m = as_outcome_matrix(X, y) if not isinstance(X, OutcomeMatrix) else X
        if m.m != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} steps, got {m.m}")
        return replay(m, self.costs_, self.reduced_plan_, self.policy_config())

    def predict(self, X, y=None):
        """Per-unit plan choice (0 = full, 1 = reduced) on a fresh replay of ``X``."""
        return np.array([row.arm for row in self.evaluate(X, y).trace])
