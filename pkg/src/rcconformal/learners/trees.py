"""Gradient-boosted regression trees backed by scikit-learn's histogram GBM."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier, HistGradientBoostingRegressor

from .base import Classifier, LearnerModel, LearnerSpec, Regressor, check_xy
from .linear import check_labels


def _params(spec: LearnerSpec) -> dict:
    return dict(
        max_depth=int(spec.get("max_depth", 3)),
        max_iter=int(spec.get("n_trees", 200)),
        learning_rate=float(spec.get("learning_rate", 0.1)),
        max_bins=int(spec.get("max_bins", 255)),
        min_samples_leaf=int(spec.get("min_samples_leaf", 20)),
        max_leaf_nodes=None,
        early_stopping=False,
        random_state=int(spec.get("seed", 0)),
    )


@dataclass(frozen=True, eq=False)
class TreeEnsembleModel(LearnerModel, Regressor, Classifier):
    estimator: object = None
    task: str = "regression"

    def predict(self, X) -> np.ndarray:
        if self.task == "classification":
            return self.predict_proba(X)
        return self.estimator.predict(self._features(X))

    def predict_proba(self, X) -> np.ndarray:
        if self.task != "classification":
            raise TypeError("predict_proba on a regression ensemble")
        return self.estimator.predict_proba(self._features(X))[:, 1]


def fit_tree_regressor(X, y, weights=None, spec=LearnerSpec("tree-ensemble"), quantile=None):
    X, y, w = check_xy(X, y, weights, min_rows=2)
    params = _params(spec)
    if quantile is not None:
        params.update(loss="quantile", quantile=float(quantile))
    est = HistGradientBoostingRegressor(**params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est.fit(X, y, sample_weight=w)
    return TreeEnsembleModel(kind="tree-ensemble", n_features=X.shape[1], estimator=est, task="regression")


def fit_tree_classifier(X, labels, weights=None, spec=LearnerSpec("tree-ensemble")):
    X, y, w = check_xy(X, labels, weights, min_rows=2)
    y = check_labels(y).astype(int)
    est = HistGradientBoostingClassifier(**_params(spec))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est.fit(X, y, sample_weight=w)
    return TreeEnsembleModel(kind="tree-ensemble", n_features=X.shape[1], estimator=est, task="classification")
