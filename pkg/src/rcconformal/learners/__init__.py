"""Supervised learners used for every nuisance fit."""

from __future__ import annotations

import numpy as np

from .base import (
    Classifier,
    ConstantModel,
    LearnerError,
    LearnerModel,
    LearnerSpec,
    Regressor,
    check_weights,
    check_xy,
    constant,
    pinball_loss,
    trim_probability,
    weighted_quantile,
)
from .linear import LinearModel, LogisticModel, check_labels, fit_linear, fit_logistic
from .quantile import LinearQuantileModel, fit_quantile_model
from .stack import StackModel, fit_stack, project_simplex, simplex_weights
from .trees import TreeEnsembleModel, fit_tree_classifier, fit_tree_regressor

__all__ = [
    "Classifier", "ConstantModel", "LearnerError", "LearnerModel", "LearnerSpec", "LinearModel",
    "LinearQuantileModel", "LogisticModel", "Regressor", "StackModel", "TreeEnsembleModel",
    "constant", "fit_classifier", "fit_regressor", "fit_stack", "fit_weighted_quantile",
    "pinball_loss", "project_simplex", "simplex_weights", "trim_probability", "weighted_quantile",
]


def fit_regressor(X, y, weights=None, spec=LearnerSpec("linear")):
    """Fit a regressor under weighted squared error."""
    spec = LearnerSpec.parse(spec)
    if spec.kind == "linear":
        return fit_linear(X, y, weights, spec)
    if spec.kind == "tree-ensemble":
        return fit_tree_regressor(X, y, weights, spec)
    if spec.kind == "stack":
        return fit_stack(X, y, spec.get("bases", ()), int(spec.get("folds", 5)), weights,
                         "regression", seed=int(spec.get("seed", 0)))
    if spec.kind == "constant":
        X, y, w = check_xy(X, y, weights)
        value = spec.get("value", w @ y / w.sum())
        return constant(value, X.shape[1])
    raise LearnerError(f"{spec.kind!r} is not a regressor kind")


def fit_classifier(X, labels, weights=None, spec=LearnerSpec("logistic")):
    """Fit a binary classifier; the model's ``predict_proba`` gives P(label = 1)."""
    spec = LearnerSpec.parse(spec)
    if spec.kind == "logistic":
        return fit_logistic(X, labels, weights, spec)
    if spec.kind == "tree-ensemble":
        return fit_tree_classifier(X, labels, weights, spec)
    if spec.kind == "stack":
        X, lab, w = check_xy(X, labels, weights)
        check_labels(lab)
        return fit_stack(X, lab, spec.get("bases", ()), int(spec.get("folds", 5)), w,
                         "classification", seed=int(spec.get("seed", 0)))
    if spec.kind == "constant":
        X, lab, w = check_xy(X, labels, weights)
        value = spec.get("value")
        if value is None:
            value = w @ check_labels(lab) / w.sum()
        return constant(value, X.shape[1], classifier=True)
    raise LearnerError(f"{spec.kind!r} is not a classifier kind")


def fit_weighted_quantile(X, y, weights, alpha: float, spec=LearnerSpec("quantile", {"base": "linear"})):
    """Minimise the weighted pinball loss at quantile level ``alpha``."""
    spec = LearnerSpec.parse(spec)
    check_weights(weights, np.asarray(y).size)
    if spec.kind == "stack":
        return fit_stack(X, y, spec.get("bases", ()), int(spec.get("folds", 5)), weights,
                         "quantile", level=alpha, seed=int(spec.get("seed", 0)))
    return fit_quantile_model(X, y, weights, alpha, spec)


def fit_any(task, X, y, weights, spec, level=None):
    if task == "regression":
        return fit_regressor(X, y, weights, spec)
    if task == "classification":
        return fit_classifier(X, y, weights, spec)
    if task == "quantile":
        return fit_weighted_quantile(X, y, weights, level, spec)
    raise LearnerError(f"unknown task {task!r}")
