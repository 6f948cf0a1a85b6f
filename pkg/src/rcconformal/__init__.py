"""Conformal prediction intervals for counterfactual outcomes under runtime confounding."""

__version__ = "0.1.0"
