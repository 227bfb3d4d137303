"""Counterfactual inference for continuous treatments via adversarially de-confounded representations."""

__version__ = "0.1.0"
