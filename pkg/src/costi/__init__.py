"""Consistency-model training and few-step sampling for multivariate
time-series imputation, with a self-contained autodiff engine."""

__version__ = "0.1.0"
