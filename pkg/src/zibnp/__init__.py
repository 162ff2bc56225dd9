"""Bayesian nonparametric differential-abundance analysis for zero-inflated
microbiome count tables."""

__version__ = "0.1.0"
