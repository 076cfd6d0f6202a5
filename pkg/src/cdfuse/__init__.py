"""Fusing expert opinion with two-arm binary trial data.

Two routes are provided: full Bayesian analysis under four beta-family
priors, and combination of confidence distributions.
"""
__version__ = "0.1.0"
