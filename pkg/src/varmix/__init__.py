"""Variance-aware confidence sets, weighted ridge regression and optimistic
learners for linear bandits and linear mixture MDPs."""

__version__ = "0.1.0"
