"""Differential stochastic variational inequalities with parametric convex
optimisation: projected dynamics driven by expectations of second-stage
solutions, discretised by a sample-average Euler scheme."""

__version__ = "0.1.0"
