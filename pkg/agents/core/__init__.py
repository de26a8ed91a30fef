"""Numerical core: simulation, curves, features, selection and regression."""
