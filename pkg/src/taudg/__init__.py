"""2D anisotropic-order nodal DG steady solver.

Nonlinear p-multigrid acceleration doubles as a truncation-error estimator;
the estimates drive per-element, per-direction polynomial order adaptation.
"""

__version__ = "0.1.0"
