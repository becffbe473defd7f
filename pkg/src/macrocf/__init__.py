"""Counterfactual policy-path analysis for multivariate time series.

Closed-form hypothetical-trajectory and policy-intervention counterfactuals
on moving-average economies, local-projection IV estimation with HAC and
heteroskedasticity-robust inference, Delta-method variances for the
closed-form estimates, SVAR-IV impulse-response estimation with wild
bootstrap bands, and simulation-based scenario algorithms for nonlinear
structural models.
"""

__version__ = "0.1.0"
