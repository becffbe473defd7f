"""Closed-form counterfactuals.

Given the impulse responses to the selected policy shocks, a policy-path
deviation pins down a unique minimal-norm shock deviation, and the output
gap of the hypothetical economy and the direct effect of a zeroing-out
intervention follow in closed form.  Desired-path solvers invert the same
mapping: from a target output path, or from a quadratic payoff, back to the
policy path that delivers it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from macrocf.errors import DefinitenessError, ShapeError
from macrocf.svma import ImpulseResponseSet, pinv

HYPOTHETICAL = "hypothetical_trajectory"
INTERVENTION = "policy_intervention"


@dataclass
class PolicyPathDeviation:
    """Baseline-minus-counterfactual policy values over H+1 periods."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in (HYPOTHETICAL, INTERVENTION):
            raise ShapeError(f"unknown deviation kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size < 1 or not np.all(np.isfinite(self.values)):
            raise ShapeError("deviation values must be a finite nonempty vector")

    @property
    def horizon(self) -> int:
        return self.values.size - 1


@dataclass
class ShockDeviation:
    """Minimal-norm policy-shock manipulation reproducing a path deviation."""

    values: np.ndarray
    fit_residual_norm: float


@dataclass
class EffectDecomposition:
    total: float
    direct: float
    indirect: float


@dataclass
class CounterfactualEstimate:
    """A per-horizon counterfactual quantity with optional inference."""

    horizon: Optional[int]
    value: float
    beta: Optional[np.ndarray] = None
    decomposition: Optional[EffectDecomposition] = None
    se: Optional[float] = None
    ci: Optional[tuple[float, float]] = None
    method: str = "analytic"

    def __post_init__(self):
        if self.decomposition is not None:
            d = self.decomposition
            if abs(d.total - d.direct - d.indirect) > 1e-10 * max(1.0, abs(d.total)):
                raise ShapeError("decomposition must satisfy total = direct + indirect")
        if self.se is not None and self.se < 0:
            raise ShapeError("standard error must be nonnegative")
        if self.ci is not None:
            lo, hi = self.ci
            if not (lo <= self.value <= hi):
                raise ShapeError("confidence interval must contain the point estimate")


@dataclass
class UtilitySpec:
    """Quadratic payoff weights over the H+1 counterfactual output values."""

    weight_matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.weight_matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError("weight matrix must be square")
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(a).max()))):
            raise ShapeError("weight matrix must be symmetric")
        self.weight_matrix = 0.5 * (a + a.T)

    @classmethod
    def discounted(cls, alpha: float, horizon: int) -> "UtilitySpec":
        """diag[1, alpha, ..., alpha^H] with alpha in (0, 1].

        Note this default weighting is positive, so the payoff has no strict
        maximum; callers of the utility solver must supply a weight matrix
        passing the negative-definiteness check (e.g. the negated diagonal).
        """
        if not 0 < alpha <= 1:
            raise ShapeError("discount factor must lie in (0, 1]")
        return cls(np.diag(alpha ** np.arange(horizon + 1)))


def solve_shock_deviation(theta_re, deviation) -> ShockDeviation:
    """Minimal-norm shock deviation replicating a policy path deviation.

    Solves ``min ||delta||`` among minimizers of ``||d - theta_re delta||``
    via the pseudo-inverse.  The reported residual norm is zero whenever
    theta_re has full row rank (enough policy shocks to fit the path
    exactly).
    """
    theta_re = np.asarray(theta_re, dtype=float)
    d = deviation.values if isinstance(deviation, PolicyPathDeviation) else np.asarray(deviation, dtype=float)
    if theta_re.ndim != 2 or theta_re.shape[0] != d.size:
        raise ShapeError("theta_re must have one row per deviation entry")
    if not (np.all(np.isfinite(theta_re)) and np.all(np.isfinite(d))):
        raise ShapeError("inputs must be finite")
    delta = pinv(theta_re) @ d
    resid = float(np.linalg.norm(d - theta_re @ delta))
    return ShockDeviation(values=delta, fit_residual_norm=resid)


def hypothetical_trajectory_param(irf: ImpulseResponseSet, h: int) -> np.ndarray:
    """Map from policy path deviation to the horizon-h output gap.

    Returns the (H+1)-vector ``pinv(theta_re)' theta_ye[h]``.  Under the
    period-by-period selection the entries past index h vanish: policy
    deviations after the response date cannot move it.  The zeros emerge
    from the arithmetic and are not imposed.
    """
    theta_ye_h = irf.theta_ye_at(h)
    return pinv(irf.theta_re).T @ theta_ye_h


def hypothetical_output_gap(beta, deviation: PolicyPathDeviation, h: int | None = None) -> CounterfactualEstimate:
    """Output gap of the hypothetical economy: the inner product beta'd."""
    if deviation.kind != HYPOTHETICAL:
        raise ShapeError("output gap requires a hypothetical-trajectory deviation")
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != deviation.values.size:
        raise ShapeError("beta and deviation lengths must match")
    value = float(beta @ deviation.values)
    return CounterfactualEstimate(horizon=h, value=value, beta=beta, method="analytic")


def policy_intervention_effect(irf: ImpulseResponseSet, h: int) -> CounterfactualEstimate:
    """Direct effect of the shock of interest with the policy response muted.

    Subtracts the indirect channel (the endogenous policy response mapped
    through the trajectory parameter) from the total impulse response, and
    reports the total = direct + indirect decomposition.
    """
    beta = hypothetical_trajectory_param(irf, h)
    total = float(irf.theta_yx[h])
    indirect = float(beta @ irf.d_po)
    direct = total - indirect
    return CounterfactualEstimate(
        horizon=h,
        value=direct,
        beta=beta,
        decomposition=EffectDecomposition(total=total, direct=direct, indirect=indirect),
        method="analytic",
    )


def desired_path_for_target(theta_ye, theta_re, baseline_y, target_y, baseline_r):
    """Policy path delivering a target output trajectory.

    The shock deviation is the minimal-norm solution mapping the output gap
    ``baseline_y - target_y`` back through the outcome responses; the
    desired policy path subtracts its policy-response image from the
    baseline path.

    Returns
    -------
    (delta, r_desired) : pair of ndarray
    """
    theta_ye = np.asarray(theta_ye, dtype=float)
    theta_re = np.asarray(theta_re, dtype=float)
    y = np.asarray(baseline_y, dtype=float).reshape(-1)
    y_star = np.asarray(target_y, dtype=float).reshape(-1)
    r = np.asarray(baseline_r, dtype=float).reshape(-1)
    n = theta_ye.shape[0]
    if not (y.size == y_star.size == r.size == n == theta_re.shape[0]):
        raise ShapeError("path vectors and response matrices must share H+1 rows")
    delta = pinv(theta_ye) @ (y - y_star)
    r_desired = r - theta_re @ delta
    return delta, r_desired


def desired_path_for_utility(theta_ye, theta_re, baseline_y, baseline_r, spec: UtilitySpec):
    """Policy path maximizing a quadratic payoff of the counterfactual output.

    The payoff is ``(y - theta_ye delta)' A (y - theta_ye delta)``.  Its
    hessian is proportional to ``theta_ye' A theta_ye``, which must be
    negative definite for a strict maximum; the solver then returns the
    stationary point ``(theta_ye' A theta_ye)^{-1} theta_ye' A y``.  The
    stationarity condition, not any printed sign convention, defines the
    answer (a numerical-optimizer cross-check lives in the test suite).
    """
    theta_ye = np.asarray(theta_ye, dtype=float)
    theta_re = np.asarray(theta_re, dtype=float)
    y = np.asarray(baseline_y, dtype=float).reshape(-1)
    r = np.asarray(baseline_r, dtype=float).reshape(-1)
    a = spec.weight_matrix
    if theta_ye.shape[0] != y.size or a.shape[0] != y.size or theta_re.shape[0] != r.size:
        raise ShapeError("weight matrix and paths must share H+1 rows")
    hess = theta_ye.T @ a @ theta_ye
    scale = float(np.linalg.norm(hess))
    eigs = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    if scale == 0.0 or eigs.max() >= -1e-10 * scale:
        raise DefinitenessError(
            "payoff hessian theta_ye' A theta_ye is not negative definite "
            f"(largest eigenvalue {eigs.max():.3e}); no strict maximum exists"
        )
    delta = np.linalg.solve(hess, theta_ye.T @ (a @ y))
    r_desired = r - theta_re @ delta
    return delta, r_desired
