"""Standard errors and confidence intervals.

Three variance routes: a Bartlett-kernel HAC estimate of the score long-run
variance, a reordered-score sample covariance that is heteroskedasticity
robust without any kernel or bandwidth choice (valid when the shocks are
recoverable and conditionally mean independent), and Delta-method variances
for the closed-form counterfactual estimates built on the Jacobian of the
pseudo-inverse map, with one formula per pseudo-inverse case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from macrocf.counterfactual import CounterfactualEstimate
from macrocf.errors import DefinitenessError, ShapeError
from macrocf.projection import ProjectionFit, _square_solve
from macrocf.svma import commutation_matrix, numerical_rank, pinv

FULL_COLUMN_RANK = "full_column_rank"
SQUARE = "square"
FULL_ROW_RANK = "full_row_rank"


@dataclass
class LrvEstimate:
    """Long-run variance of a score process."""

    matrix: np.ndarray
    method: str                      # "hac" | "hr_reordered"
    n_used: int
    kernel: Optional[str] = None
    bandwidth: Optional[int] = None
    n_dropped: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(m).max()))):
            raise ShapeError("long-run variance must be symmetric")
        self.matrix = 0.5 * (m + m.T)


def default_bandwidth(n: int) -> int:
    """Newey-West rule floor(4 (n/100)^(2/9))."""
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def hac_lrv(scores: np.ndarray, bandwidth: Optional[int] = None) -> LrvEstimate:
    """Bartlett-kernel (Newey-West) long-run variance of score rows.

    Scores are demeaned first (a no-op up to roundoff for just-identified
    fits, whose in-sample score mean is exactly zero).  PSD holds
    analytically for Bartlett weights; an eigenvalue below -1e-10 * trace
    therefore signals a bug and raises, while smaller negative fuzz is
    clipped to zero.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    n = s.shape[0]
    if n < 2:
        raise ShapeError("need at least 2 score observations")
    if bandwidth is None:
        bandwidth = default_bandwidth(n)
    if bandwidth < 0 or bandwidth >= n:
        raise ShapeError("bandwidth must lie in [0, n)")
    s = s - s.mean(axis=0)
    omega = s.T @ s / n
    for k in range(1, bandwidth + 1):
        w = 1.0 - k / (bandwidth + 1.0)
        gamma = s[k:].T @ s[:-k] / n
        omega += w * (gamma + gamma.T)
    omega = 0.5 * (omega + omega.T)
    eigs = np.linalg.eigvalsh(omega)
    floor = -1e-10 * max(np.trace(omega), np.finfo(float).tiny)
    if eigs.min() < floor:
        raise DefinitenessError(
            f"HAC estimate has eigenvalue {eigs.min():.3e} below the PSD tolerance"
        )
    if eigs.min() < 0.0:
        vals, vecs = np.linalg.eigh(omega)
        omega = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        omega = 0.5 * (omega + omega.T)
    return LrvEstimate(matrix=omega, method="hac", n_used=n,
                       kernel="bartlett", bandwidth=bandwidth)


def hr_lrv(fit: ProjectionFit, target: Optional[str] = None) -> LrvEstimate:
    """Reordered-score sample covariance.

    Rebuilds the score with the current instrument value multiplying the
    residual and its h in-sample predecessors (plus the recovered-shock
    entry for intervention fits) and returns the plain second-moment matrix,
    which is PSD by construction.  Base periods whose residual history is
    incomplete at the sample start are dropped and counted.
    """
    inferred = "r" if fit.kind == "beta" else "x"
    if target is not None and target != inferred:
        raise ShapeError(f"fit of kind {fit.kind!r} carries {inferred!r} scores, not {target!r}")
    h = fit.h
    n = fit.n_used
    if n <= h:
        raise ShapeError("not enough base periods for the reordered score")
    if np.any(np.diff(fit.base_periods) != 1):
        raise ShapeError("reordered scores require contiguous base periods")
    u = fit.residuals
    lagged = np.stack([u[h - i : n - i] for i in range(h + 1)], axis=1)  # (n-h, h+1)
    z0 = fit.z_current[h:]
    blocks = [z0[:, None] * lagged]
    if inferred == "x":
        # first instrument column: the recovered shock (or its external proxy)
        blocks.insert(0, (fit.instruments[h:, 0] * u[h:])[:, None])
    star = np.hstack(blocks)
    star = star - star.mean(axis=0)
    omega = star.T @ star / star.shape[0]
    return LrvEstimate(matrix=omega, method="hr_reordered",
                       n_used=star.shape[0], n_dropped=h)


def se_counterfactual(fit: ProjectionFit, lrv: LrvEstimate, deviation=None,
                      level: float = 0.9) -> CounterfactualEstimate:
    """Point estimate with sandwich standard error and normal CI.

    For trajectory fits the estimate is beta'd with d the first h+1 entries
    of the supplied path deviation; for intervention fits it is the first
    coefficient.  The variance is the quadratic form of the score long-run
    variance in the inverse cross-moment matrix, divided by the effective
    sample size.
    """
    if not 0.0 < level < 1.0:
        raise ShapeError("level must lie in (0, 1)")
    k = fit.sigma.shape[0]
    if lrv.matrix.shape != (k, k):
        raise ShapeError("long-run variance dimension does not match the fit")
    if fit.kind == "beta":
        if deviation is None:
            raise ShapeError("trajectory fits need a path deviation")
        values = getattr(deviation, "values", deviation)
        d = np.asarray(values, dtype=float).reshape(-1)
        if d.size == fit.horizon_cap + 1:
            d = d[: fit.h + 1]
        elif d.size != fit.h + 1:
            raise ShapeError("deviation must have H+1 or h+1 entries")
        weight = d
        value = float(fit.beta @ d)
    else:
        weight = np.zeros(k)
        weight[0] = 1.0
        value = fit.phi
    left = _square_solve(fit.sigma.T, weight, "se_counterfactual")
    avar = float(left @ lrv.matrix @ left)
    se = math.sqrt(max(avar, 0.0) / fit.n_used)
    z = norm.ppf(0.5 + level / 2.0)
    return CounterfactualEstimate(
        horizon=fit.h, value=value, beta=fit.beta_full(), se=se,
        ci=(value - z * se, value + z * se), method="lp_iv",
    )


def _detect_case(theta_re: np.ndarray) -> str:
    m, n_e = theta_re.shape
    rank = numerical_rank(theta_re)
    if m == n_e and rank == n_e:
        return SQUARE
    if rank == n_e and n_e < m:
        return FULL_COLUMN_RANK
    if rank == m and m < n_e:
        return FULL_ROW_RANK
    raise ShapeError(
        f"policy-response matrix is rank deficient (rank {rank}, shape {m}x{n_e}); "
        "no Jacobian formula applies"
    )


def jacobian_G(theta_re, theta_ye_h, pinv_case: Optional[str] = None) -> np.ndarray:
    """Jacobian of the trajectory parameter in the stacked responses.

    Returns d beta / d (vec(theta_re)', theta_ye') with vec in column-major
    order.  The vec block depends on which pseudo-inverse formula applies;
    the case is auto-detected from the numerical rank when not declared,
    and a declared case inconsistent with the rank profile is an error.
    """
    theta = np.asarray(theta_re, dtype=float)
    ty = np.asarray(theta_ye_h, dtype=float).reshape(-1)
    if theta.ndim != 2 or theta.shape[1] != ty.size:
        raise ShapeError("theta_ye length must equal the selected-shock count")
    m, n_e = theta.shape
    detected = _detect_case(theta)
    if pinv_case is None:
        pinv_case = detected
    elif pinv_case != detected:
        if not (detected == SQUARE and pinv_case in (FULL_COLUMN_RANK, FULL_ROW_RANK)):
            raise ShapeError(
                f"declared pinv case {pinv_case!r} inconsistent with rank profile {detected!r}"
            )
    theta_pinv = pinv(theta)
    if pinv_case == SQUARE:
        b = theta_pinv.T @ ty
        g1 = -np.kron(b[None, :], theta_pinv.T) @ commutation_matrix(m, m)
    elif pinv_case == FULL_COLUMN_RANK:
        gram_inv = np.linalg.inv(theta.T @ theta)
        resid_maker = np.eye(m) - theta @ theta_pinv
        b = theta_pinv.T @ ty
        g1 = (np.kron((gram_inv @ ty)[None, :], resid_maker)
              - np.kron(b[None, :], theta_pinv.T) @ commutation_matrix(m, n_e))
    else:
        gram_inv = np.linalg.inv(theta @ theta.T)
        resid_maker = np.eye(n_e) - theta_pinv @ theta
        b = theta_pinv.T @ ty
        g1 = (np.kron((resid_maker @ ty)[None, :], gram_inv)
              - np.kron(b[None, :], theta_pinv.T) @ commutation_matrix(m, n_e))
    return np.hstack([g1, theta_pinv.T])


@dataclass
class IrfJointDistribution:
    """Stacked response estimates with their joint covariance.

    The stacking order is (theta_yx_h, d_po, vec(theta_re) column-major,
    theta_ye_h); the covariance may be singular.
    """

    theta_yx_h: float
    d_po: np.ndarray
    theta_re: np.ndarray
    theta_ye_h: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.d_po = np.asarray(self.d_po, dtype=float).reshape(-1)
        self.theta_re = np.asarray(self.theta_re, dtype=float)
        self.theta_ye_h = np.asarray(self.theta_ye_h, dtype=float).reshape(-1)
        self.covariance = np.asarray(self.covariance, dtype=float)
        dim = 1 + self.d_po.size + self.theta_re.size + self.theta_ye_h.size
        if self.covariance.shape != (dim, dim):
            raise ShapeError(f"covariance must be {dim}x{dim} for this stacking")

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([[self.theta_yx_h], self.d_po,
                               self.theta_re.flatten(order="F"), self.theta_ye_h])


@dataclass
class DeltaVariances:
    avar_psi: Optional[float]
    avar_phi: float
    psi_singular: bool
    phi_singular: bool
    pinv_case: str


def delta_method_avar(dist: IrfJointDistribution, d_ht=None,
                      pinv_case: Optional[str] = None) -> DeltaVariances:
    """Delta-method variances of the closed-form estimates.

    The trajectory-gap variance is the quadratic form of the response-block
    covariance in G weighted by the chosen path deviation; the intervention
    variance uses the full stacked covariance and J = [1, -beta',
    -d_po' G].  The transformation can be singular, so zero variance is a
    legitimate output and is returned as-is with a flag rather than
    inflated.  Variances are on the scale of the supplied covariance.
    """
    g = jacobian_G(dist.theta_re, dist.theta_ye_h, pinv_case)
    case = pinv_case if pinv_case is not None else _detect_case(dist.theta_re)
    n_block = dist.theta_re.size + dist.theta_ye_h.size
    omega_e = dist.covariance[-n_block:, -n_block:]
    tol = 1e-12 * max(float(np.trace(dist.covariance)), np.finfo(float).tiny)

    avar_psi = None
    psi_singular = False
    if d_ht is not None:
        values = getattr(d_ht, "values", d_ht)
        d = np.asarray(values, dtype=float).reshape(-1)
        if d.size != dist.d_po.size:
            raise ShapeError("path deviation length must be H+1")
        gd = g.T @ d
        avar_psi = max(float(gd @ omega_e @ gd), 0.0)
        psi_singular = avar_psi <= tol

    beta = pinv(dist.theta_re).T @ dist.theta_ye_h
    j = np.concatenate([[1.0], -beta, -(dist.d_po @ g)])
    avar_phi = max(float(j @ dist.covariance @ j), 0.0)
    return DeltaVariances(
        avar_psi=avar_psi,
        avar_phi=avar_phi,
        psi_singular=psi_singular,
        phi_singular=avar_phi <= tol,
        pinv_case=case,
    )


def normal_interval(value: float, se: float, level: float) -> tuple[float, float]:
    z = norm.ppf(0.5 + level / 2.0)
    return (value - z * se, value + z * se)
