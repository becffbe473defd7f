"""Local-projection IV estimation of the counterfactual parameters.

Under the period-by-period selection (one scalar policy shock per period,
one scalar instrument correlated only with it), the trajectory parameter at
horizon h is the just-identified IV coefficient of the partialled outcome
lead on the partialled policy block (current through h-step-ahead policy),
instrumented by the current-through-h-step-ahead instrument values.  The
intervention parameter adds the recovered shock of interest (the partialled
driver) as the first regressor and its own instrument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from macrocf.dataset import InstrumentSeries, PanelDataset
from macrocf.errors import ShapeError, SingularMatrixError
from macrocf.svma import SelectedShockSpec, SvmaModel, build_irf_set, pinv, selection_matrix
from macrocf.variv import select_lag_order


@dataclass
class ProjectionFit:
    """One estimated projection at horizon h.

    ``kind`` is "beta" for the trajectory parameter, "phi" for the
    intervention parameter, "phi_alt" for the double-instrument variant.
    ``coef`` is the full solved coefficient vector; for the phi kinds its
    first entry is the intervention effect and the remainder is the
    nuisance trajectory block.  Scores, instruments, regressors and
    residuals are stored row-per-usable-period for the variance estimators.
    """

    kind: str
    h: int
    horizon_cap: int
    lag_order: int
    coef: np.ndarray
    residuals: np.ndarray
    instruments: np.ndarray
    regressors: np.ndarray
    scores: np.ndarray
    sigma: np.ndarray
    z_current: np.ndarray
    base_periods: np.ndarray
    eps_x: Optional[np.ndarray] = None

    @property
    def n_used(self) -> int:
        return self.base_periods.size

    @property
    def beta(self) -> np.ndarray:
        """The (h+1)-vector trajectory block."""
        return self.coef if self.kind == "beta" else self.coef[1:]

    @property
    def phi(self) -> float:
        if self.kind == "beta":
            raise ShapeError("trajectory fits carry no intervention effect")
        return float(self.coef[0])

    def beta_full(self) -> np.ndarray:
        """beta padded with the zero tail out to the horizon cap."""
        out = np.zeros(self.horizon_cap + 1)
        out[: self.h + 1] = self.beta
        return out


def _pivoted_solve(design: np.ndarray, target: np.ndarray, names=None):
    """Least squares by QR with column pivoting; rank deficiency is an error."""
    q, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(design.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < design.shape[1]:
        bad = piv[rank:]
        labels = [names[i] if names else str(i) for i in sorted(bad)]
        raise SingularMatrixError(f"collinear control columns: {', '.join(labels)}")
    coef_piv = scipy.linalg.solve_triangular(r, q.T @ target)
    coef = np.empty_like(coef_piv)
    coef[piv] = coef_piv
    return coef


def _square_solve(m: np.ndarray, rhs: np.ndarray, context: str) -> np.ndarray:
    """Solve a square cross-moment system; near-singularity is an error."""
    q, r, piv = scipy.linalg.qr(m, pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(m.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or diag.max() == 0.0 or diag.min() <= tol:
        smin = float(np.linalg.svd(m, compute_uv=False).min()) if m.size else 0.0
        raise SingularMatrixError(
            f"{context}: singular cross-moment matrix "
            f"(smallest singular value {smin:.3e}); weak-instrument symptom"
        )
    y = scipy.linalg.solve_triangular(r, q.T @ rhs)
    out = np.empty_like(y)
    out[piv] = y
    return out


def partial_out(series, controls, include_intercept: bool = True, names=None) -> np.ndarray:
    """Least-squares residuals of each column of ``series`` on the controls.

    A rank-deficient control matrix raises ``SingularMatrixError`` naming
    the collinear columns.
    """
    y = np.asarray(series, dtype=float)
    flat = y.ndim == 1
    if flat:
        y = y[:, None]
    c = np.asarray(controls, dtype=float)
    if c.ndim != 2 or c.shape[0] != y.shape[0]:
        raise ShapeError("controls must align row-wise with the series")
    if include_intercept:
        c = np.hstack([np.ones((c.shape[0], 1)), c])
        names = ["intercept"] + list(names) if names else None
    if c.shape[0] <= c.shape[1]:
        raise ShapeError("not enough observations for the partialling regression")
    coef = _pivoted_solve(c, y, names)
    resid = y - c @ coef
    return resid[:, 0] if flat else resid


def default_lag_order(data, p_max: Optional[int] = None) -> int:
    """AIC-selected VAR lag order, capped at floor(T^(1/3))."""
    w = data.observations if isinstance(data, PanelDataset) else np.asarray(data, dtype=float)
    cap = int(math.floor(w.shape[0] ** (1.0 / 3.0)))
    if p_max is not None:
        cap = min(cap, p_max)
    return select_lag_order(w, max(cap, 1), "aic")


def _lag_block(w: np.ndarray, ts: np.ndarray, p: int) -> np.ndarray:
    """Control rows (W_{t-1}, ..., W_{t-p}) for each base period t."""
    return np.hstack([w[ts - lag] for lag in range(1, p + 1)])


@dataclass
class _AlignedSample:
    ts: np.ndarray
    y_perp: np.ndarray       # partialled outcome lead at t+h       (n,)
    r_perp: np.ndarray       # partialled policy block (R_t..R_{t+h}) (n, h+1)
    eps_x: np.ndarray        # partialled driver at t = recovered shock of interest
    z_block: np.ndarray      # instrument leads (z_t..z_{t+h})       (n, h+1)


def _aligned(data: PanelDataset, instrument: InstrumentSeries, h: int, p: int) -> _AlignedSample:
    w = data.observations
    T = w.shape[0]
    if instrument.n_periods != T:
        raise ShapeError("instrument must have one value (or NaN) per data period")
    s0, s1 = instrument.valid_span
    lo = max(p, s0)
    hi = min(T - h, s1 - h)         # exclusive upper bound on base periods
    ts = np.arange(lo, hi)
    n_reg = data.n_obs * p + 1
    if ts.size <= n_reg + h + 1:
        raise ShapeError(
            f"usable sample of {ts.size} base periods is too short for "
            f"{n_reg} controls at horizon {h}"
        )
    controls = _lag_block(w, ts, p)
    names = [f"{(data.columns[i] if data.columns else 'w' + str(i))}[-{lag}]"
             for lag in range(1, p + 1) for i in range(data.n_obs)]

    roles = data.variable_roles
    leads = np.stack([w[ts + j] for j in range(h + 1)], axis=2)   # (n, n_obs, h+1)
    stacked = leads.reshape(ts.size, -1)
    resid = partial_out(stacked, controls, names=names).reshape(leads.shape)

    y_perp = resid[:, roles.y, h]
    r_perp = resid[:, roles.r, :]
    eps_x = resid[:, roles.x, 0]
    z_block = np.stack([instrument.values[ts + j] for j in range(h + 1)], axis=1)
    return _AlignedSample(ts=ts, y_perp=y_perp, r_perp=r_perp, eps_x=eps_x, z_block=z_block)


def estimate_beta(data: PanelDataset, instrument: InstrumentSeries, h: int,
                  horizon_cap: int, p: Optional[int] = None) -> ProjectionFit:
    """Trajectory parameter at horizon h by just-identified IV.

    All series are partialled on an intercept and p lags of the panel
    (p defaults to the AIC rule); the usable base periods are the
    intersection of the lag window, the h-step lead window, and the
    instrument span shifted by h.
    """
    if not 0 <= h <= horizon_cap:
        raise ShapeError("need 0 <= h <= H")
    if p is None:
        p = default_lag_order(data)
    if p < 1:
        raise ShapeError("lag order must be >= 1")
    s = _aligned(data, instrument, h, p)
    n = s.ts.size
    sigma = s.z_block.T @ s.r_perp / n
    rhs = s.z_block.T @ s.y_perp / n
    coef = _square_solve(sigma, rhs, f"estimate_beta(h={h})")
    resid = s.y_perp - s.r_perp @ coef
    scores = s.z_block * resid[:, None]
    return ProjectionFit(
        kind="beta", h=h, horizon_cap=horizon_cap, lag_order=p, coef=coef,
        residuals=resid, instruments=s.z_block, regressors=s.r_perp,
        scores=scores, sigma=sigma, z_current=s.z_block[:, 0],
        base_periods=s.ts,
    )


def estimate_phi(data: PanelDataset, instrument: InstrumentSeries, h: int,
                 horizon_cap: int, p: Optional[int] = None) -> ProjectionFit:
    """Intervention effect at horizon h.

    The recovered shock of interest (partialled driver) enters as the first
    regressor and serves as its own instrument; the policy block and the
    instrument leads are as in :func:`estimate_beta`.  The first coefficient
    is the direct effect with the policy path held unresponsive.
    """
    if not 0 <= h <= horizon_cap:
        raise ShapeError("need 0 <= h <= H")
    if p is None:
        p = default_lag_order(data)
    if p < 1:
        raise ShapeError("lag order must be >= 1")
    s = _aligned(data, instrument, h, p)
    n = s.ts.size
    zx = np.column_stack([s.eps_x, s.z_block])
    rx = np.column_stack([s.eps_x, s.r_perp])
    sigma = zx.T @ rx / n
    rhs = zx.T @ s.y_perp / n
    coef = _square_solve(sigma, rhs, f"estimate_phi(h={h})")
    resid = s.y_perp - rx @ coef
    scores = zx * resid[:, None]
    return ProjectionFit(
        kind="phi", h=h, horizon_cap=horizon_cap, lag_order=p, coef=coef,
        residuals=resid, instruments=zx, regressors=rx,
        scores=scores, sigma=sigma, z_current=s.z_block[:, 0],
        base_periods=s.ts, eps_x=s.eps_x,
    )


def estimate_phi_alternative(data: PanelDataset, instrument: InstrumentSeries,
                             instrument_x: InstrumentSeries, h: int,
                             horizon_cap: int, p: Optional[int] = None) -> ProjectionFit:
    """Intervention effect with an external instrument for the driver shock.

    Replaces the recovered shock of interest by the partialled driver itself,
    instrumented by ``instrument_x``.  Valid only under the modeling claim
    that the policy shocks have no contemporaneous effect on the driver;
    when that fails the estimate is systematically biased.
    """
    if not 0 <= h <= horizon_cap:
        raise ShapeError("need 0 <= h <= H")
    if p is None:
        p = default_lag_order(data)
    if p < 1:
        raise ShapeError("lag order must be >= 1")
    if instrument_x.n_periods != data.n_periods:
        raise ShapeError("driver instrument must have one value (or NaN) per data period")
    s = _aligned(data, instrument, h, p)
    zx0 = instrument_x.values[s.ts]
    if np.any(np.isnan(zx0)):
        keep = ~np.isnan(zx0)
        s = _AlignedSample(ts=s.ts[keep], y_perp=s.y_perp[keep], r_perp=s.r_perp[keep],
                           eps_x=s.eps_x[keep], z_block=s.z_block[keep])
        zx0 = zx0[keep]
    n = s.ts.size
    zx = np.column_stack([zx0, s.z_block])
    rx = np.column_stack([s.eps_x, s.r_perp])
    sigma = zx.T @ rx / n
    rhs = zx.T @ s.y_perp / n
    coef = _square_solve(sigma, rhs, f"estimate_phi_alternative(h={h})")
    resid = s.y_perp - rx @ coef
    scores = zx * resid[:, None]
    return ProjectionFit(
        kind="phi_alt", h=h, horizon_cap=horizon_cap, lag_order=p, coef=coef,
        residuals=resid, instruments=zx, regressors=rx,
        scores=scores, sigma=sigma, z_current=s.z_block[:, 0],
        base_periods=s.ts, eps_x=s.eps_x,
    )


@dataclass
class MomentCheckReport:
    """Population diagnostic for the projection identification identities."""

    beta_identified: np.ndarray
    beta_analytic: np.ndarray
    beta_max_abs_err: float
    mu_theta: float
    phi_identified: float
    phi_analytic: float
    phi_abs_err: float


def population_moment_check(model: SvmaModel, h: int, horizon_cap: int,
                            selection: Optional[SelectedShockSpec] = None,
                            pi: Optional[np.ndarray] = None) -> MomentCheckReport:
    """Verify the moment identities on exact population moments.

    Builds E[z R'], E[z Y], E[z_x R_x'] and E[z_x Y] analytically from the
    model coefficients under the instrument equation z = Pi eps + noise,
    recovers the trajectory parameter through the pseudo-inverse moment
    formula, computes the scale factor mu = 1 + d' M d for non-square
    policy-response matrices (mu = 1 whenever the deviation lies in the
    column space), and checks the scaled selection identity for the
    intervention effect.
    """
    H = horizon_cap
    if selection is None:
        selection = SelectedShockSpec.period_by_period(model.shock_roles.policy[0], H)
    irf = build_irf_set(model, H, selection)
    n_e = selection.n_selected
    if pi is None:
        pi = np.eye(n_e)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n_e, n_e):
        raise ShapeError("Pi must be square with one row per selected shock")
    var_sel = np.diag([model.shock_cov[s, s] for _, s in selection.entries])
    var_x = model.shock_cov[model.shock_roles.x, model.shock_roles.x]

    e_zr = pi @ var_sel @ irf.theta_re.T            # n_e x (H+1)
    e_zy = pi @ var_sel @ irf.theta_ye_at(h)
    beta_ident = pinv(e_zr) @ e_zy
    beta_true = pinv(irf.theta_re).T @ irf.theta_ye_at(h)

    resid = irf.d_po - irf.theta_re @ (pinv(irf.theta_re) @ irf.d_po)
    mu = 1.0 + float(irf.d_po @ resid)

    theta_rx = np.block([
        [np.ones((1, 1)), np.zeros((1, n_e))],
        [irf.d_po[:, None], irf.theta_re],
    ])
    weight = np.block([
        [np.array([[var_x]]), np.zeros((1, n_e))],
        [np.zeros((n_e, 1)), pi @ var_sel],
    ])
    e_zxr = weight @ theta_rx.T                      # (n_e+1) x (H+2)
    e_zxy = weight @ np.concatenate([[irf.theta_yx[h]], irf.theta_ye_at(h)])
    v_mu = np.zeros(H + 2)
    v_mu[0] = mu
    phi_ident = float(v_mu @ pinv(e_zxr) @ e_zxy)
    phi_true = float(irf.theta_yx[h] - beta_true @ irf.d_po)

    return MomentCheckReport(
        beta_identified=beta_ident,
        beta_analytic=beta_true,
        beta_max_abs_err=float(np.max(np.abs(beta_ident - beta_true))),
        mu_theta=mu,
        phi_identified=phi_ident,
        phi_analytic=phi_true,
        phi_abs_err=abs(phi_ident - phi_true),
    )


def truncate_deviation(d: np.ndarray, h: int) -> np.ndarray:
    """First h+1 entries of a full-horizon deviation (the S_h map)."""
    d = np.asarray(d, dtype=float).reshape(-1)
    return selection_matrix(h, d.size - 1) @ d
