"""VAR estimation, external-instrument shock identification, wild bootstrap.

The workflow mirrored here: fit a VAR(p) by least squares, identify the
impact column of one structural shock from the covariance between an
external instrument and the reduced-form residuals, read impulse responses
off the companion recursion, and band them by multiplying residuals and
instrument jointly with Rademacher draws and re-estimating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from macrocf._kernels import var_paths
from macrocf.dataset import InstrumentSeries, PanelDataset
from macrocf.errors import (
    NumericalError,
    ShapeError,
    SingularMatrixError,
    WeakInstrumentError,
)

UNIT_SHOCK = "unit_shock"


@dataclass
class VarFit:
    """Least-squares VAR(p) fit with intercept."""

    p: int
    intercept: np.ndarray
    coefs: np.ndarray           # (p, n, n); coefs[i] multiplies the (i+1)-lag
    residuals: np.ndarray       # (T - p, n), aligned with periods p..T-1
    resid_cov: np.ndarray
    presample: np.ndarray       # first p observations, oldest first
    n_effective: int

    @property
    def n_obs(self) -> int:
        return self.intercept.shape[0]


@dataclass
class IdentifiedShockColumn:
    """Impact response of all observables to the instrumented shock."""

    impact: np.ndarray
    normalization: tuple

    def __post_init__(self):
        self.impact = np.asarray(self.impact, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.impact)):
            raise ShapeError("impact vector must be finite")
        if self.normalization[0] == "unit_impact_on":
            _, idx, size = self.normalization
            if self.impact[idx] != size:
                raise ShapeError("impact entry does not match the declared normalization")


def _observation_matrix(data) -> np.ndarray:
    if isinstance(data, PanelDataset):
        return data.observations
    out = np.asarray(data, dtype=float)
    if out.ndim != 2:
        raise ShapeError("data must be a T x n matrix or PanelDataset")
    return out


def _lagged_design(w: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows [1, w_{t-1}, ..., w_{t-p}] for t = p..T-1, plus the targets w_t."""
    T, n = w.shape
    cols = [np.ones((T - p, 1))]
    for lag in range(1, p + 1):
        cols.append(w[p - lag : T - lag])
    return np.hstack(cols), w[p:]


def fit_var(data, p: int) -> VarFit:
    """Equation-by-equation least squares with intercept.

    Requires T - p > n*p + 1 so each equation has positive degrees of
    freedom; a rank-deficient design raises ``SingularMatrixError``.
    """
    w = _observation_matrix(data)
    T, n = w.shape
    if p < 1:
        raise ShapeError("lag order p must be >= 1")
    if T - p <= n * p + 1:
        raise ShapeError(f"sample too short: T - p = {T - p} <= {n * p + 1} regressors")
    X, Y = _lagged_design(w, p)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= max(X.shape) * np.finfo(float).eps * sv[0]:
        raise SingularMatrixError("collinear VAR regressors (singular design matrix)")
    coef, _, _, _ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ coef
    dof = X.shape[0] - X.shape[1]
    cov = resid.T @ resid / dof
    intercept = coef[0].copy()
    slopes = np.stack([coef[1 + i * n : 1 + (i + 1) * n].T for i in range(p)])
    return VarFit(
        p=p,
        intercept=intercept,
        coefs=slopes,
        residuals=resid,
        resid_cov=cov,
        presample=w[:p].copy(),
        n_effective=X.shape[0],
    )


def select_lag_order(data, p_max: int, criterion: str = "aic") -> int:
    """Criterion-minimizing lag order over 1..p_max on a common sample.

    All candidate fits start at observation p_max + 1 so their likelihoods
    are comparable.  Criteria: aic, hq, sc, fpe (standard definitions with
    the ML residual covariance).
    """
    w = _observation_matrix(data)
    if p_max < 1:
        raise ShapeError("p_max must be >= 1")
    criterion = criterion.lower()
    if criterion not in ("aic", "hq", "sc", "fpe"):
        raise ShapeError(f"unknown criterion {criterion!r}")
    T, n = w.shape
    t_eff = T - p_max
    if t_eff <= n * p_max + 1:
        raise ShapeError("sample too short for the requested p_max")
    scores = np.empty(p_max)
    for p in range(1, p_max + 1):
        X, Y = _lagged_design(w[p_max - p :], p)
        coef, _, _, _ = np.linalg.lstsq(X, Y, rcond=None)
        resid = Y - X @ coef
        sigma = resid.T @ resid / t_eff
        sign, logdet = np.linalg.slogdet(sigma)
        if sign <= 0:
            raise SingularMatrixError(f"degenerate residual covariance at p={p}")
        k = p * n * n
        if criterion == "aic":
            scores[p - 1] = logdet + 2.0 * k / t_eff
        elif criterion == "hq":
            scores[p - 1] = logdet + 2.0 * np.log(np.log(t_eff)) * k / t_eff
        elif criterion == "sc":
            scores[p - 1] = logdet + np.log(t_eff) * k / t_eff
        else:  # fpe
            m = n * p + 1
            scores[p - 1] = n * np.log((t_eff + m) / (t_eff - m)) + logdet
    return int(np.argmin(scores)) + 1


def _align_instrument(fit: VarFit, instrument) -> tuple[np.ndarray, np.ndarray]:
    """Instrument values and residual-row indices over the overlap."""
    if isinstance(instrument, InstrumentSeries):
        z_full = instrument.values
    else:
        z_full = np.asarray(instrument, dtype=float).reshape(-1)
    n_resid = fit.residuals.shape[0]
    if z_full.shape[0] != n_resid + fit.p:
        raise ShapeError(
            "instrument must cover the full sample (one value or NaN per period)"
        )
    z_resid = z_full[fit.p :]
    rows = np.flatnonzero(~np.isnan(z_resid))
    if rows.size < 2:
        raise ShapeError("instrument overlaps fewer than 2 residual periods")
    return z_resid[rows], rows


def identify_shock_iv(fit: VarFit, instrument, normalization=UNIT_SHOCK,
                      relevance_tstat: float = 4.0) -> IdentifiedShockColumn:
    """Impact column from the instrument/residual covariance.

    The direction is the sample covariance between the instrument and the
    reduced-form residuals over their overlap.  ``unit_shock`` rescales by
    the instrument second moment (exact when the instrument is the
    unit-variance shock itself; otherwise only the direction is identified,
    and an impact normalization is the better choice).
    ``("unit_impact_on", variable_index, size)`` rescales so the chosen
    variable responds by ``size`` on impact.

    An instrument whose largest residual correlation has |t| below
    ``relevance_tstat`` is treated as irrelevant and rejected.
    """
    z, rows = _align_instrument(fit, instrument)
    u = fit.residuals[rows]
    n_used = rows.size
    cross = z @ u / n_used
    sd_u = u.std(axis=0)
    sd_z = z.std()
    if sd_z == 0.0 or np.any(sd_u == 0.0):
        raise WeakInstrumentError("degenerate instrument or residual variance")
    corr = cross / (sd_z * sd_u)
    tstats = np.abs(corr) * np.sqrt(n_used)
    if tstats.max() < relevance_tstat:
        raise WeakInstrumentError(
            f"instrument looks irrelevant: max first-stage |t| = {tstats.max():.2f} "
            f"< {relevance_tstat}"
        )
    if normalization == UNIT_SHOCK:
        b = cross / (z @ z / n_used)
        norm_tag = (UNIT_SHOCK,)
    else:
        tag, idx, size = normalization
        if tag != "unit_impact_on":
            raise ShapeError(f"unknown normalization {normalization!r}")
        if cross[idx] == 0.0:
            raise WeakInstrumentError("normalization variable has zero impact estimate")
        b = cross * (size / cross[idx])
        b[idx] = size
        norm_tag = ("unit_impact_on", int(idx), float(size))
    return IdentifiedShockColumn(impact=b, normalization=norm_tag)


def irf_from_var(fit: VarFit, shock: IdentifiedShockColumn, horizon: int) -> np.ndarray:
    """Structural IRF from the companion recursion applied to the impact column.

    Psi_0 = I and Psi_h = sum_{i<=min(h,p)} A_i Psi_{h-i}; entry h of the
    output is Psi_h b.
    """
    if horizon < 0:
        raise ShapeError("horizon must be nonnegative")
    n = fit.n_obs
    b = shock.impact
    if b.shape[0] != n:
        raise ShapeError("impact vector dimension mismatch")
    psi = [np.eye(n)]
    for h in range(1, horizon + 1):
        acc = np.zeros((n, n))
        for i in range(1, min(h, fit.p) + 1):
            acc += fit.coefs[i - 1] @ psi[h - i]
        psi.append(acc)
    return np.stack([P @ b for P in psi])


def ma_coeffs_from_var(fit: VarFit, order: int) -> np.ndarray:
    """Wold coefficients Psi_0..Psi_order implied by the VAR slopes."""
    n = fit.n_obs
    psi = [np.eye(n)]
    for h in range(1, order + 1):
        acc = np.zeros((n, n))
        for i in range(1, min(h, fit.p) + 1):
            acc += fit.coefs[i - 1] @ psi[h - i]
        psi.append(acc)
    return np.stack(psi)


def forecast_var(fit: VarFit, history: np.ndarray, steps: int) -> np.ndarray:
    """Mean forecast (zero future innovations) continuing a history."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape[0] < fit.p:
        raise ShapeError(f"history must supply at least p = {fit.p} rows")
    return var_paths(fit.intercept, fit.coefs, history[-fit.p :],
                     np.zeros((steps, fit.n_obs)))


@dataclass
class BootstrapBands:
    """Point IRF with percentile bands and replication bookkeeping."""

    horizon: int
    point: np.ndarray             # (H+1, n)
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: np.ndarray             # (n_kept, H+1, n)
    n_requested: int
    n_dropped: int
    seed: Optional[int]
    renormalized_per_draw: bool = True


def wild_bootstrap_bands(data, p: int, instrument, horizon: int, n_boot: int,
                         level: float = 0.9, seed: Optional[int] = None,
                         normalization=UNIT_SHOCK,
                         relevance_tstat: float = 4.0) -> BootstrapBands:
    """Wild-bootstrap percentile bands for the instrumented IRF.

    Each replication multiplies residual rows and the instrument by the same
    i.i.d. Rademacher draw, rebuilds the sample recursively from the fitted
    VAR, and re-runs identification (re-normalizing per replication) and the
    IRF.  Replications where estimation fails are dropped and counted; more
    than 10% dropped is an error.  Identical seeds give identical bands.
    """
    if n_boot < 100:
        raise ShapeError("need at least 100 bootstrap replications")
    if not 0.0 < level < 1.0:
        raise ShapeError("level must lie in (0, 1)")
    w = _observation_matrix(data)
    fit = fit_var(w, p)
    shock = identify_shock_iv(fit, instrument, normalization, relevance_tstat)
    point = irf_from_var(fit, shock, horizon)

    if isinstance(instrument, InstrumentSeries):
        z_full = instrument.values
    else:
        z_full = np.asarray(instrument, dtype=float).reshape(-1)
    n_resid = fit.residuals.shape[0]

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_boot)]
    draws = []
    n_dropped = 0
    for rng in streams:
        e = rng.integers(0, 2, size=n_resid) * 2.0 - 1.0
        u_star = fit.residuals * e[:, None]
        w_star = np.vstack([fit.presample,
                            var_paths(fit.intercept, fit.coefs, fit.presample, u_star)])
        z_star = z_full.copy()
        z_star[p:] = z_full[p:] * e
        try:
            fit_star = fit_var(w_star, p)
            shock_star = identify_shock_iv(fit_star, z_star, normalization, relevance_tstat)
            draws.append(irf_from_var(fit_star, shock_star, horizon))
        except NumericalError:
            n_dropped += 1
    if n_dropped > 0.1 * n_boot:
        raise NumericalError(
            f"wild bootstrap dropped {n_dropped}/{n_boot} replications (> 10%)"
        )
    stacked = np.stack(draws)
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(stacked, alpha, axis=0)
    upper = np.quantile(stacked, 1.0 - alpha, axis=0)
    return BootstrapBands(
        horizon=horizon,
        point=point,
        lower=lower,
        upper=upper,
        level=level,
        draws=stacked,
        n_requested=n_boot,
        n_dropped=n_dropped,
        seed=seed,
    )
