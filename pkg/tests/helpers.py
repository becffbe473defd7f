"""Shared test DGPs and small oracles."""

import numpy as np

from macrocf.dataset import InstrumentSeries, PanelDataset
from macrocf.svma import (
    SelectedShockSpec,
    ShockRoles,
    SvmaModel,
    VariableRoles,
    draw_shocks,
    simulate_svma,
)

ROLES = VariableRoles(x=0, y=1, r=2)
SHOCKS = ShockRoles(x=0, policy=(2,))


class Var1Design:
    """VAR(1)-generated economy: W_t = A W_{t-1} + Theta_0 eps_t.

    The driver row of Theta_0 is the first unit vector, so the shock of
    interest is exactly the driver partialled on one lag of the panel, and
    the implied moving-average coefficients A^h Theta_0 are available in
    closed form.  This is the workhorse DGP for estimator consistency and
    coverage experiments (a finite-q moving average is not invertible from
    finitely many lags, so it cannot play this part).
    """

    def __init__(self, rng, spectral_cap=0.6, policy_impact=0.8, impact_scale=0.5):
        a = rng.standard_normal((3, 3)) * 0.25
        ev = float(np.abs(np.linalg.eigvals(a)).max())
        if ev > spectral_cap:
            a *= spectral_cap / ev
        theta0 = np.eye(3)
        theta0[1:, :] = rng.standard_normal((2, 3)) * impact_scale
        theta0[0, :] = [1.0, 0.0, 0.0]
        theta0[2, 2] = policy_impact if theta0[2, 2] >= 0 else -policy_impact
        self.a = a
        self.theta0 = theta0

    def ma_coeffs(self, order):
        return np.stack([np.linalg.matrix_power(self.a, h) @ self.theta0
                         for h in range(order + 1)])

    def analytic_model(self, horizon):
        """Exact SVMA coefficients out to the needed horizon."""
        return SvmaModel(self.ma_coeffs(horizon), np.eye(3), np.zeros(3), ROLES, SHOCKS)

    def irf_set(self, horizon):
        m = self.analytic_model(horizon)
        return build_irf_set_cached(m, horizon)

    def simulate(self, n_periods, rng, pi=1.0, noise_std=0.3, span=None,
                 columns=("x", "y", "r")):
        from macrocf._kernels import var_paths

        eps = rng.standard_normal((n_periods, 3))
        w = var_paths(np.zeros(3), self.a[None], np.zeros((1, 3)), eps @ self.theta0.T)
        z = pi * eps[:, 2]
        if noise_std > 0:
            z = z + noise_std * rng.standard_normal(n_periods)
        if span is not None:
            z = z.copy()
            z[: span[0]] = np.nan
            z[span[1] :] = np.nan
        data = PanelDataset(w, ROLES, columns=columns)
        return data, InstrumentSeries(z), eps


def build_irf_set_cached(model, horizon):
    from macrocf.svma import build_irf_set

    return build_irf_set(model, horizon, SelectedShockSpec.period_by_period(
        model.shock_roles.policy[0], horizon))


def inverse_companion_radius(theta):
    """Spectral radius of the shock-recovery recursion for a square SVMA."""
    q = theta.shape[0] - 1
    n = theta.shape[1]
    if q == 0:
        return 0.0
    inv0 = np.linalg.inv(theta[0])
    comp = np.zeros((n * q, n * q))
    for h in range(1, q + 1):
        comp[:n, (h - 1) * n : h * n] = -inv0 @ theta[h]
    if q > 1:
        comp[n:, :-n] = np.eye(n * (q - 1))
    return float(np.abs(np.linalg.eigvals(comp)).max())


def random_svma(rng, q=4, n_obs=3, n_shock=3, policy_impact_min=0.4, decay=0.55,
                invertible=False):
    """Random stable SVMA with x ordered first and a scalar policy shock.

    The driver row of the impact matrix is the first unit vector (so the
    shock of interest is recoverable by partialling the driver), and the
    policy shock's impact on the policy variable is bounded away from zero
    (so the period-by-period response matrix is nonsingular).  With
    ``invertible`` the lag coefficients are shrunk until the recovery
    recursion is stable (needed by anything that inverts observables back
    to shocks).
    """
    theta = rng.standard_normal((q + 1, n_obs, n_shock)) * decay ** np.arange(q + 1)[:, None, None]
    theta[0] = np.eye(n_obs, n_shock)
    theta[0, 1:, :] = rng.standard_normal((n_obs - 1, n_shock)) * 0.6
    theta[0, 0, :] = 0.0
    theta[0, 0, 0] = 1.0
    impact = theta[0, 2, 2]
    if abs(impact) < policy_impact_min:
        theta[0, 2, 2] = policy_impact_min if impact >= 0 else -policy_impact_min
    if invertible and n_obs == n_shock:
        while inverse_companion_radius(theta) > 0.75:
            theta[1:] *= 0.85
    return SvmaModel(theta, np.eye(n_shock), np.zeros(n_obs), ROLES, SHOCKS)


def pbp_selection(model, horizon):
    return SelectedShockSpec.period_by_period(model.shock_roles.policy[0], horizon)


def simulate_panel(model, n_periods, rng, pi=1.0, noise_std=0.0,
                   span=None, columns=("x", "y", "r")):
    """Simulated dataset plus an instrument for the policy shock."""
    eps = draw_shocks(model, n_periods, rng)
    w = simulate_svma(model, eps)
    z = pi * eps.values[:, model.shock_roles.policy[0]]
    if noise_std > 0:
        z = z + noise_std * rng.standard_normal(n_periods)
    if span is not None:
        z = z.copy()
        z[: span[0]] = np.nan
        z[span[1] :] = np.nan
    data = PanelDataset(w, model.variable_roles, columns=columns)
    return data, InstrumentSeries(z), eps.values


def two_economy_psi(model, selection, horizon, d, rng, anchor=None):
    """Brute-force output gap: simulate baseline and deviated economies.

    The deviation applied to the selected policy shocks is the minimal-norm
    solution mapping the path deviation d; the gap is the difference of the
    outcome paths.  Valid oracle for any linear model.
    """
    from macrocf.counterfactual import solve_shock_deviation

    q = model.order
    anchor = q + 2 if anchor is None else anchor
    T = anchor + horizon + 1
    eps = draw_shocks(model, T, rng).values
    from macrocf.svma import build_irf_set

    irf = build_irf_set(model, horizon, selection)
    delta = solve_shock_deviation(irf.theta_re, d).values
    eps_cf = eps.copy()
    for k, (offset, s) in enumerate(selection.entries):
        eps_cf[anchor + offset, s] -= delta[k]
    y = model.variable_roles.y
    base = simulate_svma(model, eps)[anchor : anchor + horizon + 1, y]
    cf = simulate_svma(model, eps_cf)[anchor : anchor + horizon + 1, y]
    return base - cf


def two_economy_phi(model, selection, horizon, rng, anchor=None):
    """Brute-force direct effect: unit driver shock with the policy path muted.

    Economy 0: driver shock zeroed at the anchor.  Economy 1: unit driver
    shock, policy shocks deviated so the policy path matches economy 0.
    Returns the outcome-path difference.
    """
    from macrocf.counterfactual import solve_shock_deviation
    from macrocf.svma import build_irf_set

    q = model.order
    anchor = q + 2 if anchor is None else anchor
    T = anchor + horizon + 1
    eps = draw_shocks(model, T, rng).values
    x = model.shock_roles.x
    eps0 = eps.copy()
    eps0[anchor, x] = 0.0
    eps1 = eps.copy()
    eps1[anchor, x] = 1.0

    irf = build_irf_set(model, horizon, selection)
    delta = solve_shock_deviation(irf.theta_re, irf.d_po).values
    eps1_muted = eps1.copy()
    for k, (offset, s) in enumerate(selection.entries):
        eps1_muted[anchor + offset, s] -= delta[k]
    y = model.variable_roles.y
    y0 = simulate_svma(model, eps0)[anchor : anchor + horizon + 1, y]
    y1 = simulate_svma(model, eps1_muted)[anchor : anchor + horizon + 1, y]
    return y1 - y0
