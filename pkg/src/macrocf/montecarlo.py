"""Simulation-based counterfactuals for fully specified structural models.

Where the closed-form machinery assumes linearity, the procedures here only
need a model that can simulate observables from shock paths and (for the
scenario analyses) recover the realized shocks from observed data.  Shock
deviations are found by least squares on the policy-path distance: exactly,
through response probing, for models declaring linearity in shocks, and by
Nelder-Mead with random restarts otherwise.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from macrocf.errors import ConvergenceError, NumericalError, RecoveryError, ShapeError
from macrocf.svma import (
    SelectedShockSpec,
    SvmaModel,
    VariableRoles,
    pinv,
    simulate_svma,
)


class StructuralModel(abc.ABC):
    """Behavioral contract for counterfactual simulation.

    Implementations expose dimension metadata, the role bookkeeping, and a
    deterministic ``simulate``.  ``recover_shocks`` is part of the model
    contract (inversion is model-specific); models that cannot recover
    shocks may raise, which disables the scenario analyses but not the
    zeroing-out intervention.  ``linear_in_shocks`` enables the closed-form
    deviation solver.
    """

    n_obs: int
    n_shock: int
    variable_roles: VariableRoles
    shock_x: int
    policy_shocks: tuple[int, ...]
    linear_in_shocks: bool = False

    @abc.abstractmethod
    def simulate(self, shocks: np.ndarray, w0: np.ndarray) -> np.ndarray:
        """Observable paths, one row per period, from a T x n_shock matrix."""

    def recover_shocks(self, observed: np.ndarray, w0: np.ndarray) -> np.ndarray:
        raise RecoveryError(f"{type(self).__name__} does not support shock recovery")


class LinearStructuralModel(StructuralModel):
    """SVMA economy behind the structural-model interface.

    Recovery inverts the impact matrix recursively and therefore requires a
    square, nonsingular impact matrix (the recoverable case).
    """

    def __init__(self, model: SvmaModel):
        self.model = model
        self.n_obs = model.n_obs
        self.n_shock = model.n_shock
        self.variable_roles = model.variable_roles
        self.shock_x = model.shock_roles.x
        self.policy_shocks = model.shock_roles.policy
        self.linear_in_shocks = True

    def simulate(self, shocks, w0=None):
        base = self.model
        if w0 is not None and not np.array_equal(np.asarray(w0, dtype=float), base.initial_condition):
            base = SvmaModel(base.ma_coeffs, base.shock_cov, w0,
                             base.variable_roles, base.shock_roles)
        return simulate_svma(base, shocks)

    def recover_shocks(self, observed, w0=None):
        m = self.model
        if m.n_shock != m.n_obs:
            raise RecoveryError("recovery needs as many observables as shocks")
        theta0 = m.ma_coeffs[0]
        if np.linalg.matrix_rank(theta0) < m.n_obs:
            raise RecoveryError("impact matrix is singular; shocks not recoverable")
        w = np.asarray(observed, dtype=float)
        base = m.initial_condition if w0 is None else np.asarray(w0, dtype=float)
        T = w.shape[0]
        eps = np.zeros((T, m.n_shock))
        lu = np.linalg.inv(theta0)
        for t in range(T):
            acc = w[t] - base
            for h in range(1, min(t, m.order) + 1):
                acc = acc - m.ma_coeffs[h] @ eps[t - h]
            eps[t] = lu @ acc
        return eps


class ThresholdStructuralModel(StructuralModel):
    """Regime-switching MA(1): the lag-one propagation changes with the
    sign of the previous outcome relative to a threshold.

    A minimal nonlinear test economy: shocks are still recoverable exactly
    because the regime at each date is observable.
    """

    def __init__(self, theta0, theta1_low, theta1_high, threshold: float,
                 variable_roles: VariableRoles, shock_x: int,
                 policy_shocks: Sequence[int], w0=None):
        self.theta0 = np.asarray(theta0, dtype=float)
        self.theta1_low = np.asarray(theta1_low, dtype=float)
        self.theta1_high = np.asarray(theta1_high, dtype=float)
        self.threshold = float(threshold)
        self.n_obs, self.n_shock = self.theta0.shape
        if self.n_obs != self.n_shock:
            raise ShapeError("threshold test model must be square")
        self.variable_roles = variable_roles
        self.shock_x = shock_x
        self.policy_shocks = tuple(policy_shocks)
        self.linear_in_shocks = False
        self.w0 = np.zeros(self.n_obs) if w0 is None else np.asarray(w0, dtype=float)
        self._impact_inv = np.linalg.inv(self.theta0)

    def _lag_matrix(self, y_prev: float) -> np.ndarray:
        return self.theta1_high if y_prev > self.threshold else self.theta1_low

    def simulate(self, shocks, w0=None):
        eps = np.asarray(shocks, dtype=float)
        base = self.w0 if w0 is None else np.asarray(w0, dtype=float)
        T = eps.shape[0]
        w = np.empty((T, self.n_obs))
        y_idx = self.variable_roles.y
        for t in range(T):
            acc = base + self.theta0 @ eps[t]
            if t >= 1:
                y_prev = w[t - 1, y_idx]
                acc = acc + self._lag_matrix(y_prev) @ eps[t - 1]
            w[t] = acc
        return w

    def recover_shocks(self, observed, w0=None):
        w = np.asarray(observed, dtype=float)
        base = self.w0 if w0 is None else np.asarray(w0, dtype=float)
        T = w.shape[0]
        eps = np.zeros((T, self.n_shock))
        y_idx = self.variable_roles.y
        for t in range(T):
            acc = w[t] - base
            if t >= 1:
                acc = acc - self._lag_matrix(w[t - 1, y_idx]) @ eps[t - 1]
            eps[t] = self._impact_inv @ acc
        return eps


@dataclass
class ScenarioResult:
    """Per-replication scenario output.

    ``disparity`` is exactly ``baseline - counterfactual`` row by row; for
    scenario analyses baseline holds the factual outcome path and
    counterfactual the deviated-policy path, while for the zeroing-out
    intervention baseline holds the shocked muted-policy economy and
    counterfactual the no-shock benchmark, so the disparity is the direct
    effect.
    """

    kind: str
    anchor: int
    horizon: int
    baseline: np.ndarray          # (N, H+1)
    counterfactual: np.ndarray    # (N, H+1)
    disparity: np.ndarray         # (N, H+1)
    deltas: np.ndarray            # (N, n_e)
    selection: SelectedShockSpec
    seed: Optional[int] = None
    n_dropped: int = 0
    history_ids: Optional[np.ndarray] = None
    shock_draws: Optional[list] = None
    objective_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.array_equal(self.disparity, self.baseline - self.counterfactual):
            raise ShapeError("disparity must equal baseline - counterfactual exactly")

    @property
    def n_replications(self) -> int:
        return self.baseline.shape[0]

    @property
    def mean_disparity(self) -> np.ndarray:
        return self.disparity.mean(axis=0)

    def percentile_band(self, level: float) -> tuple[np.ndarray, np.ndarray]:
        alpha = (1.0 - level) / 2.0
        return (np.quantile(self.disparity, alpha, axis=0),
                np.quantile(self.disparity, 1.0 - alpha, axis=0))


def _deviated(shocks: np.ndarray, anchor: int, selection: SelectedShockSpec,
              delta: np.ndarray) -> np.ndarray:
    out = np.array(shocks, dtype=float)
    for k, (offset, s) in enumerate(selection.entries):
        out[anchor + offset, s] -= delta[k]
    return out


def _policy_path(model: StructuralModel, shocks, w0, anchor, horizon) -> np.ndarray:
    w = model.simulate(shocks[: anchor + horizon + 1], w0)
    return w[anchor : anchor + horizon + 1, model.variable_roles.r]


def solve_shock_deviation_path(model: StructuralModel, shocks: np.ndarray, w0,
                               anchor: int, selection: SelectedShockSpec,
                               target_r: np.ndarray, rng: Optional[np.random.Generator] = None,
                               n_restarts: int = 5, baseline_path=None):
    """Least-squares shock deviation driving the policy path to a target.

    Returns ``(delta, objective_value)``.  Linear-in-shocks models get the
    exact minimal-norm answer by probing unit deviations; other models run
    Nelder-Mead from the probed warm start plus random restarts, keeping the
    best objective and breaking ties toward the smaller deviation norm.
    Failure to reach the convergence tolerance on any start raises
    ``ConvergenceError`` with the restart trace.

    ``baseline_path`` overrides the simulated zero-deviation policy path in
    the residual the probe solve fits (historical analyses pass the observed
    path so a target equal to it yields an exactly zero deviation).
    """
    horizon = target_r.size - 1
    n_e = selection.n_selected
    base_path = _policy_path(model, shocks, w0, anchor, horizon)
    fit_base = base_path if baseline_path is None else np.asarray(baseline_path, dtype=float)

    probe = np.empty((horizon + 1, n_e))
    for k in range(n_e):
        unit = np.zeros(n_e)
        unit[k] = 1.0
        probe[:, k] = base_path - _policy_path(
            model, _deviated(shocks, anchor, selection, unit), w0, anchor, horizon
        )
    delta0 = pinv(probe) @ (fit_base - target_r)

    def objective(delta):
        path = _policy_path(model, _deviated(shocks, anchor, selection, delta),
                            w0, anchor, horizon)
        gap = target_r - path
        return float(gap @ gap)

    if model.linear_in_shocks:
        return delta0, objective(delta0)

    rng = np.random.default_rng(0) if rng is None else rng
    scale = max(1.0, float(np.abs(delta0).max()))
    starts = [delta0, np.zeros(n_e)]
    starts += [delta0 + scale * rng.standard_normal(n_e) for _ in range(n_restarts)]
    maxiter = 10 * (n_e + 1) ** 2
    trace = []
    best = None
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"fatol": 1e-10, "xatol": 1e-10, "maxiter": maxiter})
        trace.append((res.fun, float(np.linalg.norm(res.x)), res.success))
        if best is None:
            best = res
        elif res.fun < best.fun - 1e-12:
            best = res
        elif abs(res.fun - best.fun) <= 1e-12 and np.linalg.norm(res.x) < np.linalg.norm(best.x):
            best = res
    # converged if any start met both tolerances, or if two independent
    # starts agree on the optimum (the iteration cap usually trips scipy's
    # success flag long after the objective has stabilized)
    objs = sorted(f for f, _, _ in trace)
    agreed = len(objs) >= 2 and objs[1] - objs[0] <= 1e-8 * max(1.0, objs[0])
    if not (agreed or any(ok for _, _, ok in trace)):
        raise ConvergenceError(f"deviation search failed to converge; restart trace: {trace}")
    return best.x, float(best.fun)


def _check_recovery(model: StructuralModel, observed, w0, tol: float = 1e-8) -> np.ndarray:
    eps = model.recover_shocks(observed, w0)
    resim = model.simulate(eps, w0)
    scale = max(1.0, float(np.abs(observed).max()))
    err = float(np.abs(resim - np.asarray(observed, dtype=float)).max())
    if err > tol * scale:
        raise RecoveryError(f"shock recovery residual {err:.3e} exceeds tolerance")
    return eps


def _selection_for(model: StructuralModel, horizon: int,
                   selection: Optional[SelectedShockSpec]) -> SelectedShockSpec:
    if selection is None:
        selection = SelectedShockSpec.period_by_period(model.policy_shocks[0], horizon)
    for offset, s in selection.entries:
        if s not in model.policy_shocks:
            raise ShapeError(f"selected shock {s} does not have a policy role")
        if offset > horizon:
            raise ShapeError("selection offset beyond the scenario horizon")
    return selection


def historical_scenario(model: StructuralModel, observed: np.ndarray, w0,
                        anchor: int, target_r: np.ndarray,
                        selection: Optional[SelectedShockSpec] = None) -> ScenarioResult:
    """Re-run history with the policy path steered to a target.

    Recovers the realized shocks (verifying the recovery reproduces the
    data), finds the policy-shock deviation whose policy path best matches
    ``target_r`` from ``anchor`` on, and reports the per-horizon outcome
    disparity between the observed and deviated economies.
    """
    observed = np.asarray(observed, dtype=float)
    target_r = np.asarray(target_r, dtype=float).reshape(-1)
    horizon = target_r.size - 1
    if anchor < 0 or anchor + horizon >= observed.shape[0]:
        raise ShapeError("scenario window must fit inside the observed sample")
    selection = _selection_for(model, horizon, selection)
    eps = _check_recovery(model, observed, w0)
    r_idx = model.variable_roles.r
    observed_r = observed[anchor : anchor + horizon + 1, r_idx]
    delta, obj = solve_shock_deviation_path(model, eps, w0, anchor, selection, target_r,
                                            baseline_path=observed_r)
    y_idx = model.variable_roles.y
    baseline = observed[anchor : anchor + horizon + 1, y_idx][None, :]
    if np.all(delta == 0.0):
        # zero deviation: the counterfactual economy is the baseline economy
        counterfactual = baseline.copy()
    else:
        w_cf = model.simulate(_deviated(eps, anchor, selection, delta)[: anchor + horizon + 1], w0)
        counterfactual = w_cf[anchor : anchor + horizon + 1, y_idx][None, :]
    return ScenarioResult(
        kind="historical", anchor=anchor, horizon=horizon,
        baseline=baseline, counterfactual=counterfactual,
        disparity=baseline - counterfactual,
        deltas=delta[None, :], selection=selection,
        objective_values=np.array([obj]),
    )


def future_scenario(model: StructuralModel, history: np.ndarray, w0,
                    target_r: np.ndarray, n_replications: int,
                    seed: Optional[int] = None,
                    selection: Optional[SelectedShockSpec] = None,
                    keep_draws: bool = False) -> ScenarioResult:
    """Distribution of future outcome gaps under a fixed future policy path.

    Historical shocks are recovered once; future shocks are drawn by
    resampling recovered shock rows with replacement (jointly across shock
    dimensions, preserving their cross-sectional dependence).  The pool is
    centered first: structural shocks have mean zero by assumption, so the
    recovered sample mean is estimation noise, and centering makes the
    zero-shock forecast the exact null of the experiment.  Each draw gets
    its own deviation solve against the target policy path.
    """
    history = np.asarray(history, dtype=float)
    target_r = np.asarray(target_r, dtype=float).reshape(-1)
    horizon = target_r.size - 1
    if n_replications < 1:
        raise ShapeError("need at least one replication")
    selection = _selection_for(model, horizon, selection)
    eps_hist = _check_recovery(model, history, w0)
    pool = eps_hist - eps_hist.mean(axis=0)
    anchor = history.shape[0]
    y_idx = model.variable_roles.y

    streams = np.random.SeedSequence(seed).spawn(n_replications)
    baseline = np.empty((n_replications, horizon + 1))
    counterfactual = np.empty((n_replications, horizon + 1))
    deltas = np.empty((n_replications, selection.n_selected))
    objs = np.empty(n_replications)
    draws = [] if keep_draws else None
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, pool.shape[0], size=horizon + 1)
        eps = np.vstack([eps_hist, pool[rows]])
        w_base = model.simulate(eps, w0)
        baseline[i] = w_base[anchor :, y_idx]
        delta, obj = solve_shock_deviation_path(model, eps, w0, anchor, selection,
                                                target_r, rng)
        w_cf = model.simulate(_deviated(eps, anchor, selection, delta), w0)
        counterfactual[i] = w_cf[anchor :, y_idx]
        deltas[i] = delta
        objs[i] = obj
        if keep_draws:
            draws.append(eps[anchor:])
    return ScenarioResult(
        kind="future", anchor=anchor, horizon=horizon,
        baseline=baseline, counterfactual=counterfactual,
        disparity=baseline - counterfactual,
        deltas=deltas, selection=selection, seed=seed,
        shock_draws=draws, objective_values=objs,
    )


def zeroing_out_intervention(model: StructuralModel, anchor: int, horizon: int,
                             n_replications: int, seed: Optional[int],
                             shock_source, selection: Optional[SelectedShockSpec] = None,
                             histories: Optional[Sequence[np.ndarray]] = None,
                             w0=None, keep_draws: bool = True) -> ScenarioResult:
    """Direct effect of a unit shock of interest with the policy path muted.

    Per replication: draw shocks through ``anchor + horizon``; compute the
    no-shock benchmark and its policy path; find the policy-shock deviation
    that keeps the policy path at that benchmark while the shock of interest
    equals one; report the outcome difference.  ``shock_source`` is either a
    matrix of shock rows resampled i.i.d. or a callable ``(rng, n) -> rows``.
    Fixed ``histories`` (pre-anchor shock paths, cycled across replications)
    enable state-dependent conditioning afterwards.  Replications whose
    deviation solve fails are dropped; more than 10% dropped is an error.
    """
    if n_replications < 1:
        raise ShapeError("need at least one replication")
    if anchor < 0 or horizon < 0:
        raise ShapeError("anchor and horizon must be nonnegative")
    selection = _selection_for(model, horizon, selection)
    w0 = np.zeros(model.n_obs) if w0 is None else np.asarray(w0, dtype=float)
    n_periods = anchor + horizon + 1
    y_idx = model.variable_roles.y
    x_shock = model.shock_x

    if callable(shock_source):
        draw_rows = shock_source
    else:
        pool = np.asarray(shock_source, dtype=float)
        if pool.ndim != 2 or pool.shape[1] != model.n_shock:
            raise ShapeError("shock pool must be a matrix with one column per shock")

        def draw_rows(rng, n):
            return pool[rng.integers(0, pool.shape[0], size=n)]

    streams = np.random.SeedSequence(seed).spawn(n_replications)
    baseline_rows, counterfactual_rows, delta_rows = [], [], []
    history_ids, kept_draws, objs = [], [], []
    n_dropped = 0
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        if histories is not None:
            hid = i % len(histories)
            hist = np.asarray(histories[hid], dtype=float)
            if hist.shape != (anchor, model.n_shock):
                raise ShapeError("each history must be anchor x n_shock")
            eps = np.vstack([hist, draw_rows(rng, horizon + 1)])
        else:
            hid = i
            eps = draw_rows(rng, n_periods)
            eps = np.asarray(eps, dtype=float)
            if eps.shape != (n_periods, model.n_shock):
                raise ShapeError("shock draw has the wrong shape")
        eps0 = np.array(eps)
        eps0[anchor, x_shock] = 0.0
        w_bench = model.simulate(eps0, w0)
        y_bench = w_bench[anchor:, y_idx]
        r_target = w_bench[anchor:, model.variable_roles.r]

        eps1 = np.array(eps)
        eps1[anchor, x_shock] = 1.0
        try:
            delta, obj = solve_shock_deviation_path(model, eps1, w0, anchor,
                                                    selection, r_target, rng)
        except ConvergenceError:
            n_dropped += 1
            continue
        w_muted = model.simulate(_deviated(eps1, anchor, selection, delta), w0)
        baseline_rows.append(w_muted[anchor:, y_idx])
        counterfactual_rows.append(y_bench)
        delta_rows.append(delta)
        history_ids.append(hid)
        objs.append(obj)
        if keep_draws:
            kept_draws.append(eps)
    if n_dropped > 0.1 * n_replications:
        raise NumericalError(
            f"intervention dropped {n_dropped}/{n_replications} replications (> 10%)"
        )
    baseline = np.asarray(baseline_rows)
    counterfactual = np.asarray(counterfactual_rows)
    return ScenarioResult(
        kind="intervention", anchor=anchor, horizon=horizon,
        baseline=baseline, counterfactual=counterfactual,
        disparity=baseline - counterfactual,
        deltas=np.asarray(delta_rows), selection=selection, seed=seed,
        n_dropped=n_dropped,
        history_ids=np.asarray(history_ids),
        shock_draws=kept_draws if keep_draws else None,
        objective_values=np.asarray(objs),
    )


def conditional_effects(result: ScenarioResult, conditioning: str):
    """State- or path-conditional mean effects from retained draws.

    ``state`` fixes the pre-anchor shock history and averages the effect
    over the future draws sharing it (a dict keyed by history id);
    ``path`` fixes everything except the shock of interest, so each
    replication is its own conditional effect.
    """
    if conditioning == "path":
        if result.shock_draws is None:
            raise ShapeError("path conditioning requires retained shock draws")
        return result.disparity.copy()
    if conditioning == "state":
        if result.history_ids is None:
            raise ShapeError("state conditioning requires replications with history ids")
        out = {}
        for hid in np.unique(result.history_ids):
            rows = result.disparity[result.history_ids == hid]
            out[int(hid)] = rows.mean(axis=0)
        return out
    raise ShapeError(f"unknown conditioning {conditioning!r}")
