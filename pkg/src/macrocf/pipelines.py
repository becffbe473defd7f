"""Task pipelines: data in, estimates and counterfactuals out.

Each task wires the estimation modules together and returns a
``ReportBundle``; the functions here assemble module outputs and never do
estimation arithmetic of their own.  Module errors are re-raised with the
pipeline stage name prepended.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from macrocf.counterfactual import (
    HYPOTHETICAL,
    PolicyPathDeviation,
    hypothetical_output_gap,
    hypothetical_trajectory_param,
    policy_intervention_effect,
)
from macrocf.errors import MacrocfError, NumericalError, SchemaError, ShapeError
from macrocf.inference import (
    IrfJointDistribution,
    delta_method_avar,
    hac_lrv,
    hr_lrv,
    normal_interval,
    se_counterfactual,
)
from macrocf.io import (
    PanelTable,
    PlotSeries,
    ReportBundle,
    ReportRow,
    ScenarioConfig,
    apply_path_ops,
    bind_dataset,
    load_model,
    load_panel,
    save_panel,
)
from macrocf.projection import default_lag_order, estimate_beta, estimate_phi
from macrocf.svma import draw_shocks, irf_set_from_responses, simulate_svma
from macrocf.variv import (
    IdentifiedShockColumn,
    fit_var,
    forecast_var,
    identify_shock_iv,
    irf_from_var,
    wild_bootstrap_bands,
)


@contextmanager
def _stage(name: str):
    try:
        yield
    except MacrocfError as err:
        raise type(err)(f"[stage: {name}] {err}") from err


def _load(cfg: ScenarioConfig):
    with _stage("load-data"):
        instrument_cols = [c for c in (cfg.instrument_column, cfg.instrument_x_column) if c]
        table = load_panel(cfg.data_file, instrument_cols)
        return bind_dataset(table, cfg.x, cfg.y, cfg.r,
                            cfg.instrument_column, cfg.instrument_x_column)


def _lag_order(cfg: ScenarioConfig, data) -> int:
    with _stage("lag-selection"):
        return default_lag_order(data) if cfg.lags == "auto" else int(cfg.lags)


def _anchor_index(cfg: ScenarioConfig, data) -> int:
    labels = [str(t) for t in data.time_index]
    start = str(cfg.scenario_start)
    if start not in labels:
        raise SchemaError(
            f"scenario.start {start!r} not in the sample "
            f"({labels[0]} .. {labels[-1]})"
        )
    anchor = labels.index(start)
    if anchor + cfg.horizon >= data.n_periods:
        raise SchemaError(
            f"scenario window {start}+{cfg.horizon} runs past the end of the sample"
        )
    return anchor


def _bounded_ci(point: float, lo: float, hi: float) -> tuple[float, float]:
    # percentile bands may just miss the full-sample point estimate; reports
    # promise ci_lo <= estimate <= ci_hi, so widen minimally when needed
    return (min(lo, point), max(hi, point))


def _lp_rows(cfg: ScenarioConfig, data, z, p: int, kind: str, deviation=None):
    """Per-horizon LP-IV rows (kind 'psi' needs a path deviation)."""
    rows = []
    n_used = []
    for h in range(cfg.horizon + 1):
        with _stage(f"lp-iv(h={h})"):
            if kind == "psi":
                fit = estimate_beta(data, z, h, cfg.horizon, p)
            else:
                fit = estimate_phi(data, z, h, cfg.horizon, p)
            if cfg.inference == "hac":
                lrv = hac_lrv(fit.scores, cfg.bandwidth)
            else:
                lrv = hr_lrv(fit)
            est = se_counterfactual(fit, lrv, deviation, level=cfg.level)
        rows.append(ReportRow(h, est.value, est.se, est.ci[0], est.ci[1], "lp_iv"))
        n_used.append(fit.n_used)
    return rows, (min(n_used), max(n_used))


def _identify_driver(fit, zx_values, x_idx: int):
    """Impact column of the shock of interest, normalized to a unit driver move."""
    if zx_values is not None:
        return identify_shock_iv(fit, zx_values, normalization=("unit_impact_on", x_idx, 1.0))
    # recursive fallback: driver ordered first, unit impact on the driver
    cov = fit.resid_cov
    b = cov[:, x_idx] / cov[x_idx, x_idx]
    b = b.copy()
    b[x_idx] = 1.0
    return IdentifiedShockColumn(b, ("unit_impact_on", int(x_idx), 1.0))


def _var_iv_draws(cfg: ScenarioConfig, data, z, zx, p: int, with_driver: bool):
    """Point IRFs to the policy (and optionally driver) shock plus joint
    wild-bootstrap replication draws sharing one Rademacher stream."""
    if cfg.replications < 100:
        raise ShapeError(
            f"{cfg.inference!r} inference needs at least 100 replications, "
            f"got {cfg.replications}"
        )
    w = data.observations
    H = cfg.horizon
    z_values = z.values
    zx_values = zx.values if zx is not None else None
    x_idx = data.variable_roles.x
    with _stage("var-fit"):
        fit = fit_var(w, p)
    with _stage("identify-policy-shock"):
        shock_r = identify_shock_iv(fit, z_values)
        irf_r = irf_from_var(fit, shock_r, H)
    irf_x = None
    if with_driver:
        with _stage("identify-driver-shock"):
            shock_x = _identify_driver(fit, zx_values, x_idx)
            irf_x = irf_from_var(fit, shock_x, H)

    from macrocf._kernels import var_paths

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    draws_r, draws_x = [], []
    dropped = 0
    n_resid = fit.residuals.shape[0]
    for ss in streams:
        rng = np.random.default_rng(ss)
        e = rng.integers(0, 2, size=n_resid) * 2.0 - 1.0
        u_star = fit.residuals * e[:, None]
        w_star = np.vstack([fit.presample,
                            var_paths(fit.intercept, fit.coefs, fit.presample, u_star)])
        z_star = z_values.copy()
        z_star[p:] = z_values[p:] * e
        zx_star = None
        if zx_values is not None:
            zx_star = zx_values.copy()
            zx_star[p:] = zx_values[p:] * e
        try:
            fit_b = fit_var(w_star, p)
            shock_rb = identify_shock_iv(fit_b, z_star)
            irf_rb = irf_from_var(fit_b, shock_rb, H)
            if with_driver:
                shock_xb = _identify_driver(fit_b, zx_star, x_idx)
                draws_x.append(irf_from_var(fit_b, shock_xb, H))
            draws_r.append(irf_rb)
        except NumericalError:
            dropped += 1
    if dropped > 0.1 * cfg.replications:
        raise NumericalError(
            f"[stage: bootstrap] dropped {dropped}/{cfg.replications} replications (> 10%)"
        )
    return fit, irf_r, irf_x, np.stack(draws_r), (np.stack(draws_x) if with_driver else None), dropped


def _stack_psi(irf_r_draw, y_idx, r_idx, h):
    """(vec theta_re, theta_ye_h) for one replication, column-major vec."""
    irfset = irf_set_from_responses(irf_r_draw[:, r_idx], irf_r_draw[:, y_idx])
    return np.concatenate([irfset.theta_re.flatten(order="F"), irfset.theta_ye_at(h)])


def _psi_rows_delta(cfg, data, irf_r, draws_r, deviation):
    y_idx, r_idx = data.variable_roles.y, data.variable_roles.r
    H = cfg.horizon
    irfset = irf_set_from_responses(irf_r[:, r_idx], irf_r[:, y_idx])
    rows = []
    for h in range(H + 1):
        with _stage(f"delta(h={h})"):
            beta = hypothetical_trajectory_param(irfset, h)
            point = hypothetical_output_gap(beta, deviation, h).value
            stacks = np.stack([_stack_psi(d, y_idx, r_idx, h) for d in draws_r])
            omega_e = np.cov(stacks, rowvar=False)
            dim = 1 + (H + 1) + stacks.shape[1]
            cov = np.zeros((dim, dim))
            cov[1 + H + 1 :, 1 + H + 1 :] = omega_e
            dist = IrfJointDistribution(0.0, np.zeros(H + 1), irfset.theta_re,
                                        irfset.theta_ye_at(h), cov)
            out = delta_method_avar(dist, d_ht=deviation)
            se = float(np.sqrt(out.avar_psi))
        lo, hi = normal_interval(point, se, cfg.level)
        rows.append(ReportRow(h, point, se, lo, hi, "delta"))
    return rows


def _psi_rows_bootstrap(cfg, data, irf_r, draws_r, deviation):
    y_idx, r_idx = data.variable_roles.y, data.variable_roles.r
    irfset = irf_set_from_responses(irf_r[:, r_idx], irf_r[:, y_idx])
    alpha = (1.0 - cfg.level) / 2.0
    rows = []
    for h in range(cfg.horizon + 1):
        with _stage(f"bootstrap-psi(h={h})"):
            beta = hypothetical_trajectory_param(irfset, h)
            point = hypothetical_output_gap(beta, deviation, h).value
            vals = []
            for d in draws_r:
                set_b = irf_set_from_responses(d[:, r_idx], d[:, y_idx])
                beta_b = hypothetical_trajectory_param(set_b, h)
                vals.append(hypothetical_output_gap(beta_b, deviation, h).value)
            vals = np.asarray(vals)
            lo, hi = _bounded_ci(point, float(np.quantile(vals, alpha)),
                                 float(np.quantile(vals, 1.0 - alpha)))
        rows.append(ReportRow(h, point, float(vals.std(ddof=1)), lo, hi, "wild_bootstrap"))
    return rows


def _phi_sets(irf_r, irf_x, y_idx, r_idx):
    return irf_set_from_responses(irf_r[:, r_idx], irf_r[:, y_idx],
                                  driver_response_y=irf_x[:, y_idx],
                                  driver_response_r=irf_x[:, r_idx])


def _phi_rows_delta(cfg, data, irf_r, irf_x, draws_r, draws_x):
    y_idx, r_idx = data.variable_roles.y, data.variable_roles.r
    H = cfg.horizon
    irfset = _phi_sets(irf_r, irf_x, y_idx, r_idx)
    rows = []
    decomp = np.empty((H + 1, 3))
    for h in range(H + 1):
        with _stage(f"delta(h={h})"):
            est = policy_intervention_effect(irfset, h)
            decomp[h] = (est.decomposition.total, est.decomposition.direct,
                         est.decomposition.indirect)
            stacks = []
            for dr, dx in zip(draws_r, draws_x):
                set_b = _phi_sets(dr, dx, y_idx, r_idx)
                stacks.append(np.concatenate([
                    [set_b.theta_yx[h]], set_b.d_po,
                    set_b.theta_re.flatten(order="F"), set_b.theta_ye_at(h),
                ]))
            cov = np.cov(np.stack(stacks), rowvar=False)
            dist = IrfJointDistribution(irfset.theta_yx[h], irfset.d_po,
                                        irfset.theta_re, irfset.theta_ye_at(h), cov)
            out = delta_method_avar(dist)
            se = float(np.sqrt(out.avar_phi))
        lo, hi = normal_interval(est.value, se, cfg.level)
        rows.append(ReportRow(h, est.value, se, lo, hi, "delta"))
    return rows, decomp


def _phi_rows_bootstrap(cfg, data, irf_r, irf_x, draws_r, draws_x):
    y_idx, r_idx = data.variable_roles.y, data.variable_roles.r
    H = cfg.horizon
    irfset = _phi_sets(irf_r, irf_x, y_idx, r_idx)
    alpha = (1.0 - cfg.level) / 2.0
    rows = []
    decomp = np.empty((H + 1, 3))
    for h in range(H + 1):
        with _stage(f"bootstrap-phi(h={h})"):
            est = policy_intervention_effect(irfset, h)
            decomp[h] = (est.decomposition.total, est.decomposition.direct,
                         est.decomposition.indirect)
            vals = np.asarray([
                policy_intervention_effect(_phi_sets(dr, dx, y_idx, r_idx), h).value
                for dr, dx in zip(draws_r, draws_x)
            ])
            lo, hi = _bounded_ci(est.value, float(np.quantile(vals, alpha)),
                                 float(np.quantile(vals, 1.0 - alpha)))
        rows.append(ReportRow(h, est.value, float(vals.std(ddof=1)), lo, hi,
                              "wild_bootstrap"))
    return rows, decomp


def _horizon_labels(H):
    return [str(h) for h in range(H + 1)]


def _meta(cfg, p, extra=None):
    meta = {
        "task": cfg.task,
        "inference": cfg.inference,
        "horizon": str(cfg.horizon),
        "lag_order": str(p),
        "level": str(cfg.level),
        "seed": str(cfg.seed),
    }
    if cfg.inference == "hac":
        meta["bandwidth"] = "auto" if cfg.bandwidth is None else str(cfg.bandwidth)
    if extra:
        meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# tasks


def run_simulate(cfg_map: dict, overrides=None) -> ReportBundle:
    """Simulate a synthetic panel from a model file and write it as CSV."""
    values = dict(cfg_map)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    for key in ("model.file", "periods", "data.file"):
        if key not in values:
            raise SchemaError(f"simulate requires config key {key!r}")
    seed = int(values.get("seed", 0))
    periods = int(values["periods"])
    if periods < 1:
        raise SchemaError("periods must be positive")
    with _stage("load-model"):
        model, columns, instrument = load_model(values["model.file"])
    rng = np.random.default_rng(seed)
    with _stage("simulate"):
        shocks = draw_shocks(model, periods, rng)
        w = simulate_svma(model, shocks)
    columns = list(columns) if columns else [f"w{i}" for i in range(model.n_obs)]
    data = w
    if instrument is not None:
        pi = float(instrument.get("pi", 1.0))
        noise = float(instrument.get("noise_std", 0.0))
        z = pi * shocks.values[:, model.shock_roles.policy[0]]
        if noise > 0:
            z = z + noise * rng.standard_normal(periods)
        start = int(instrument.get("start", 0))
        stop = instrument.get("stop")
        stop = periods if stop is None else int(stop)
        zcol = np.full(periods, np.nan)
        zcol[start:stop] = z[start:stop]
        data = np.column_stack([w, zcol])
        columns = columns + [instrument.get("column", "instrument")]
    table = PanelTable(index=[str(t) for t in range(1, periods + 1)],
                       columns=columns, values=data)
    with _stage("write-data"):
        save_panel(table, values["data.file"])
    bundle = ReportBundle(metadata={
        "task": "simulate",
        "model_file": str(values["model.file"]),
        "data_file": str(values["data.file"]),
        "periods": str(periods),
        "seed": str(seed),
    })
    return bundle


def run_estimate_irf(cfg: ScenarioConfig) -> ReportBundle:
    data, z, _ = _load(cfg)
    p = _lag_order(cfg, data)
    normalization = "unit_shock"
    if cfg.impact_on is not None:
        if cfg.impact_on not in data.columns:
            raise SchemaError(f"irf.impact_on column {cfg.impact_on!r} not an observable")
        normalization = ("unit_impact_on", data.columns.index(cfg.impact_on), cfg.impact_size)
    H = cfg.horizon
    labels = _horizon_labels(H)
    series = []
    extra = {"effective_sample": str(data.n_periods - p)}
    if cfg.inference == "wild_bootstrap":
        with _stage("wild-bootstrap"):
            bands = wild_bootstrap_bands(data.observations, p, z.values, H,
                                         n_boot=cfg.replications, level=cfg.level,
                                         seed=cfg.seed, normalization=normalization)
        for i, col in enumerate(data.columns):
            series.append(PlotSeries(f"irf.{col}", labels, bands.point[:, i],
                                     lo=bands.lower[:, i], hi=bands.upper[:, i]))
        extra.update({"replications": str(cfg.replications),
                      "dropped_replications": str(bands.n_dropped),
                      "renormalized_per_draw": "true"})
    else:
        with _stage("var-fit"):
            fit = fit_var(data.observations, p)
        with _stage("identify-policy-shock"):
            shock = identify_shock_iv(fit, z.values, normalization)
            point = irf_from_var(fit, shock, H)
        for i, col in enumerate(data.columns):
            series.append(PlotSeries(f"irf.{col}", labels, point[:, i]))
    return ReportBundle(series=series, metadata=_meta(cfg, p, extra))


def _scenario_common(cfg: ScenarioConfig, data, z, p: int, baseline_r, baseline_y, labels):
    """Shared body of the historical and future tasks."""
    with _stage("counterfactual-path"):
        r_tilde = apply_path_ops(baseline_r, cfg.path_spec)
        deviation = PolicyPathDeviation(HYPOTHETICAL, baseline_r - r_tilde)
    extra = {}
    if cfg.inference in ("hac", "hr"):
        rows, span = _lp_rows(cfg, data, z, p, "psi", deviation)
        extra["effective_sample"] = f"{span[0]}..{span[1]}"
    else:
        _, irf_r, _, draws_r, _, dropped = _var_iv_draws(cfg, data, z, None, p, False)
        extra.update({"effective_sample": str(data.n_periods - p),
                      "replications": str(cfg.replications),
                      "dropped_replications": str(dropped)})
        if cfg.inference == "delta":
            rows = _psi_rows_delta(cfg, data, irf_r, draws_r, deviation)
        else:
            rows = _psi_rows_bootstrap(cfg, data, irf_r, draws_r, deviation)
    psi = np.array([row.estimate for row in rows])
    y_tilde = baseline_y - psi
    series = [
        PlotSeries("policy.baseline", labels, baseline_r),
        PlotSeries("policy.counterfactual", labels, r_tilde),
        PlotSeries("outcome.baseline", labels, baseline_y),
        PlotSeries("outcome.counterfactual", labels, y_tilde),
        PlotSeries("outcome.gap", labels, psi,
                   lo=np.array([row.ci_lo for row in rows]),
                   hi=np.array([row.ci_hi for row in rows])),
    ]
    return ReportBundle(tables={"psi": rows}, series=series,
                        metadata=_meta(cfg, p, extra))


def run_historical(cfg: ScenarioConfig) -> ReportBundle:
    data, z, _ = _load(cfg)
    p = _lag_order(cfg, data)
    with _stage("align-scenario"):
        anchor = _anchor_index(cfg, data)
    window = slice(anchor, anchor + cfg.horizon + 1)
    labels = [str(t) for t in np.asarray(data.time_index)[window]]
    baseline_r = data.series("r")[window]
    baseline_y = data.series("y")[window]
    bundle = _scenario_common(cfg, data, z, p, baseline_r, baseline_y, labels)
    bundle.metadata["scenario_start"] = str(cfg.scenario_start)
    return bundle


def run_future(cfg: ScenarioConfig) -> ReportBundle:
    data, z, _ = _load(cfg)
    p = _lag_order(cfg, data)
    with _stage("forecast"):
        fit = fit_var(data.observations, p)
        forecast = forecast_var(fit, data.observations, cfg.horizon + 1)
    labels = [f"t+{h + 1}" for h in range(cfg.horizon + 1)]
    baseline_r = forecast[:, data.variable_roles.r]
    baseline_y = forecast[:, data.variable_roles.y]
    return _scenario_common(cfg, data, z, p, baseline_r, baseline_y, labels)


def run_intervention(cfg: ScenarioConfig) -> ReportBundle:
    data, z, zx = _load(cfg)
    p = _lag_order(cfg, data)
    labels = _horizon_labels(cfg.horizon)
    extra = {}
    series = []
    if cfg.inference in ("hac", "hr"):
        rows, span = _lp_rows(cfg, data, z, p, "phi")
        extra["effective_sample"] = f"{span[0]}..{span[1]}"
    else:
        _, irf_r, irf_x, draws_r, draws_x, dropped = _var_iv_draws(cfg, data, z, zx, p, True)
        extra.update({"effective_sample": str(data.n_periods - p),
                      "replications": str(cfg.replications),
                      "dropped_replications": str(dropped),
                      "driver_identification": "iv" if zx is not None else "recursive"})
        if cfg.inference == "delta":
            rows, decomp = _phi_rows_delta(cfg, data, irf_r, irf_x, draws_r, draws_x)
        else:
            rows, decomp = _phi_rows_bootstrap(cfg, data, irf_r, irf_x, draws_r, draws_x)
        series = [
            PlotSeries("effect.total", labels, decomp[:, 0]),
            PlotSeries("effect.direct", labels, decomp[:, 1]),
            PlotSeries("effect.indirect", labels, decomp[:, 2]),
        ]
    return ReportBundle(tables={"phi": rows}, series=series, metadata=_meta(cfg, p, extra))


def run_estimate_counterfactual(cfg: ScenarioConfig) -> ReportBundle:
    data, z, zx = _load(cfg)
    p = _lag_order(cfg, data)
    tables = {}
    extra = {}
    if cfg.inference in ("hac", "hr"):
        tables["phi"], span = _lp_rows(cfg, data, z, p, "phi")
        extra["effective_sample"] = f"{span[0]}..{span[1]}"
        if cfg.path_spec is not None and cfg.scenario_start is not None:
            anchor = _anchor_index(cfg, data)
            baseline_r = data.series("r")[anchor : anchor + cfg.horizon + 1]
            with _stage("counterfactual-path"):
                r_tilde = apply_path_ops(baseline_r, cfg.path_spec)
                deviation = PolicyPathDeviation(HYPOTHETICAL, baseline_r - r_tilde)
            tables["psi"], _ = _lp_rows(cfg, data, z, p, "psi", deviation)
    else:
        _, irf_r, irf_x, draws_r, draws_x, dropped = _var_iv_draws(cfg, data, z, zx, p, True)
        extra.update({"effective_sample": str(data.n_periods - p),
                      "replications": str(cfg.replications),
                      "dropped_replications": str(dropped)})
        if cfg.inference == "delta":
            tables["phi"], _ = _phi_rows_delta(cfg, data, irf_r, irf_x, draws_r, draws_x)
        else:
            tables["phi"], _ = _phi_rows_bootstrap(cfg, data, irf_r, irf_x, draws_r, draws_x)
    return ReportBundle(tables=tables, metadata=_meta(cfg, p, extra))


def run_scenario(cfg: ScenarioConfig) -> ReportBundle:
    """Dispatch a validated configuration to its task pipeline."""
    runner = {
        "estimate_irf": run_estimate_irf,
        "historical": run_historical,
        "future": run_future,
        "intervention": run_intervention,
        "estimate_counterfactual": run_estimate_counterfactual,
    }[cfg.task]
    return runner(cfg)
