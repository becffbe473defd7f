"""Linear moving-average economies and the matrix kernels shared by all estimators.

The model here is a finite-order structural vector moving average: each
observable is a linear combination of current and past mutually uncorrelated
shocks plus a fixed initial level.  Everything downstream (closed-form
counterfactuals, projection estimators, delta-method inference) consumes the
impulse-response objects and small linear-algebra utilities defined in this
module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from macrocf._kernels import svma_paths
from macrocf.errors import ShapeError


@dataclass(frozen=True)
class VariableRoles:
    """Column positions of the driver (x), outcome (y) and policy (r) series."""

    x: int
    y: int
    r: int

    def validate(self, n_obs: int) -> None:
        idx = (self.x, self.y, self.r)
        if len(set(idx)) != 3:
            raise ShapeError("variable roles x, y, r must be three distinct columns")
        if any(i < 0 or i >= n_obs for i in idx):
            raise ShapeError(f"variable role index out of range for {n_obs} observables")


@dataclass(frozen=True)
class ShockRoles:
    """Index of the shock of interest and the manipulable policy shocks."""

    x: int
    policy: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "policy", tuple(self.policy))

    def validate(self, n_shock: int) -> None:
        if not self.policy:
            raise ShapeError("at least one policy shock is required")
        idx = (self.x, *self.policy)
        if len(set(idx)) != len(idx):
            raise ShapeError("shock roles must name distinct shock indices")
        if any(i < 0 or i >= n_shock for i in idx):
            raise ShapeError(f"shock role index out of range for {n_shock} shocks")


class SvmaModel:
    """Finite-order SVMA data generating process.

    Parameters
    ----------
    ma_coeffs : array_like
        Stack of (n_obs x n_shock) coefficient matrices for lags 0..q, shape
        ``(q+1, n_obs, n_shock)`` (a sequence of 2-d arrays is accepted).
    shock_cov : array_like
        Diagonal (n_shock x n_shock) covariance of the structural shocks.
        Non-diagonal input is rejected rather than whitened silently.
    initial_condition : array_like
        Length n_obs level the convolution is anchored to.
    variable_roles, shock_roles
        Role assignments; exactly one x/y/r observable and at least one
        policy shock.

    Notes
    -----
    Infinite-order processes must be truncated by the caller; the order q is
    explicit.  n_shock may exceed n_obs (non-recoverable case); operations
    that need recoverability say so.
    """

    def __init__(self, ma_coeffs, shock_cov, initial_condition,
                 variable_roles: VariableRoles, shock_roles: ShockRoles):
        theta = np.asarray(ma_coeffs, dtype=float)
        if theta.ndim != 3 or theta.shape[0] < 1:
            raise ShapeError("ma_coeffs must stack at least one n_obs x n_shock matrix")
        if not np.all(np.isfinite(theta)):
            raise ShapeError("ma_coeffs must be finite")
        cov = np.asarray(shock_cov, dtype=float)
        if cov.shape != (theta.shape[2], theta.shape[2]):
            raise ShapeError("shock_cov must be square with one row per shock")
        off = cov - np.diag(np.diag(cov))
        if np.any(off != 0.0):
            raise ShapeError("shock_cov must be diagonal (uncorrelated structural shocks)")
        if np.any(np.diag(cov) <= 0.0) or not np.all(np.isfinite(np.diag(cov))):
            raise ShapeError("shock_cov diagonal must be strictly positive")
        w0 = np.asarray(initial_condition, dtype=float).reshape(-1)
        if w0.shape[0] != theta.shape[1]:
            raise ShapeError("initial_condition length must equal n_obs")
        variable_roles.validate(theta.shape[1])
        shock_roles.validate(theta.shape[2])
        self.ma_coeffs = theta
        self.shock_cov = cov
        self.initial_condition = w0
        self.variable_roles = variable_roles
        self.shock_roles = shock_roles

    @property
    def n_obs(self) -> int:
        return self.ma_coeffs.shape[1]

    @property
    def n_shock(self) -> int:
        return self.ma_coeffs.shape[2]

    @property
    def order(self) -> int:
        """MA order q (number of lagged coefficient matrices)."""
        return self.ma_coeffs.shape[0] - 1

    @property
    def shock_std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.shock_cov))


@dataclass
class ShockSequence:
    """Realized shock paths, one row per period."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ShapeError("shock values must be a T x n_shock matrix")


def draw_shocks(model: SvmaModel, n_periods: int, rng: np.random.Generator) -> ShockSequence:
    """Draw Gaussian shocks from the model's diagonal covariance.

    The random stream is supplied by the caller so parallel Monte Carlo
    workers control reproducibility.
    """
    values = rng.standard_normal((n_periods, model.n_shock)) * model.shock_std
    return ShockSequence(values)


def _shock_matrix(model: SvmaModel, shocks) -> np.ndarray:
    values = shocks.values if isinstance(shocks, ShockSequence) else np.asarray(shocks, dtype=float)
    if values.ndim != 2 or values.shape[1] != model.n_shock:
        raise ShapeError(
            f"shocks must be T x {model.n_shock}, got {values.shape}"
        )
    if values.shape[0] < 1:
        raise ShapeError("need at least one period of shocks")
    if not np.all(np.isfinite(values)):
        raise ShapeError("shocks must be finite")
    return values


def simulate_svma(model: SvmaModel, shocks) -> np.ndarray:
    """Simulate the observable panel generated by a shock sequence.

    Row t of the result is ``w0 + sum_{h=0}^{min(t-1, q)} Theta_h eps_{t-h}``
    (1-indexed periods): shocks before the first period do not exist, so the
    convolution history is truncated at the sample start.

    Returns
    -------
    ndarray of shape (T, n_obs)
    """
    values = _shock_matrix(model, shocks)
    return svma_paths(model.ma_coeffs, values, model.initial_condition)


def impulse_response(model: SvmaModel, shock_index: int, horizon: int) -> np.ndarray:
    """Response of all observables to a unit shock, horizons 0..H.

    Entry h is column ``shock_index`` of the lag-h coefficient matrix (zero
    beyond the MA order), which equals the difference between two simulated
    paths receiving the shock at one and zero.
    """
    if shock_index < 0 or shock_index >= model.n_shock:
        raise ShapeError(f"shock index {shock_index} out of range")
    if horizon < 0:
        raise ShapeError("horizon must be nonnegative")
    out = np.zeros((horizon + 1, model.n_obs))
    upto = min(horizon, model.order)
    out[: upto + 1] = model.ma_coeffs[: upto + 1, :, shock_index]
    return out


@dataclass(frozen=True)
class SelectedShockSpec:
    """Which policy shocks the policymaker manipulates.

    Each entry is ``(period_offset, shock_index)``: the policy shock
    ``shock_index`` hitting ``period_offset`` steps after the anchor date.
    """

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((int(j), int(s)) for j, s in self.entries))

    @classmethod
    def period_by_period(cls, shock_index: int, horizon: int) -> "SelectedShockSpec":
        """One scalar policy shock per period, offsets 0..H."""
        return cls(tuple((j, shock_index) for j in range(horizon + 1)))

    @classmethod
    def initial_date(cls, shock_indices: Sequence[int]) -> "SelectedShockSpec":
        """Several policy shocks, all at the anchor date."""
        return cls(tuple((0, s) for s in shock_indices))

    @property
    def n_selected(self) -> int:
        return len(self.entries)

    @property
    def is_period_by_period(self) -> bool:
        offsets = [j for j, _ in self.entries]
        shocks = {s for _, s in self.entries}
        return len(shocks) == 1 and offsets == list(range(len(offsets)))


@dataclass
class ImpulseResponseSet:
    """All impulse responses entering the counterfactual formulas.

    Attributes
    ----------
    horizon : int
    theta_yx : ndarray, shape (H+1,)
        Outcome response to a unit shock of interest.
    d_po : ndarray, shape (H+1,)
        Policy response to the shock of interest; the path deviation removed
        by a zeroing-out intervention.
    theta_re : ndarray, shape (H+1, n_e)
        Policy response to each selected policy shock.
    theta_ye : ndarray, shape (H+1, n_e)
        Outcome response to each selected policy shock; row h is the vector
        multiplying the shock deviation at horizon h.
    selection : SelectedShockSpec
    """

    horizon: int
    theta_yx: np.ndarray
    d_po: np.ndarray
    theta_re: np.ndarray
    theta_ye: np.ndarray
    selection: SelectedShockSpec

    def __post_init__(self):
        H = self.horizon
        n_e = self.selection.n_selected
        self.theta_yx = np.asarray(self.theta_yx, dtype=float).reshape(-1)
        self.d_po = np.asarray(self.d_po, dtype=float).reshape(-1)
        self.theta_re = np.asarray(self.theta_re, dtype=float)
        self.theta_ye = np.asarray(self.theta_ye, dtype=float)
        if self.theta_yx.shape != (H + 1,) or self.d_po.shape != (H + 1,):
            raise ShapeError("theta_yx and d_po must have one entry per horizon 0..H")
        if self.theta_re.shape != (H + 1, n_e) or self.theta_ye.shape != (H + 1, n_e):
            raise ShapeError("theta_re and theta_ye must be (H+1) x n_e")
        if self.selection.is_period_by_period:
            upper = np.triu(self.theta_re, k=1)
            if np.any(upper != 0.0):
                raise ShapeError("period-by-period selection requires lower-triangular theta_re")

    def theta_ye_at(self, h: int) -> np.ndarray:
        """Outcome-response row for horizon h."""
        if h < 0 or h > self.horizon:
            raise ShapeError(f"horizon {h} outside 0..{self.horizon}")
        return self.theta_ye[h]


def build_irf_set(model: SvmaModel, horizon: int, selection: SelectedShockSpec) -> ImpulseResponseSet:
    """Assemble the impulse-response objects for a shock selection.

    For a period-by-period selection the columns of ``theta_re`` are
    time-shifted copies of the policy self-response, so the matrix comes out
    lower-triangular Toeplitz by construction.
    """
    if horizon < 0:
        raise ShapeError("horizon must be nonnegative")
    policy = set(model.shock_roles.policy)
    for offset, s in selection.entries:
        if s not in policy:
            raise ShapeError(f"selected shock {s} does not have a policy role")
        if offset < 0 or offset > horizon:
            raise ShapeError(f"selected shock offset {offset} outside 0..{horizon}")

    roles = model.variable_roles
    irf_x = impulse_response(model, model.shock_roles.x, horizon)
    theta_yx = irf_x[:, roles.y].copy()
    d_po = irf_x[:, roles.r].copy()

    n_e = selection.n_selected
    theta_re = np.zeros((horizon + 1, n_e))
    theta_ye = np.zeros((horizon + 1, n_e))
    responses = {}
    for k, (offset, s) in enumerate(selection.entries):
        if s not in responses:
            responses[s] = impulse_response(model, s, horizon)
        resp = responses[s]
        rows = np.arange(offset, horizon + 1)
        theta_re[rows, k] = resp[rows - offset, roles.r]
        theta_ye[rows, k] = resp[rows - offset, roles.y]
    return ImpulseResponseSet(horizon, theta_yx, d_po, theta_re, theta_ye, selection)


def irf_set_from_responses(policy_response_r, policy_response_y,
                           driver_response_y=None, driver_response_r=None) -> ImpulseResponseSet:
    """Period-by-period impulse-response set from estimated response paths.

    Takes the policy variable's and the outcome's responses to the scalar
    policy shock (and optionally the outcome/policy responses to the shock
    of interest) and assembles the lower-triangular Toeplitz response
    matrices the closed-form counterfactuals consume.  This is how a set is
    built from estimated rather than model-implied responses.
    """
    r_resp = np.asarray(policy_response_r, dtype=float).reshape(-1)
    y_resp = np.asarray(policy_response_y, dtype=float).reshape(-1)
    if r_resp.size != y_resp.size or r_resp.size < 1:
        raise ShapeError("policy and outcome responses must share length H+1")
    horizon = r_resp.size - 1
    theta_re = np.zeros((horizon + 1, horizon + 1))
    theta_ye = np.zeros((horizon + 1, horizon + 1))
    for j in range(horizon + 1):
        theta_re[j:, j] = r_resp[: horizon + 1 - j]
        theta_ye[j:, j] = y_resp[: horizon + 1 - j]
    zeros = np.zeros(horizon + 1)
    theta_yx = zeros if driver_response_y is None else np.asarray(driver_response_y, dtype=float).reshape(-1)
    d_po = zeros if driver_response_r is None else np.asarray(driver_response_r, dtype=float).reshape(-1)
    if theta_yx.size != horizon + 1 or d_po.size != horizon + 1:
        raise ShapeError("driver responses must share length H+1")
    return ImpulseResponseSet(horizon, theta_yx, d_po, theta_re, theta_ye,
                              SelectedShockSpec.period_by_period(0, horizon))


def pinv(a, rtol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD with a relative cutoff.

    Singular values are kept iff sigma_i > rtol * sigma_max, with the default
    rtol = max(m, n) * machine epsilon.  Satisfies the four Penrose
    conditions to numerical tolerance for any real matrix, including
    rank-deficient ones.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError("pinv expects a matrix")
    if not np.all(np.isfinite(a)):
        raise ShapeError("pinv input must be finite")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if rtol is None:
        rtol = max(a.shape) * np.finfo(float).eps
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rtol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def numerical_rank(a, rtol: float | None = None) -> int:
    """Rank by the same singular-value cutoff as :func:`pinv`."""
    a = np.asarray(a, dtype=float)
    s = np.linalg.svd(a, compute_uv=False)
    if rtol is None:
        rtol = max(a.shape) * np.finfo(float).eps
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """Permutation K with K vec(A) = vec(A') for any m x n matrix A.

    Returned with integer entries; K'K = I holds exactly.
    """
    if m < 1 or n < 1:
        raise ShapeError("commutation matrix requires m, n >= 1")
    k = np.zeros((m * n, m * n), dtype=int)
    i, j = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    k[(j + i * n).ravel(), (i + j * m).ravel()] = 1
    return k


def selection_matrix(h: int, horizon: int) -> np.ndarray:
    """S_h = [I_{h+1}, 0]: picks the first h+1 entries of an (H+1)-vector."""
    if h < 0 or h > horizon:
        raise ShapeError(f"need 0 <= h <= H, got h={h}, H={horizon}")
    return np.hstack([np.eye(h + 1), np.zeros((h + 1, horizon - h))])
