import numpy as np
import pytest

from macrocf.errors import ShapeError
from macrocf.svma import (
    SelectedShockSpec,
    ShockRoles,
    SvmaModel,
    VariableRoles,
    build_irf_set,
    commutation_matrix,
    draw_shocks,
    impulse_response,
    pinv,
    selection_matrix,
    simulate_svma,
)

from helpers import ROLES, SHOCKS, random_svma


def scalar_ma1():
    roles = VariableRoles(x=0, y=1, r=2)
    theta = np.zeros((2, 3, 3))
    theta[0] = np.eye(3)
    theta[1] = 0.5 * np.eye(3)
    return SvmaModel(theta, np.eye(3), np.zeros(3), roles, ShockRoles(x=0, policy=(2,)))


class TestModelValidation:
    def test_rejects_nondiagonal_covariance(self):
        cov = np.eye(3)
        cov[0, 1] = 0.2
        with pytest.raises(ShapeError):
            SvmaModel(np.eye(3)[None], cov, np.zeros(3), ROLES, SHOCKS)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ShapeError):
            SvmaModel(np.eye(3)[None], np.diag([1.0, 0.0, 1.0]), np.zeros(3), ROLES, SHOCKS)

    def test_rejects_duplicate_roles(self):
        with pytest.raises(ShapeError):
            SvmaModel(np.eye(3)[None], np.eye(3), np.zeros(3),
                      VariableRoles(x=0, y=0, r=2), SHOCKS)

    def test_allows_more_shocks_than_observables(self):
        theta = np.zeros((1, 3, 5))
        theta[0, :, :3] = np.eye(3)
        m = SvmaModel(theta, np.eye(5), np.zeros(3), ROLES, ShockRoles(x=0, policy=(2, 3)))
        assert m.n_shock == 5 and m.n_obs == 3


class TestSimulate:
    def test_identity_impact_returns_shocks(self):
        m = SvmaModel(np.eye(3)[None], np.eye(3), np.zeros(3), ROLES, SHOCKS)
        rng = np.random.default_rng(0)
        eps = rng.standard_normal((20, 3))
        np.testing.assert_array_equal(simulate_svma(m, eps), eps)

    def test_zero_shocks_return_initial_condition(self):
        m = random_svma(np.random.default_rng(1))
        m2 = SvmaModel(m.ma_coeffs, m.shock_cov, [1.0, -2.0, 3.0], ROLES, SHOCKS)
        w = simulate_svma(m2, np.zeros((6, 3)))
        np.testing.assert_allclose(w, np.tile([1.0, -2.0, 3.0], (6, 1)))

    def test_scalar_ma1_hand_unrolled(self):
        m = scalar_ma1()
        eps = np.zeros((2, 3))
        eps[0, 0] = 1.0
        w = simulate_svma(m, eps)
        np.testing.assert_allclose(w[:, 0], [1.0, 0.5])

    def test_dimension_mismatch_rejected(self):
        m = scalar_ma1()
        with pytest.raises(ShapeError):
            simulate_svma(m, np.zeros((4, 2)))

    def test_linearity_with_zero_initial_condition(self):
        m = random_svma(np.random.default_rng(2))
        rng = np.random.default_rng(3)
        e1 = rng.standard_normal((15, 3))
        e2 = rng.standard_normal((15, 3))
        lhs = simulate_svma(m, 2.0 * e1 - 3.0 * e2)
        rhs = 2.0 * simulate_svma(m, e1) - 3.0 * simulate_svma(m, e2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestImpulseResponse:
    def test_identity_model(self):
        m = SvmaModel(np.eye(3)[None], np.eye(3), np.zeros(3), ROLES, SHOCKS)
        resp = impulse_response(m, 1, 4)
        np.testing.assert_array_equal(resp[0], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(resp[1:], np.zeros((4, 3)))

    def test_ma1_responses(self):
        resp = impulse_response(scalar_ma1(), 0, 3)
        np.testing.assert_allclose(resp[:, 0], [1.0, 0.5, 0.0, 0.0])

    def test_matches_two_path_simulation(self):
        rng = np.random.default_rng(4)
        m = random_svma(rng)
        H = 7
        anchor = 3
        base_eps = rng.standard_normal((anchor + H + 1, 3))
        for shock in range(m.n_shock):
            plus = base_eps.copy()
            plus[anchor, shock] += 1.0
            diff = simulate_svma(m, plus) - simulate_svma(m, base_eps)
            np.testing.assert_allclose(diff[anchor:], impulse_response(m, shock, H),
                                       atol=1e-12)

    def test_invalid_shock_index(self):
        with pytest.raises(ShapeError):
            impulse_response(scalar_ma1(), 5, 2)


class TestBuildIrfSet:
    def test_pure_policy_impact_gives_identity(self):
        theta = np.zeros((1, 3, 3))
        theta[0] = np.eye(3)
        m = SvmaModel(theta, np.eye(3), np.zeros(3), ROLES, SHOCKS)
        irf = build_irf_set(m, 4, SelectedShockSpec.period_by_period(2, 4))
        np.testing.assert_array_equal(irf.theta_re, np.eye(5))

    def test_period_by_period_toeplitz(self):
        rho = 0.6
        q = 6
        theta = np.zeros((q + 1, 3, 3))
        for h in range(q + 1):
            theta[h, 2, 2] = rho ** h
            theta[h, 1, 2] = 0.3 * rho ** h
        theta[0, 0, 0] = 1.0
        theta[0, 1, 1] = 1.0
        m = SvmaModel(theta, np.eye(3), np.zeros(3), ROLES, SHOCKS)
        H = 4
        irf = build_irf_set(m, H, SelectedShockSpec.period_by_period(2, H))
        expected = np.zeros((H + 1, H + 1))
        for i in range(H + 1):
            for j in range(i + 1):
                expected[i, j] = rho ** (i - j)
        np.testing.assert_allclose(irf.theta_re, expected)
        assert np.all(np.triu(irf.theta_re, k=1) == 0.0)

    def test_initial_multishock_shape(self):
        theta = np.zeros((2, 3, 4))
        theta[0] = np.eye(3, 4)
        theta[0, 2, 3] = 0.8
        m = SvmaModel(theta, np.eye(4), np.zeros(3), ROLES, ShockRoles(x=0, policy=(2, 3)))
        irf = build_irf_set(m, 3, SelectedShockSpec.initial_date((2, 3)))
        assert irf.theta_re.shape == (4, 2)

    def test_non_policy_selection_rejected(self):
        m = scalar_ma1()
        with pytest.raises(ShapeError):
            build_irf_set(m, 2, SelectedShockSpec.period_by_period(0, 2))

    def test_zero_tail_of_theta_ye_rows(self):
        m = random_svma(np.random.default_rng(5))
        H = 6
        irf = build_irf_set(m, H, SelectedShockSpec.period_by_period(2, H))
        for h in range(H + 1):
            np.testing.assert_array_equal(irf.theta_ye_at(h)[h + 1 :], 0.0)


class TestPinv:
    def test_identity(self):
        np.testing.assert_array_equal(pinv(np.eye(4)), np.eye(4))

    def test_ones_column(self):
        np.testing.assert_allclose(pinv(np.ones((3, 1))), np.full((1, 3), 1 / 3))

    def test_full_column_rank_normal_equations(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((5, 3))
        expected = np.linalg.solve(a.T @ a, a.T)
        np.testing.assert_allclose(pinv(a), expected, atol=1e-10)

    @pytest.mark.parametrize("shape,rank", [((4, 4), 4), ((6, 3), 3), ((3, 6), 3),
                                            ((5, 4), 2), ((4, 7), 3)])
    def test_penrose_conditions(self, shape, rank):
        rng = np.random.default_rng(hash(shape) % 2**32)
        a = (rng.standard_normal((shape[0], rank)) @ rng.standard_normal((rank, shape[1])))
        ap = pinv(a)
        scale = np.linalg.norm(a)
        assert np.linalg.norm(a @ ap @ a - a) <= 1e-10 * scale
        assert np.linalg.norm(ap @ a @ ap - ap) <= 1e-10 * np.linalg.norm(ap)
        assert np.linalg.norm((a @ ap).T - a @ ap) <= 1e-10 * max(1.0, np.linalg.norm(a @ ap))
        assert np.linalg.norm((ap @ a).T - ap @ a) <= 1e-10 * max(1.0, np.linalg.norm(ap @ a))

    def test_square_nonsingular_equals_inverse(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
        np.testing.assert_allclose(pinv(a), np.linalg.inv(a), atol=1e-10)

    def test_nonfinite_rejected(self):
        with pytest.raises(ShapeError):
            pinv(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestCommutationAndSelection:
    def test_k11(self):
        np.testing.assert_array_equal(commutation_matrix(1, 1), [[1]])

    def test_k22_swaps_middle_entries(self):
        k = commutation_matrix(2, 2)
        expected = np.eye(4, dtype=int)[[0, 2, 1, 3]]
        np.testing.assert_array_equal(k, expected)

    def test_vec_identity_exact(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((3, 4))
        k = commutation_matrix(3, 4)
        np.testing.assert_array_equal(k @ a.flatten(order="F"), a.T.flatten(order="F"))

    def test_orthogonality_exact_in_integers(self):
        for m, n in [(2, 3), (4, 1), (3, 3)]:
            k = commutation_matrix(m, n)
            np.testing.assert_array_equal(k.T @ k, np.eye(m * n, dtype=int))

    def test_selection_matrix_extracts_prefix(self):
        np.testing.assert_array_equal(selection_matrix(0, 2) @ np.array([3.0, 5.0, 7.0]), [3.0])
        np.testing.assert_array_equal(selection_matrix(2, 2), np.eye(3))

    def test_selection_matrix_row_orthonormal(self):
        for H in range(7):
            for h in range(H + 1):
                s = selection_matrix(h, H)
                np.testing.assert_array_equal(s @ s.T, np.eye(h + 1))

    def test_selection_out_of_range(self):
        with pytest.raises(ShapeError):
            selection_matrix(3, 2)


def test_draw_shocks_respects_covariance_scale():
    m = SvmaModel(np.eye(3)[None], np.diag([1.0, 4.0, 9.0]), np.zeros(3), ROLES, SHOCKS)
    eps = draw_shocks(m, 40000, np.random.default_rng(9)).values
    np.testing.assert_allclose(eps.std(axis=0), [1.0, 2.0, 3.0], rtol=0.05)
