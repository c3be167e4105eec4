import numpy as np
import pytest

from unislam.manifold import (Euclidean, ManifoldDomainError, Product, Quat, Rot, StructureError,
                              boxminus, boxplus, inv_jacobian_left, inv_jacobian_right, quat_exp,
                              quat_log, quat_mul, quat_normalize, quat_to_rot, rot_to_quat,
                              so3_exp, so3_log)

import oracles

# frozen from oracles.quat_closed_form((0, 0, pi/2)) and oracles.rodrigues((0, 0, pi/2))
QUARTER_TURN_Q = np.array([0.7071067811865476, 0.0, 0.0, 0.7071067811865476])
QUARTER_TURN_R = np.array([[0.0, -1.0, 0.0],
                           [1.0, 0.0, 0.0],
                           [0.0, 0.0, 1.0]])


def _ball(rng, radius):
    w = rng.normal(size=3)
    return w / np.linalg.norm(w) * rng.uniform(0, radius)


def test_quat_exp_identity():
    assert np.array_equal(quat_exp(np.zeros(3)), [1.0, 0.0, 0.0, 0.0])


def test_quat_exp_quarter_turn():
    np.testing.assert_allclose(quat_exp([0, 0, np.pi / 2]), QUARTER_TURN_Q, atol=1e-15)


def test_quat_log_quarter_turn():
    np.testing.assert_allclose(quat_log(QUARTER_TURN_Q), [0, 0, np.pi / 2], atol=1e-15)


def test_quat_log_double_cover():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = quat_exp(_ball(rng, 3.0))
        np.testing.assert_allclose(quat_log(-q), quat_log(q), atol=1e-12)


@pytest.mark.parametrize("w", [[np.pi, 0, 0], [0, 4.0, 0]])
def test_quat_exp_rejects_outside_chart(w):
    with pytest.raises(ManifoldDomainError):
        quat_exp(w)


def test_quat_log_rejects_half_turn():
    with pytest.raises(ManifoldDomainError):
        quat_log(np.array([0.0, 1.0, 0.0, 0.0]))


def test_small_angle_branch_is_continuous():
    for t in (1e-3, 1e-6, 1e-7, 1e-9):
        w = np.array([t, -2 * t, 0.5 * t])
        np.testing.assert_allclose(quat_exp(w), oracles.quat_closed_form(w), atol=1e-15)
        np.testing.assert_allclose(quat_log(quat_exp(w)), w, atol=1e-18, rtol=1e-9)


def test_exp_log_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(500):
        w = _ball(rng, np.pi - 1e-3)
        np.testing.assert_allclose(quat_log(quat_exp(w)), w, atol=1e-10)
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-10)


def test_so3_exp_matches_rodrigues_and_quaternion():
    rng = np.random.default_rng(3)
    for _ in range(200):
        w = _ball(rng, 3.0)
        np.testing.assert_allclose(so3_exp(w), oracles.rodrigues(w), atol=1e-12)
        np.testing.assert_allclose(quat_to_rot(quat_exp(w)), so3_exp(w), atol=1e-12)


def test_quaternion_product_matches_matrix_product():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p, q = quat_normalize(rng.normal(size=4)), quat_normalize(rng.normal(size=4))
        np.testing.assert_allclose(quat_to_rot(quat_mul(p, q)), quat_to_rot(p) @ quat_to_rot(q), atol=1e-12)
        np.testing.assert_allclose(quat_to_rot(rot_to_quat(quat_to_rot(p))), quat_to_rot(p), atol=1e-12)


def test_rot_boxplus_quarter_turn():
    R = boxplus(Rot(np.eye(3)), [0, 0, np.pi / 2]).R
    np.testing.assert_allclose(R, QUARTER_TURN_R, atol=1e-15)


def test_euclidean_box_operators():
    np.testing.assert_array_equal(boxplus(Euclidean([1, 2]), [3, -1]).value, [4, 1])
    np.testing.assert_array_equal(boxminus(Euclidean([4, 1]), Euclidean([1, 2])), [3, -1])


def _random_point(rng):
    return Product((Quat(quat_normalize(rng.normal(size=4))), Euclidean(rng.normal(size=3)),
                    Rot(so3_exp(_ball(rng, 3.0)))))


def test_zero_perturbation_and_self_difference():
    rng = np.random.default_rng(5)
    x = _random_point(rng)
    np.testing.assert_allclose(boxminus(boxplus(x, np.zeros(9)), x), 0.0, atol=1e-15)
    np.testing.assert_allclose(boxminus(x, x), 0.0, atol=1e-15)


def test_chart_consistency_on_products():
    rng = np.random.default_rng(6)
    for _ in range(300):
        x = _random_point(rng)
        d = np.concatenate([_ball(rng, np.pi / 2), rng.normal(size=3), _ball(rng, np.pi / 2)])
        np.testing.assert_allclose(boxminus(boxplus(x, d), x), d, atol=1e-10)
        y = boxplus(x, d)
        back = boxplus(x, boxminus(y, x))
        np.testing.assert_allclose(back[0].rotation, y[0].rotation, atol=1e-10)
        np.testing.assert_allclose(back[1].value, y[1].value, atol=1e-10)
        np.testing.assert_allclose(back[2].R, y[2].R, atol=1e-10)


def test_dimension_and_structure_errors():
    x = Product((Quat([1, 0, 0, 0]), Euclidean([0, 0])))
    assert x.dim == 5
    with pytest.raises(StructureError):
        boxplus(x, np.zeros(4))
    with pytest.raises(StructureError):
        boxminus(x, Euclidean(np.zeros(5)))


def test_inverse_jacobians_at_zero():
    np.testing.assert_allclose(inv_jacobian_left(np.zeros(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(inv_jacobian_right(np.zeros(3)), np.eye(3), atol=1e-15)


def test_right_is_left_of_negated_angle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        w = _ball(rng, 3.0)
        np.testing.assert_allclose(inv_jacobian_right(w), inv_jacobian_left(-w), atol=1e-14)


def test_inverse_left_jacobian_against_finite_differences():
    rng = np.random.default_rng(8)
    for _ in range(50):
        w = _ball(rng, 2.5)
        np.testing.assert_allclose(inv_jacobian_left(w) @ oracles.left_jacobian_fd(w), np.eye(3), atol=1e-8)


def test_rotation_drift_under_long_composition():
    rng = np.random.default_rng(9)
    q = np.array([1.0, 0, 0, 0])
    R = Rot(np.eye(3))
    steps = rng.normal(size=(20000, 3)) * 0.3
    for w in steps:
        q = quat_mul(q, quat_exp(w))
        R = R.boxplus(w)
    assert abs(np.linalg.norm(q) - 1.0) < 1e-12
    M = R.R
    assert np.linalg.norm(M.T @ M - np.eye(3)) < 1e-10
    assert abs(np.linalg.det(M) - 1.0) < 1e-10
    np.testing.assert_allclose(quat_to_rot(q), M, atol=1e-8)
