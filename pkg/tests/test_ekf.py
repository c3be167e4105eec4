import numpy as np
import pytest

from unislam.equivalence import equiv_check
from unislam.estimators.ekf import (EkfBelief, ekf_feature_augment_classical, ekf_feature_augment_opt,
                                    ekf_feature_update_classical, ekf_feature_update_opt,
                                    ekf_propagate_classical, ekf_propagate_opt, ekf_run)
from unislam.estimators.models import BodyFrame, PlanarModel

from conftest import planar_setup

import oracles

# frozen from oracles.kalman_update(0, 1, 1, 1, innovation=2): mean +1, variance 1/2
SCALAR_SHIFT, SCALAR_VAR = 1.0, 0.5


def test_augment_new_block_is_identity_plus_noise():
    Sv = np.array([[0.04, 0.01], [0.01, 0.09]])
    model = PlanarModel(Sigma_v=Sv)
    b = EkfBelief([1.0, 2.0, 0.3], np.eye(3))
    for aug in (ekf_feature_augment_classical, ekf_feature_augment_opt):
        out = aug(b, [(4, [0.5, -1.0])], model)
        np.testing.assert_allclose(out.cov[3:, 3:], np.eye(2) + Sv, atol=1e-12)
        np.testing.assert_allclose(out.cov[3:, :3], np.hstack([np.eye(2), np.zeros((2, 1))]), atol=1e-12)
        np.testing.assert_allclose(out.feature(4), [1.5, 1.0], atol=1e-14)


def test_augment_noise_free_limit_is_pure_pose_uncertainty():
    model = PlanarModel(Sigma_v=np.zeros((2, 2)))
    S = np.array([[0.3, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, 0.1]])
    out = ekf_feature_augment_classical(EkfBelief([0, 0, 0], S), [(0, [1.0, 1.0])], model)
    Lx = np.hstack([np.eye(2), np.zeros((2, 1))])
    np.testing.assert_allclose(out.cov[3:, 3:], Lx @ S @ Lx.T, atol=1e-15)


def test_scalar_kalman_example():
    # the difference y = f1 - x1 has variance 0.5 + 0.5 = 1 and is observed with unit noise
    model = PlanarModel(Sigma_v=np.eye(2))
    S = np.diag([0.5, 0.5, 1.0, 0.5, 0.5])
    b = EkfBelief([0.0, 0.0, 0.0, 3.0, 4.0], S, [9])
    z = np.array([3.0 + 2.0, 4.0])
    e = np.array([-1.0, 0.0, 0.0, 1.0, 0.0])
    for update in (ekf_feature_update_classical, ekf_feature_update_opt):
        out = update(b, [(9, z)], model)
        assert e @ out.mean - e @ b.mean == pytest.approx(SCALAR_SHIFT, abs=1e-12)
        assert e @ out.cov @ e == pytest.approx(SCALAR_VAR, abs=1e-12)


def test_update_matches_textbook_kalman():
    rng = np.random.default_rng(0)
    model = PlanarModel(Sigma_v=np.diag([0.02, 0.03]))
    A = rng.normal(size=(7, 7))
    b = EkfBelief(rng.normal(size=7), A @ A.T / 7 + 0.1 * np.eye(7), [1, 2])
    z = [(1, rng.normal(size=2)), (2, rng.normal(size=2))]
    H = np.zeros((4, 7))
    H[0:2, 0:2] = H[2:4, 0:2] = -np.eye(2)
    H[0:2, 3:5] = H[2:4, 5:7] = np.eye(2)
    innov = np.concatenate([zz - (b.feature(f) - b.pose[:2]) for f, zz in z])
    mu, P = oracles.kalman_update(b.mean, b.cov, H, np.kron(np.eye(2), model.Sigma_v), innov)
    out = ekf_feature_update_classical(b, z, model)
    np.testing.assert_allclose(out.mean, mu, atol=1e-12)
    np.testing.assert_allclose(out.cov, P, atol=1e-12)


def test_zero_innovation_keeps_mean_and_shrinks_covariance():
    model = PlanarModel(measurement=BodyFrame())
    b = EkfBelief([0.2, -0.1, 0.4, 2.0, 1.0], np.diag([0.1, 0.1, 0.05, 0.2, 0.2]), [0])
    z = model.measurement.h(b.pose, b.feature(0))
    out = ekf_feature_update_classical(b, [(0, z)], model)
    np.testing.assert_allclose(out.mean, b.mean, atol=1e-14)
    assert np.linalg.eigvalsh(b.cov - out.cov).min() >= -1e-10
    assert np.trace(out.cov) < np.trace(b.cov)


def test_propagation_scalar_example():
    # heading variance 1 maps into x1 with slope 2 (v dt = 2 heading south); plus unit noise
    model = PlanarModel(dt=0.1, Sigma_w=np.diag([1.0, 0.0, 0.0]))
    b = EkfBelief([0.0, 0.0, -np.pi / 2], np.diag([0.0, 0.0, 1.0]))
    out = ekf_propagate_classical(b, (20.0, 0.0), model)
    assert out.cov[0, 0] == pytest.approx(5.0, abs=1e-12)


def test_identity_dynamics_without_noise_changes_nothing():
    model = PlanarModel(Sigma_w=np.zeros((3, 3)))
    S = np.diag([0.1, 0.2, 0.3, 0.4, 0.5])
    b = EkfBelief([1.0, 2.0, 0.1, 4.0, 5.0], S, [3])
    out = ekf_propagate_classical(b, (0.0, 0.0), model)
    np.testing.assert_array_equal(out.mean, b.mean)
    np.testing.assert_allclose(out.cov, S, atol=1e-15)


def test_propagation_leaves_features_untouched():
    model = PlanarModel()
    rng = np.random.default_rng(1)
    A = rng.normal(size=(7, 7))
    b = EkfBelief(rng.normal(size=7), A @ A.T + np.eye(7), [0, 1])
    for prop in (ekf_propagate_classical, ekf_propagate_opt):
        out = prop(b, (1.0, 0.3), model)
        np.testing.assert_allclose(out.mean[3:], b.mean[3:], atol=1e-12)
        np.testing.assert_allclose(out.cov[3:, 3:], b.cov[3:, 3:], atol=1e-10)


@pytest.mark.parametrize("kind", ["ekf_aug", "ekf_update", "ekf_prop"])
def test_classical_and_optimization_forms_agree(kind):
    rep = equiv_check(kind, trials=25, seed=5)
    assert rep.max_mean <= 1e-8
    assert rep.max_cov <= 1e-7


def test_noise_free_run_tracks_ground_truth(planar_clean):
    model, frames, mu0, S0 = planar_setup(planar_clean)
    for iterated in (False, True):
        beliefs = ekf_run(frames, model, mu0, S0, iterated=iterated)
        est = np.array([b.pose for b in beliefs])
        np.testing.assert_allclose(est, planar_clean.gt, atol=1e-8)


def test_run_is_bit_reproducible(planar_noisy):
    model, frames, mu0, S0 = planar_setup(planar_noisy)
    a = ekf_run(frames, model, mu0, S0)
    b = ekf_run(frames, model, mu0, S0)
    assert all(np.array_equal(x.mean, y.mean) and np.array_equal(x.cov, y.cov) for x, y in zip(a, b))


def test_classical_run_matches_optimization_run(planar_noisy):
    model, frames, mu0, S0 = planar_setup(planar_noisy)
    a = ekf_run(frames, model, mu0, S0)
    b = ekf_run(frames, model, mu0, S0, classical=True)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x.mean, y.mean, atol=1e-8)


def test_covariance_stays_symmetric_psd(planar_noisy):
    model, frames, mu0, S0 = planar_setup(planar_noisy)
    for b in ekf_run(frames, model, mu0, S0):
        assert np.allclose(b.cov, b.cov.T, atol=1e-10)
        assert np.linalg.eigvalsh(b.cov).min() >= -1e-10


def test_belief_dimension_is_checked():
    with pytest.raises(ValueError):
        EkfBelief(np.zeros(4), np.eye(4), [])
