import numpy as np
import pytest

from unislam.estimators.models import PlanarModel, StereoMeasurement, pose3
from unislam.estimators.msckf import PlanarMsckfProblem
from unislam.estimators.triangulation import TriangulationError, triangulate_feature
from unislam.manifold import Euclidean, quat_exp

PLANAR = PlanarMsckfProblem(PlanarModel()).measurement


def test_linear_model_gives_the_average_back_projection():
    # back-projections (0,0)+(2.0,1.0) and (1,0)+(1.2,0.9), averaged by hand
    poses = [Euclidean([0.0, 0.0, 0.0]), Euclidean([1.0, 0.0, 0.0])]
    zs = [np.array([2.0, 1.0]), np.array([1.2, 0.9])]
    tri = triangulate_feature(poses, zs, PLANAR, np.eye(2))
    np.testing.assert_allclose(tri.point, [2.1, 0.95], atol=1e-14)


def test_exact_planar_observations():
    rng = np.random.default_rng(0)
    f = np.array([3.0, -2.0])
    poses = [Euclidean(rng.normal(size=3)) for _ in range(4)]
    zs = [PLANAR.h_point(p, Euclidean(f)) for p in poses]
    np.testing.assert_allclose(triangulate_feature(poses, zs, PLANAR, 0.01 * np.eye(2)).point, f, atol=1e-8)


def test_exact_stereo_observations():
    rng = np.random.default_rng(1)
    meas = StereoMeasurement()
    f = np.array([0.5, -0.3, 6.0])
    for _ in range(20):
        poses = [pose3(quat_exp(rng.normal(size=3) * 0.05), rng.normal(size=3) * 0.3) for _ in range(3)]
        zs = [meas.h_point(p, Euclidean(f)) for p in poses]
        tri = triangulate_feature(poses, zs, meas, 0.05**2 * np.eye(3))
        np.testing.assert_allclose(tri.point, f, atol=1e-8)
        assert tri.iterations <= 10


def test_single_observation_is_rejected():
    with pytest.raises(TriangulationError):
        triangulate_feature([Euclidean(np.zeros(3))], [np.ones(2)], PLANAR, np.eye(2))


def test_coincident_poses_are_rejected():
    p = Euclidean([1.0, 1.0, 0.0])
    with pytest.raises(TriangulationError):
        triangulate_feature([p, p], [np.ones(2), np.ones(2)], PLANAR, np.eye(2))


def test_inconsistent_sightings_fail_the_residual_check():
    poses = [Euclidean([0.0, 0.0, 0.0]), Euclidean([1.0, 0.0, 0.0])]
    zs = [np.array([2.0, 1.0]), np.array([-5.0, 7.0])]
    with pytest.raises(TriangulationError):
        triangulate_feature(poses, zs, PLANAR, 0.01 * np.eye(2), max_rms=3.0)
