"""A Kalman update and one Gauss-Newton step on the same cost give the same answer.

Builds a small belief over a pose and two landmarks, feeds it the same
pair of sightings through both code paths, and prints how far apart the
results land.
"""

import numpy as np

from unislam.estimators.ekf import EkfBelief, ekf_feature_update_classical, ekf_feature_update_opt
from unislam.estimators.models import BodyFrame, PlanarModel

rng = np.random.default_rng(0)
model = PlanarModel(measurement=BodyFrame(), Sigma_v=np.diag([0.01, 0.02]))

A = rng.normal(size=(7, 7))
belief = EkfBelief([0.5, -0.2, 0.3, 3.0, 1.0, 2.0, -1.5], A @ A.T / 7 + 0.05 * np.eye(7), [10, 11])
z = [(f, model.measurement.h(belief.pose, belief.feature(f)) + rng.normal(size=2) * 0.1) for f in (10, 11)]

kalman = ekf_feature_update_classical(belief, z, model)
gauss_newton = ekf_feature_update_opt(belief, z, model)

print("pose before     ", np.round(belief.pose, 4))
print("pose after (KF) ", np.round(kalman.pose, 4))
print("pose after (GN) ", np.round(gauss_newton.pose, 4))
print(f"mean gap        {np.abs(kalman.mean - gauss_newton.mean).max():.2e}")
print(f"covariance gap  {np.abs(kalman.cov - gauss_newton.cov).max():.2e}")
