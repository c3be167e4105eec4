"""Estimators built from Gauss-Newton and marginalization steps, with closed-form twins."""

from .ekf import (EkfBelief, PlanarFrame, ekf_feature_augment_classical, ekf_feature_augment_opt,
                  ekf_feature_update_classical, ekf_feature_update_opt, ekf_propagate_classical,
                  ekf_propagate_opt, ekf_run)
from .models import (BodyFrame, PlanarModel, RelativePosition, StereoCamera, StereoMeasurement,
                     Unicycle, pose3)
from .msckf import (MsckfBelief, MsckfEstimator, PlanarMsckfProblem, StereoImuProblem, Transition,
                    msckf_drop_poses, msckf_feature_update_classical, msckf_feature_update_opt,
                    msckf_init, msckf_pose_augment, msckf_pose_augment_eps, msckf_propagate_classical,
                    msckf_propagate_opt, msckf_select_sets)
from .schedule import KINDS, EstimatorSchedule, ScheduleError
from .triangulation import TriangulationError, triangulate_feature
from .window import KeyframePolicy, WindowEstimator, keyframe_step, swf_step

__all__ = [name for name in dir() if not name.startswith("_")]
