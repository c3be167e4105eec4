"""Motion and measurement models shared by the estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..manifold import Euclidean, Product, Quat, skew


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _drot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class Unicycle:
    """Exact arc integration of (v, omega) held constant over ``dt``."""

    dt: float

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        v, w = float(u[0]), float(u[1])
        th = x[2]
        dt = self.dt
        if abs(w * dt) < 1e-9:
            # second-order expansion of the arc
            a = v * dt
            dx = a * np.cos(th + 0.5 * w * dt)
            dy = a * np.sin(th + 0.5 * w * dt)
        else:
            dx = v / w * (np.sin(th + w * dt) - np.sin(th))
            dy = v / w * (np.cos(th) - np.cos(th + w * dt))
        return np.array([x[0] + dx, x[1] + dy, th + w * dt])

    def jacobian(self, x, u):
        x = np.asarray(x, dtype=float)
        v, w = float(u[0]), float(u[1])
        th = x[2]
        dt = self.dt
        G = np.eye(3)
        if abs(w * dt) < 1e-9:
            a = v * dt
            G[0, 2] = -a * np.sin(th + 0.5 * w * dt)
            G[1, 2] = a * np.cos(th + 0.5 * w * dt)
        else:
            G[0, 2] = v / w * (np.cos(th + w * dt) - np.cos(th))
            G[1, 2] = v / w * (np.sin(th + w * dt) - np.sin(th))
        return G


class RelativePosition:
    """z = f - x_pos. Linear in both pose and feature."""

    name = "relative"
    dz = 2
    df = 2

    def h(self, x, f):
        return np.asarray(f, dtype=float) - np.asarray(x, dtype=float)[:2]

    _Hx = np.hstack([-np.eye(2), np.zeros((2, 1))])
    _Lx = np.hstack([np.eye(2), np.zeros((2, 1))])
    _I = np.eye(2)

    def H(self, x, f):
        return self._Hx, self._I

    def ell(self, x, z):
        return np.asarray(x, dtype=float)[:2] + np.asarray(z, dtype=float)

    def L(self, x, z):
        return self._Lx, self._I


class BodyFrame:
    """z = R(theta)^T (f - x_pos), the landmark seen from the robot."""

    name = "body"
    dz = 2
    df = 2

    def h(self, x, f):
        x = np.asarray(x, dtype=float)
        return _rot2(x[2]).T @ (np.asarray(f, dtype=float) - x[:2])

    def H(self, x, f):
        x = np.asarray(x, dtype=float)
        Rt = _rot2(x[2]).T
        d = np.asarray(f, dtype=float) - x[:2]
        Hx = np.hstack([-Rt, (_drot2(x[2]).T @ d)[:, None]])
        return Hx, Rt

    def ell(self, x, z):
        x = np.asarray(x, dtype=float)
        return x[:2] + _rot2(x[2]) @ np.asarray(z, dtype=float)

    def L(self, x, z):
        x = np.asarray(x, dtype=float)
        Lx = np.hstack([np.eye(2), (_drot2(x[2]) @ np.asarray(z, dtype=float))[:, None]])
        return Lx, _rot2(x[2])


PLANAR_MEASUREMENTS = {"relative": RelativePosition, "body": BodyFrame}


@dataclass
class PlanarModel:
    """Unicycle motion, a planar landmark model and their noise levels."""

    dt: float = 0.1
    measurement: object = field(default_factory=RelativePosition)
    Sigma_w: np.ndarray = field(default_factory=lambda: np.diag([0.02**2, 0.02**2, 0.005**2]))
    Sigma_v: np.ndarray = field(default_factory=lambda: 0.1**2 * np.eye(2))

    @property
    def motion(self):
        return Unicycle(self.dt)

    # manifold-valued wrappers used by residual blocks
    def g_point(self, u):
        m = self.motion
        return lambda x: Euclidean(m.step(x.value, u))

    def G_point(self, u):
        m = self.motion
        return lambda x: m.jacobian(x.value, u)

    def h_point(self, x, f):
        return self.measurement.h(x.value, f.value)

    def H_point(self, x, f):
        return self.measurement.H(x.value, f.value)


@dataclass(frozen=True)
class StereoCamera:
    """Rectified stereo pair; the left camera sits at the pose origin."""

    fx: float = 458.0
    fy: float = 457.0
    cx: float = 367.0
    cy: float = 248.0
    baseline: float = 0.11
    width: int = 752
    height: int = 480

    def project(self, p_c):
        X, Y, Z = p_c
        return np.array([self.fx * X / Z + self.cx,
                         self.fx * (X - self.baseline) / Z + self.cx,
                         self.fy * Y / Z + self.cy])

    def project_jacobian(self, p_c):
        X, Y, Z = p_c
        iz = 1.0 / Z
        return np.array([[self.fx * iz, 0.0, -self.fx * X * iz * iz],
                         [self.fx * iz, 0.0, -self.fx * (X - self.baseline) * iz * iz],
                         [0.0, self.fy * iz, -self.fy * Y * iz * iz]])

    def backproject(self, z):
        uL, uR, v = z
        d = uL - uR
        Z = self.fx * self.baseline / d
        return np.array([(uL - self.cx) * Z / self.fx, (v - self.cy) * Z / self.fy, Z])


def camera_point(pose: Product, f):
    """Landmark in the camera frame: R_WC^T (f - r_WC)."""
    R = pose[0].rotation
    return R.T @ (np.asarray(f, dtype=float) - pose[1].value)


class StereoMeasurement:
    """Stereo pixel triple (u_L, u_R, v) of a world landmark."""

    name = "stereo"
    dz = 3
    df = 3

    def __init__(self, camera: StereoCamera | None = None):
        self.camera = camera or StereoCamera()

    def h_point(self, pose, f):
        return self.camera.project(camera_point(pose, f.value))

    def H_point(self, pose, f):
        R = pose[0].rotation
        p = camera_point(pose, f.value)
        P = self.camera.project_jacobian(p)
        # right perturbation of R_WC: p -> p + [p]x dtheta
        Hx = P @ np.hstack([skew(p), -R.T])
        return Hx, P @ R.T

    def ell(self, pose, z):
        return pose[0].rotation @ self.camera.backproject(z) + pose[1].value


def pose3(q, r):
    return Product((Quat(q), Euclidean(r)))
