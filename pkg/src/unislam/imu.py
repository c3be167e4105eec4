"""IMU kinematics: nominal integration, error-state discretization and preintegration.

Error-state coordinates are ordered (dtheta, dv, dbg, dba, dr), with the
rotation perturbed on the right: R = R_hat Exp(dtheta).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .manifold import Euclidean, Product, Quat, jacobian_right, quat_mul, quat_exp, skew, so3_exp

GRAVITY = np.array([0.0, 0.0, -9.81])
D_IMU = 15


class TimestampError(ValueError):
    pass


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Continuous-time densities (variance per second) of the four noise sources."""

    gyro: float = 1.7e-4 ** 2
    accel: float = 2.0e-3 ** 2
    gyro_bias: float = 1.9e-5 ** 2
    accel_bias: float = 3.0e-3 ** 2

    def __post_init__(self):
        if min(self.gyro, self.accel, self.gyro_bias, self.accel_bias) < 0:
            raise ValueError("noise densities must be nonnegative")

    @property
    def K(self):
        return np.diag(np.repeat([self.gyro, self.accel, self.gyro_bias, self.accel_bias], 3))


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega: np.ndarray
    accel: np.ndarray


def as_rows(samples):
    """Accept ImuSample lists or (N, 7) arrays of t, wx, wy, wz, ax, ay, az."""
    if isinstance(samples, np.ndarray):
        rows = np.atleast_2d(samples).astype(float)
    else:
        rows = np.array([[s.t, *s.omega, *s.accel] for s in samples], dtype=float).reshape(-1, 7)
    if rows.shape[0] == 0:
        raise ValueError("need at least one IMU sample")
    if np.any(np.diff(rows[:, 0]) <= 0):
        raise TimestampError("IMU timestamps must be strictly increasing")
    return rows


def _intervals(rows, t1):
    t = rows[:, 0]
    if t1 is None:
        if len(t) < 2:
            raise ValueError("a single sample needs an explicit end time")
        ends = t[1:]
        rows = rows[:-1]
    else:
        if t1 <= t[-1]:
            raise TimestampError("end time must follow the last sample")
        ends = np.append(t[1:], t1)
    return rows, ends - rows[:, 0]


# --- IMU state ------------------------------------------------------------------

def imu_point(q, v, bg, ba, r):
    return Product((Quat(q), Euclidean(v), Euclidean(bg), Euclidean(ba), Euclidean(r)))


def unpack(x: Product):
    q, v, bg, ba, r = x.parts
    return q, v.value, bg.value, ba.value, r.value


# --- continuous dynamics -------------------------------------------------------

class ImuDynamics:
    """Strapdown kinematics driven by bias-corrected gyro and accelerometer."""

    dim = D_IMU

    def __init__(self, gravity=GRAVITY):
        self.gravity = np.asarray(gravity, dtype=float)

    def integrate(self, x, u, dt, substeps=1):
        q, v, bg, ba, r = unpack(x)
        w = np.asarray(u[:3]) - bg
        a = np.asarray(u[3:6]) - ba
        R0 = q.rotation
        h = dt / substeps
        qq = q.q
        for _ in range(substeps):
            Rh = R0 @ so3_exp(0.5 * h * w)
            R1 = R0 @ so3_exp(h * w)
            acc0 = R0 @ a + self.gravity
            acc_m = Rh @ a + self.gravity
            acc1 = R1 @ a + self.gravity
            # RK4 on (v, r); the rotation path is exact for a held rate
            k1v, k1r = acc0, v
            k2v, k2r = acc_m, v + 0.5 * h * k1v
            k3v, k3r = acc_m, v + 0.5 * h * k2v
            k4v, k4r = acc1, v + h * k3v
            v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
            r = r + h / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
            qq = quat_mul(qq, quat_exp(h * w))
            R0 = Quat(qq).rotation
        return imu_point(qq, v, bg, ba, r)

    def A(self, x, u):
        q, v, bg, ba, r = unpack(x)
        w = np.asarray(u[:3]) - bg
        a = np.asarray(u[3:6]) - ba
        R = q.rotation
        A = np.zeros((15, 15))
        A[0:3, 0:3] = -skew(w)
        A[0:3, 6:9] = -np.eye(3)
        A[3:6, 0:3] = -R @ skew(a)
        A[3:6, 9:12] = -R
        A[12:15, 3:6] = np.eye(3)
        return A

    def B(self, x, u):
        R = unpack(x)[0].rotation
        B = np.zeros((15, 12))
        B[0:3, 0:3] = -np.eye(3)
        B[3:6, 3:6] = -R
        B[6:9, 6:9] = np.eye(3)
        B[9:12, 9:12] = np.eye(3)
        return B

    def K(self, noise: ImuNoiseSpec):
        return noise.K


class LinearDynamics:
    """x' = A x + B w, for checking the discretization against closed forms."""

    def __init__(self, A, B=None, K=None):
        self._A = np.asarray(A, dtype=float)
        n = self._A.shape[0]
        self._B = np.eye(n) if B is None else np.asarray(B, dtype=float)
        self._K = np.eye(self._B.shape[1]) if K is None else np.asarray(K, dtype=float)
        self.dim = n

    def integrate(self, x, u, dt, substeps=1):
        return Euclidean(scipy.linalg.expm(self._A * dt) @ x.value)

    def A(self, x, u):
        return self._A

    def B(self, x, u):
        return self._B

    def K(self, noise):
        return self._K


@dataclass
class DiscreteTransition:
    x0: object
    x1: object
    Phi: np.ndarray
    Sigma_w: np.ndarray
    g_hat: Callable

    @property
    def G(self):
        return self.Phi


def discretize(g_ct, x0, samples, noise=None, t1=None, substeps=1):
    """Integrate the nominal state and accumulate Phi and Sigma_w sample by sample.

    Each sample is held over the interval to the next sample (or to ``t1``).
    Per interval, Phi_k = expm(A dt), so linear systems are reproduced exactly;
    the process covariance follows Sigma <- Phi_k Sigma Phi_k^T + B K B^T dt.
    """
    rows, dts = _intervals(as_rows(samples), t1)
    K = g_ct.K(noise if noise is not None else ImuNoiseSpec())
    n = g_ct.dim
    Phi = np.eye(n)
    Sigma = np.zeros((n, n))
    x = x0
    for row, dt in zip(rows, dts):
        u = row[1:]
        A = g_ct.A(x, u)
        B = g_ct.B(x, u)
        Pk = scipy.linalg.expm(A * dt)
        Phi = Pk @ Phi
        Sigma = Pk @ Sigma @ Pk.T + B @ K @ B.T * dt
        x = g_ct.integrate(x, u, dt, substeps)

    def g_hat(start):
        y = start
        for row, dt in zip(rows, dts):
            y = g_ct.integrate(y, row[1:], dt, substeps)
        return y

    return DiscreteTransition(x0, x, Phi, 0.5 * (Sigma + Sigma.T), g_hat)


# --- preintegration -------------------------------------------------------------

def _gamma2(phi):
    """sum_n phi^n / (n+2)! for the hat matrix of phi."""
    t = float(np.linalg.norm(phi))
    W = skew(phi)
    if t < 1e-6:
        return 0.5 * np.eye(3) + W / 6.0 + (W @ W) / 24.0
    return (0.5 * np.eye(3) + (t - np.sin(t)) / t**3 * W
            + (t * t / 2 + np.cos(t) - 1.0) / t**4 * (W @ W))


@dataclass
class Preintegrated:
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    dt: float
    cov: np.ndarray
    bias_g: np.ndarray
    bias_a: np.ndarray

    def compose(self, other: "Preintegrated") -> "Preintegrated":
        """This interval followed by ``other``. Covariances are combined to first order."""
        A = np.eye(9)
        A[0:3, 0:3] = other.dR.T
        A[3:6, 0:3] = -self.dR @ skew(other.dv)
        A[6:9, 0:3] = -self.dR @ skew(other.dp)
        A[6:9, 3:6] = other.dt * np.eye(3)
        Bm = np.zeros((9, 9))
        Bm[0:3, 0:3] = np.eye(3)
        Bm[3:6, 3:6] = self.dR
        Bm[6:9, 6:9] = self.dR
        cov = A @ self.cov @ A.T + Bm @ other.cov @ Bm.T
        return Preintegrated(self.dR @ other.dR, self.dv + self.dR @ other.dv,
                             self.dp + self.dv * other.dt + self.dR @ other.dp,
                             self.dt + other.dt, 0.5 * (cov + cov.T), self.bias_g, self.bias_a)

    def predict(self, R, v, p, gravity=GRAVITY):
        T = self.dt
        return (R @ self.dR, v + gravity * T + R @ self.dv,
                p + v * T + 0.5 * gravity * T * T + R @ self.dp)


def preintegrate(samples, bias_g=None, bias_a=None, noise=None, t1=None):
    """Relative rotation, velocity and position in the start frame, gravity-free.

    Inputs are held constant between samples and integrated in closed form,
    so splitting an interval and composing the parts is exact.
    """
    rows, dts = _intervals(as_rows(samples), t1)
    bg = np.zeros(3) if bias_g is None else np.asarray(bias_g, dtype=float)
    ba = np.zeros(3) if bias_a is None else np.asarray(bias_a, dtype=float)
    noise = noise or ImuNoiseSpec()
    dR, dv, dp = np.eye(3), np.zeros(3), np.zeros(3)
    cov = np.zeros((9, 9))
    T = 0.0
    for row, dt in zip(rows, dts):
        w = row[1:4] - bg
        a = row[4:7] - ba
        phi = w * dt
        J1 = jacobian_right(-phi)       # left Jacobian: int_0^1 Exp(s phi) ds
        G2 = _gamma2(phi)
        A = np.eye(9)
        A[0:3, 0:3] = so3_exp(phi).T
        A[3:6, 0:3] = -dR @ skew(J1 @ a) * dt
        A[6:9, 0:3] = -dR @ skew(G2 @ a) * dt * dt
        A[6:9, 3:6] = dt * np.eye(3)
        B = np.zeros((9, 6))
        B[0:3, 0:3] = jacobian_right(phi) * dt
        B[3:6, 3:6] = dR * dt
        B[6:9, 3:6] = 0.5 * dR * dt * dt
        Q = np.diag(np.repeat([noise.gyro / dt, noise.accel / dt], 3))
        cov = A @ cov @ A.T + B @ Q @ B.T
        dp = dp + dv * dt + dR @ G2 @ a * dt * dt
        dv = dv + dR @ J1 @ a * dt
        dR = dR @ so3_exp(phi)
        T += dt
    return Preintegrated(dR, dv, dp, T, 0.5 * (cov + cov.T), bg, ba)


def imu_measurement_model(R, omega_body, accel_world, gravity=GRAVITY, bias_g=None, bias_a=None,
                          eta_g=None, eta_a=None):
    """Gyro and accelerometer readings for a body with attitude R (body to world)."""
    z3 = np.zeros(3)
    wm = np.asarray(omega_body, dtype=float) + (z3 if bias_g is None else bias_g) + (z3 if eta_g is None else eta_g)
    am = (R.T @ (np.asarray(accel_world, dtype=float) - gravity)
          + (z3 if bias_a is None else bias_a) + (z3 if eta_a is None else eta_a))
    return wm, am
