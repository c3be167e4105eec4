"""Synthetic worlds, trajectories and noisy measurements.

All randomness comes from :class:`Xoshiro256`, seeded through SplitMix64,
so a (seed, config) pair gives the same dataset on any platform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .estimators.models import BodyFrame, RelativePosition, StereoCamera, Unicycle, camera_point, pose3
from .imu import GRAVITY, ImuDynamics, ImuNoiseSpec, imu_point, unpack
from .io import Dataset, save_dataset
from .manifold import rot_to_quat

MASK64 = (1 << 64) - 1

# SplitMix64 increment and output mixers (Steele, Lea, Flood 2014)
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
SPLITMIX_MUL2 = 0x94D049BB133111EB


def splitmix64(state):
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = (state + SPLITMIX_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * SPLITMIX_MUL1) & MASK64
    z = ((z ^ (z >> 27)) * SPLITMIX_MUL2) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 (Blackman, Vigna) with Box-Muller normals."""

    def __init__(self, seed: int):
        sm = int(seed) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s
        self._spare = None

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self, low=0.0, high=1.0):
        """Double in [low, high) from the top 53 bits."""
        return low + (high - low) * ((self.next_u64() >> 11) * 2.0**-53)

    def normal(self):
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()          # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, n):
        return np.array([self.normal() for _ in range(n)])

    def gaussian(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return np.linalg.cholesky(cov) @ self.normals(cov.shape[0])


# --- configuration -------------------------------------------------------------

@dataclass
class SimConfig:
    seed: int = 42
    model: str = "planar2d"
    steps: int = 200
    dt: float = 0.1
    n_landmarks: int = 40
    trajectory: str = "circle"
    speed: float = 1.0
    turns: float = 1.0
    # planar noise (standard deviations)
    sigma_w_xy: float = 0.02
    sigma_w_theta: float = 0.005
    sigma_v: float = 0.1
    max_range: float = 5.0
    measurement: str = "relative"
    # stereo3d
    imu_rate: int = 200
    pixel_sigma: float = 0.05
    min_depth: float = 0.2
    max_depth: float = 20.0
    radius: float = 3.0
    gyro_density: float = 1.7e-4
    accel_density: float = 2.0e-3
    gyro_bias_density: float = 1.9e-5
    accel_bias_density: float = 3.0e-3
    noise_free: bool = False

    @classmethod
    def from_dict(cls, d):
        out = cls()
        types = {f.name: f.type for f in fields(cls)}
        for k, v in d.items():
            if k not in types:
                continue
            t = type(getattr(out, k))
            if t is bool:
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            setattr(out, k, t(v))
        return out

    def to_dict(self):
        return {k: (str(v).lower() if isinstance(v, bool) else v) for k, v in asdict(self).items()}

    @property
    def omega(self):
        if self.trajectory == "circle":
            return 2.0 * math.pi * self.turns / (self.steps * self.dt)
        if self.trajectory == "line":
            return 0.0
        raise ValueError(f"unknown trajectory {self.trajectory!r}")

    @property
    def Sigma_w(self):
        s = 0.0 if self.noise_free else 1.0
        return s * np.diag([self.sigma_w_xy**2, self.sigma_w_xy**2, self.sigma_w_theta**2])

    @property
    def Sigma_v(self):
        return self.sigma_v**2 * np.eye(2)

    @property
    def imu_noise(self):
        return ImuNoiseSpec(self.gyro_density**2, self.accel_density**2,
                            self.gyro_bias_density**2, self.accel_bias_density**2)


# --- planar world --------------------------------------------------------------

def gen_trajectory_2d(steps, dt, controls, x0=(0.0, 0.0, 0.0), rng=None, Sigma_w=None):
    """Poses at t = 0, dt, ..., steps*dt under per-step (v, omega) controls.

    ``controls`` is one (v, omega) pair or a sequence of ``steps`` pairs.
    With ``rng`` and ``Sigma_w`` the poses receive additive process noise.
    """
    u = np.asarray(controls, dtype=float)
    if u.ndim == 1:
        u = np.tile(u, (steps, 1))
    if u.shape != (steps, 2):
        raise ValueError(f"need {steps} control pairs, got {u.shape}")
    motion = Unicycle(dt)
    xs = [np.asarray(x0, dtype=float)]
    for k in range(steps):
        x = motion.step(xs[-1], u[k])
        if rng is not None and Sigma_w is not None and np.any(Sigma_w):
            x = x + rng.gaussian(Sigma_w)
        xs.append(x)
    return np.arange(steps + 1) * dt, np.array(xs), u


def measure_planar(pose, landmark, noise=None, model=None):
    model = model or RelativePosition()
    z = model.h(pose, landmark)
    return z if noise is None else z + noise


def _landmarks_2d(cfg, rng, center, radius):
    pad = cfg.max_range * 0.6
    lo = center - radius - pad
    hi = center + radius + pad
    return np.array([[rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1])]
                     for _ in range(cfg.n_landmarks)])


def _planar_dataset(cfg: SimConfig, rng: Xoshiro256) -> Dataset:
    w = cfg.omega
    u = (cfg.speed, w)
    if cfg.trajectory == "circle":
        radius = cfg.speed / w
        center = np.array([0.0, radius])
    else:
        length = cfg.speed * cfg.steps * cfg.dt
        radius = 0.5 * length
        center = np.array([0.5 * length, 0.0])
        radius = np.array([0.5 * length, cfg.max_range * 0.5])
    lms = _landmarks_2d(cfg, rng, center, radius)
    t, xs, controls = gen_trajectory_2d(cfg.steps, cfg.dt, u, rng=rng, Sigma_w=cfg.Sigma_w)
    meas_model = BodyFrame() if cfg.measurement == "body" else RelativePosition()
    rows_t, rows_f, rows_id, rows_z = [], [], [], []
    for k, x in enumerate(xs):
        for j, f in enumerate(lms):
            if np.linalg.norm(f - x[:2]) > cfg.max_range:
                continue
            z = meas_model.h(x, f)
            if not cfg.noise_free:
                z = z + rng.gaussian(cfg.Sigma_v)
            rows_t.append(t[k])
            rows_f.append(k)
            rows_id.append(j)
            rows_z.append(z)
    odo = np.column_stack([t, np.vstack([controls, [[0.0, 0.0]]])])
    return Dataset("planar2d", cfg.to_dict(), t, xs, np.array(rows_t), np.array(rows_f, dtype=int),
                   np.array(rows_id, dtype=int), np.array(rows_z).reshape(-1, 2), odometry=odo,
                   landmarks=np.column_stack([np.arange(len(lms)), lms]))


# --- stereo + IMU world ---------------------------------------------------------

def measure_stereo(pose, landmark, camera: StereoCamera | None = None, noise=None, min_depth=1e-3):
    """Pixel triple (u_L, u_R, v) of a landmark, or None when it is behind the cameras."""
    camera = camera or StereoCamera()
    p = camera_point(pose, landmark)
    if p[2] <= min_depth:
        return None
    z = camera.project(p)
    return z if noise is None else z + noise


def _visible(camera, p_c, cfg):
    if not cfg.min_depth <= p_c[2] <= cfg.max_depth:
        return False
    z = camera.project(p_c)
    return (0 <= z[1] and z[0] < camera.width and 0 <= z[2] < camera.height)


def _attitude(phi):
    """Camera looking radially outward from the circle centre, y axis down."""
    zc = np.array([np.cos(phi), np.sin(phi), 0.0])
    yc = np.array([0.0, 0.0, -1.0])
    xc = np.cross(yc, zc)
    return np.column_stack([xc, yc, zc])


def _stereo_dataset(cfg: SimConfig, rng: Xoshiro256) -> Dataset:
    camera = StereoCamera()
    T = cfg.steps * cfg.dt
    w = 2.0 * math.pi * cfg.turns / T
    rate = cfg.imu_rate
    per = int(round(rate * cfg.dt))
    h = cfg.dt / per
    n_imu = cfg.steps * per
    R_rad = cfg.radius

    lms = []
    for _ in range(cfg.n_landmarks):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        rad = rng.uniform(R_rad + 3.0, R_rad + 6.0)
        lms.append([rad * math.cos(ang), rad * math.sin(ang), rng.uniform(-1.5, 1.5)])
    lms = np.array(lms)

    # analytic path: circle in the plane, small vertical oscillation, yaw rate w
    def path(t):
        phi = w * t
        p = np.array([R_rad * math.cos(phi), R_rad * math.sin(phi), 0.2 * math.sin(2 * phi)])
        a = np.array([-R_rad * w * w * math.cos(phi), -R_rad * w * w * math.sin(phi),
                      -0.8 * w * w * math.sin(2 * phi)])
        v = np.array([-R_rad * w * math.sin(phi), R_rad * w * math.cos(phi), 0.4 * w * math.cos(2 * phi)])
        return p, v, a

    p0, v0, _ = path(0.0)
    R0 = _attitude(0.0)
    # body rate of the outward-looking camera: yaw about world z, i.e. about -y in the camera
    omega_body = np.array([0.0, -w, 0.0])
    noise = cfg.imu_noise
    dyn = ImuDynamics()
    x = imu_point(rot_to_quat(R0), v0, np.zeros(3), np.zeros(3), p0)
    bg = np.zeros(3)
    ba = np.zeros(3)
    imu_rows = []
    states = [x]
    for k in range(n_imu):
        t = k * h
        R = unpack(x)[0].rotation
        _, _, a_w = path(t)
        wm = omega_body.copy()
        am = R.T @ (a_w - GRAVITY)
        # truth follows the held true inputs exactly
        x = dyn.integrate(x, np.concatenate([wm, am]), h, substeps=1)
        if not cfg.noise_free:
            wm = wm + bg + np.array(rng.normals(3)) * math.sqrt(noise.gyro / h)
            am = am + ba + np.array(rng.normals(3)) * math.sqrt(noise.accel / h)
            bg = bg + np.array(rng.normals(3)) * math.sqrt(noise.gyro_bias * h)
            ba = ba + np.array(rng.normals(3)) * math.sqrt(noise.accel_bias * h)
        imu_rows.append([t, *wm, *am])
        if (k + 1) % per == 0:
            states.append(x)
    frame_t = np.arange(cfg.steps + 1) * cfg.dt
    gt = []
    for s in states:
        q, v, _, _, r = unpack(s)
        gt.append([*r, *q.q])
    gt = np.array(gt)
    sig = cfg.pixel_sigma
    rows_t, rows_f, rows_id, rows_z = [], [], [], []
    for k, s in enumerate(states):
        q, v, _, _, r = unpack(s)
        pose = pose3(q.q, r)
        for j, f in enumerate(lms):
            p_c = camera_point(pose, f)
            if not _visible(camera, p_c, cfg):
                continue
            z = camera.project(p_c)
            if not cfg.noise_free:
                z = z + np.array(rng.normals(3)) * sig
            rows_t.append(frame_t[k])
            rows_f.append(k)
            rows_id.append(j)
            rows_z.append(z)
    vel0 = unpack(states[0])[1]
    config = cfg.to_dict()
    config.update({"v0_x": vel0[0], "v0_y": vel0[1], "v0_z": vel0[2]})
    return Dataset("stereo3d", config, frame_t, gt, np.array(rows_t), np.array(rows_f, dtype=int),
                   np.array(rows_id, dtype=int), np.array(rows_z).reshape(-1, 3),
                   imu=np.array(imu_rows), landmarks=np.column_stack([np.arange(len(lms)), lms]))


def gen_dataset(config: SimConfig | dict | None = None, out_dir=None) -> Dataset:
    cfg = config if isinstance(config, SimConfig) else SimConfig.from_dict(config or {})
    rng = Xoshiro256(cfg.seed)
    if cfg.model == "planar2d":
        ds = _planar_dataset(cfg, rng)
    elif cfg.model == "stereo3d":
        ds = _stereo_dataset(cfg, rng)
    else:
        raise ValueError(f"unknown model {cfg.model!r}")
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds
