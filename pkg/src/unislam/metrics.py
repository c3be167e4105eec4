"""Trajectory evaluation: association, rigid alignment, RMSE and drift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import quat_to_rot, rot_to_quat, so3_log

ASSOC_TOL = 0.010


class MetricsError(ValueError):
    pass


@dataclass
class Trajectory:
    """Timestamped positions with optional orientation.

    ``orientation`` holds either unit quaternions (scalar first, N x 4) or
    planar headings (N,). Planar positions may be N x 2.
    """

    t: np.ndarray
    position: np.ndarray
    orientation: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.position = np.atleast_2d(np.asarray(self.position, dtype=float))
        if self.position.shape[0] != self.t.shape[0]:
            raise MetricsError("one position per timestamp required")
        if self.orientation is not None:
            self.orientation = np.asarray(self.orientation, dtype=float)
            if self.orientation.shape[0] != self.t.shape[0]:
                raise MetricsError("one orientation per timestamp required")
        if np.any(np.diff(self.t) <= 0):
            raise MetricsError("timestamps must be strictly increasing")

    @classmethod
    def from_rows(cls, rows):
        """(t, px, py, theta) or (t, px, py, pz, qw, qx, qy, qz) rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] == 4:
            return cls(rows[:, 0], rows[:, 1:3], rows[:, 3])
        if rows.shape[1] == 8:
            return cls(rows[:, 0], rows[:, 1:4], rows[:, 4:8])
        raise MetricsError(f"cannot read a trajectory from rows of width {rows.shape[1]}")

    def __len__(self):
        return len(self.t)

    def take(self, idx):
        o = None if self.orientation is None else self.orientation[idx]
        return Trajectory(self.t[idx], self.position[idx], o)

    def rotations(self):
        """N x 3 x 3 attitude matrices (planar headings become yaw rotations)."""
        if self.orientation is None:
            return None
        if self.orientation.ndim == 1:
            c, s = np.cos(self.orientation), np.sin(self.orientation)
            R = np.zeros((len(self), 3, 3))
            R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1], R[:, 2, 2] = c, -s, s, c, 1.0
            return R
        return np.array([quat_to_rot(q / np.linalg.norm(q)) for q in self.orientation])


def _pad3(P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] == 3:
        return P
    if P.shape[1] == 2:
        return np.column_stack([P, np.zeros(len(P))])
    raise MetricsError(f"positions must have 2 or 3 columns, got {P.shape[1]}")


def associate(t_est, t_gt, tol=ASSOC_TOL):
    """Index pairs matching each estimate to the nearest ground-truth time within ``tol``."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if len(t_gt) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    j = np.searchsorted(t_gt, t_est)
    lo = np.clip(j - 1, 0, len(t_gt) - 1)
    hi = np.clip(j, 0, len(t_gt) - 1)
    pick = np.where(np.abs(t_gt[lo] - t_est) <= np.abs(t_gt[hi] - t_est), lo, hi)
    ok = np.abs(t_gt[pick] - t_est) <= tol + 1e-12
    return np.nonzero(ok)[0], pick[ok]


@dataclass
class AlignmentResult:
    """Rigid map p -> R p + t carrying the estimate onto ground truth."""

    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, P):
        width = np.atleast_2d(P).shape[1]
        out = _pad3(P) @ self.rotation.T + self.translation
        return out[:, :width]

    def apply_trajectory(self, traj: Trajectory) -> Trajectory:
        pos = self.apply(traj.position)
        o = traj.orientation
        if o is not None:
            if o.ndim == 1:
                yaw = np.arctan2(self.rotation[1, 0], self.rotation[0, 0])
                o = o + yaw
            else:
                o = np.array([rot_to_quat(self.rotation @ R) for R in traj.rotations()])
        return Trajectory(traj.t, pos, o)


def umeyama_align(estimate, ground_truth) -> AlignmentResult:
    """Least-squares rotation and translation (no scale) from estimate to ground truth.

    Accepts associated position arrays (N x 2 or N x 3) or Trajectories,
    which are associated by timestamp first.
    """
    if isinstance(estimate, Trajectory) and isinstance(ground_truth, Trajectory):
        i, j = associate(estimate.t, ground_truth.t)
        X, Y = _pad3(estimate.position[i]), _pad3(ground_truth.position[j])
    else:
        X, Y = _pad3(estimate), _pad3(ground_truth)
    if X.shape != Y.shape:
        raise MetricsError("estimate and ground truth must pair up one to one")
    if len(X) < 3:
        raise MetricsError(f"alignment needs at least 3 associated positions, got {len(X)}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    sx = np.linalg.svd(Xc, compute_uv=False)
    sy = np.linalg.svd(Yc, compute_uv=False)
    if sx[0] <= 1e-12 or sx[1] <= 1e-9 * sx[0] or sy[1] <= 1e-9 * max(sy[0], 1e-300):
        raise MetricsError("positions are coincident or collinear; the rotation is not determined")
    Sxy = Yc.T @ Xc / len(X)
    U, _, Vt = np.linalg.svd(Sxy)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    return AlignmentResult(R, my - R @ mx)


def _rotation_errors_deg(est: Trajectory, gt: Trajectory):
    if est.orientation is None or gt.orientation is None:
        return None
    if est.orientation.ndim == 1 and gt.orientation.ndim == 1:
        d = np.angle(np.exp(1j * (est.orientation - gt.orientation)))
        return np.degrees(np.abs(d))
    Re, Rg = est.rotations(), gt.rotations()
    return np.degrees([np.linalg.norm(so3_log(a.T @ b)) for a, b in zip(Rg, Re)])


def rmse(estimate: Trajectory, ground_truth: Trajectory):
    """(translation RMSE in meters, rotation RMSE in degrees) over associated poses.

    The inputs are compared as given; align first if needed. The rotation
    entry is NaN when either side lacks orientation.
    """
    i, j = associate(estimate.t, ground_truth.t)
    if len(i) == 0:
        raise MetricsError("no estimate timestamps associate with ground truth")
    e, g = estimate.take(i), ground_truth.take(j)
    d = _pad3(e.position) - _pad3(g.position)
    trans = float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
    rot_err = _rotation_errors_deg(e, g)
    rot = float("nan") if rot_err is None else float(np.sqrt(np.mean(np.square(rot_err))))
    return trans, rot


def drift_curve(estimate: Trajectory, ground_truth: Trajectory, interval_m=5.0):
    """Position error at every ``interval_m`` of ground-truth arc length.

    Errors between samples are interpolated linearly in arc length.
    """
    if interval_m <= 0:
        raise MetricsError("drift interval must be positive")
    i, j = associate(estimate.t, ground_truth.t)
    if len(i) < 2:
        return []
    P = _pad3(ground_truth.position[j])
    E = _pad3(estimate.position[i]) - P
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    out = []
    for k in range(1, int(np.floor(s[-1] / interval_m + 1e-9)) + 1):
        m = k * interval_m
        err = np.array([np.interp(m, s, E[:, c]) for c in range(3)])
        out.append((float(m), float(np.linalg.norm(err))))
    return out


@dataclass
class Evaluation:
    translation_rmse: float
    rotation_rmse: float
    alignment: AlignmentResult | None
    drift: list
    associated: int


def evaluate(estimate: Trajectory, ground_truth: Trajectory, align=True, interval_m=5.0) -> Evaluation:
    """Associate, align rigidly over the full trajectory, then score."""
    al = None
    est = estimate
    if align:
        al = umeyama_align(estimate, ground_truth)
        est = al.apply_trajectory(estimate)
    t, r = rmse(est, ground_truth)
    n = len(associate(estimate.t, ground_truth.t)[0])
    return Evaluation(t, r, al, drift_curve(est, ground_truth, interval_m), n)
