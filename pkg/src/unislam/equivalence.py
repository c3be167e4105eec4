"""Randomized classical-vs-optimization comparisons of the EKF and MSCKF sub-steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimators.ekf import (DF, DX, EkfBelief, ekf_feature_augment_classical, ekf_feature_augment_opt,
                             ekf_feature_update_classical, ekf_feature_update_opt,
                             ekf_propagate_classical, ekf_propagate_opt)
from .estimators.models import BodyFrame, PlanarModel, RelativePosition
from .estimators.msckf import (IMU, MsckfBelief, StereoImuProblem, msckf_feature_update_classical,
                               msckf_feature_update_opt, msckf_pose_augment, msckf_pose_augment_eps,
                               msckf_propagate_classical, msckf_propagate_opt, pose_key)
from .factors import State
from .imu import imu_point
from .manifold import Euclidean, Product, Quat, quat_normalize

KINDS = ("ekf_aug", "ekf_update", "ekf_prop", "msckf_aug", "msckf_update", "msckf_prop")
MEAN_TOL = 1e-8
COV_TOL = 1e-7
EPS_SEQUENCE = (1e-6, 1e-9, 1e-12)


@dataclass
class EquivalenceReport:
    kind: str
    trials: int
    seed: int
    max_mean: float
    max_cov: float
    mean_tol: float
    cov_tol: float
    eps_distances: list = field(default_factory=list)   # (eps, worst relative Frobenius distance)
    monotone: bool = True

    @property
    def passed(self):
        return self.max_mean <= self.mean_tol and self.max_cov <= self.cov_tol and self.monotone

    def lines(self):
        out = [f"{self.kind}: trials={self.trials} seed={self.seed} "
               f"max_mean={self.max_mean:.3e} (tol {self.mean_tol:.0e}) "
               f"max_cov={self.max_cov:.3e} (tol {self.cov_tol:.0e})"]
        for eps, d in self.eps_distances:
            out.append(f"  eps={eps:.0e} worst covariance distance to the limit {d:.3e}")
        if self.eps_distances:
            out.append(f"  monotone in eps: {'yes' if self.monotone else 'no'}")
        out.append(f"{self.kind}: {'PASS' if self.passed else 'FAIL'}")
        return out


# --- random instances -------------------------------------------------------------

def random_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))


def _planar_model(rng):
    meas = RelativePosition() if rng.random() < 0.5 else BodyFrame()
    return PlanarModel(dt=0.1, measurement=meas,
                       Sigma_w=np.diag(rng.uniform(1e-4, 1e-2, size=3)),
                       Sigma_v=random_spd(rng, 2, 0.01))


def random_ekf_belief(rng, p=None):
    p = int(rng.integers(0, 5)) if p is None else p
    d = DX + DF * p
    mean = rng.normal(size=d) * 3.0
    mean[2] = rng.uniform(-np.pi, np.pi)
    return EkfBelief(mean, random_spd(rng, d, 0.1), list(range(p)))


def _ekf_err(a: EkfBelief, b: EkfBelief):
    d = a.mean - b.mean
    d[2] = np.angle(np.exp(1j * d[2]))
    return float(np.linalg.norm(d)), float(np.linalg.norm(a.cov - b.cov) / np.linalg.norm(a.cov))


def _ekf_trial(kind, rng):
    model = _planar_model(rng)
    if kind == "ekf_aug":
        b = random_ekf_belief(rng)
        new = [(100 + j, rng.normal(size=2) * 2.0) for j in range(int(rng.integers(1, 4)))]
        return _ekf_err(ekf_feature_augment_classical(b, new, model), ekf_feature_augment_opt(b, new, model))
    if kind == "ekf_update":
        b = random_ekf_belief(rng, int(rng.integers(1, 5)))
        meas = []
        for fid in b.feature_ids:
            z = model.measurement.h(b.pose, b.feature(fid)) + rng.normal(size=2) * 0.1
            meas.append((fid, z))
        return _ekf_err(ekf_feature_update_classical(b, meas, model), ekf_feature_update_opt(b, meas, model))
    b = random_ekf_belief(rng)
    u = (rng.uniform(-2, 2), rng.uniform(-1, 1))
    return _ekf_err(ekf_propagate_classical(b, u, model), ekf_propagate_opt(b, u, model))


def random_quat(rng):
    return quat_normalize(rng.normal(size=4))


def random_stereo_problem(rng):
    q_SC = random_quat(rng) if rng.random() < 0.5 else np.array([1.0, 0, 0, 0])
    return StereoImuProblem(q_SC=q_SC, r_SC=rng.normal(size=3) * 0.1, pixel_sigma=rng.uniform(0.05, 1.0))


def random_msckf_belief(rng, problem, n=None, scale=1e-2):
    n = int(rng.integers(0, 4)) if n is None else n
    imu = imu_point(random_quat(rng), rng.normal(size=3), rng.normal(size=3) * 1e-2,
                    rng.normal(size=3) * 1e-1, rng.normal(size=3) * 3.0)
    blocks = [(IMU, imu, "imu_state")]
    for i in range(n):
        blocks.append((pose_key(i), Product((Quat(random_quat(rng)), Euclidean(rng.normal(size=3) * 3.0))), "pose"))
    state = State(blocks)
    return MsckfBelief(state, random_spd(rng, state.dim, scale))


def _msckf_err(a: MsckfBelief, b: MsckfBelief):
    return (float(np.linalg.norm(a.mean.boxminus(b.mean))),
            float(np.linalg.norm(a.cov - b.cov) / np.linalg.norm(a.cov)))


def _viewing_setup(rng, problem, n_poses, n_features):
    """Camera poses near one another that all see every feature."""
    base = random_quat(rng)
    R0 = Quat(base).rotation
    center = rng.normal(size=3)
    feats = {}
    for j in range(n_features):
        p_c = np.array([rng.uniform(-1, 1), rng.uniform(-0.7, 0.7), rng.uniform(3, 8)])
        feats[j] = R0 @ p_c + center
    imu = imu_point(random_quat(rng), rng.normal(size=3), rng.normal(size=3) * 1e-2,
                    rng.normal(size=3) * 1e-1, center + rng.normal(size=3) * 0.1)
    blocks = [(IMU, imu, "imu_state")]
    for i in range(n_poses):
        q = Quat(base).boxplus(rng.normal(size=3) * 0.05).q
        r = center + rng.normal(size=3) * 0.3
        blocks.append((pose_key(i), Product((Quat(q), Euclidean(r))), "pose"))
    state = State(blocks)
    belief = MsckfBelief(state, random_spd(rng, state.dim, 1e-4))
    sig = np.sqrt(problem.Sigma_v[0, 0])
    pairs = []
    for i in range(n_poses):
        pk = pose_key(i)
        belief.obs[pk] = {}
        for j, f in feats.items():
            z = problem.measurement.h_point(state[pk], Euclidean(f)) + rng.normal(size=3) * sig
            belief.obs[pk][j] = z
            pairs.append((pk, j))
    estimates = {j: f + rng.normal(size=3) * 0.05 for j, f in feats.items()}
    return belief, pairs, estimates


def _imu_rows(rng, n=20, dt=0.005, t0=0.0):
    t = t0 + dt * np.arange(n)
    w = rng.normal(size=(n, 3)) * 0.5
    a = rng.normal(size=(n, 3)) + np.array([0, 0, 9.81])
    return np.column_stack([t, w, a]), t0 + dt * n


def _msckf_trial(kind, rng):
    problem = random_stereo_problem(rng)
    if kind == "msckf_update":
        belief, pairs, est = _viewing_setup(rng, problem, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
        return _msckf_err(msckf_feature_update_classical(belief, problem, pairs, est),
                          msckf_feature_update_opt(belief, problem, pairs, est))
    belief = random_msckf_belief(rng, problem)
    rows, t1 = _imu_rows(rng)
    tr = problem.transition(belief.mean[IMU], (rows, t1))
    return _msckf_err(msckf_propagate_classical(belief, tr), msckf_propagate_opt(belief, tr))


def _aug_trial(rng, eps_seq):
    problem = random_stereo_problem(rng)
    belief = random_msckf_belief(rng, problem)
    limit = msckf_pose_augment(belief, problem, 99)
    dists, means = [], []
    for eps in eps_seq:
        e = msckf_pose_augment_eps(belief, problem, 99, eps)
        m, c = _msckf_err(limit, e)
        dists.append(c)
        means.append(m)
    return means, dists


# --- driver -------------------------------------------------------------------------

def equiv_check(kind, trials=100, seed=0, eps_sequence=EPS_SEQUENCE) -> EquivalenceReport:
    """Worst discrepancies between the two forms of one sub-step over random instances.

    Pose augmentation compares the closed form with the eps-penalized
    Gauss-Newton form at each eps in ``eps_sequence``; its pass test uses
    the smallest eps and also asks for monotone convergence.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown check {kind!r}; expected one of {', '.join(KINDS)}")
    if int(trials) < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    worst_m = worst_c = 0.0
    if kind == "msckf_aug":
        eps_seq = sorted(eps_sequence, reverse=True)
        worst = [0.0] * len(eps_seq)
        monotone = True
        for _ in range(trials):
            means, dists = _aug_trial(rng, eps_seq)
            worst = [max(w, d) for w, d in zip(worst, dists)]
            monotone &= all(b < a for a, b in zip(dists, dists[1:]))
            worst_m = max(worst_m, means[-1])
        return EquivalenceReport(kind, trials, seed, worst_m, worst[-1], MEAN_TOL, COV_TOL,
                                 list(zip(eps_seq, worst)), monotone)
    trial = _ekf_trial if kind.startswith("ekf") else _msckf_trial
    for _ in range(trials):
        m, c = trial(kind, rng)
        worst_m, worst_c = max(worst_m, m), max(worst_c, c)
    return EquivalenceReport(kind, trials, seed, worst_m, worst_c, MEAN_TOL, COV_TOL)


__all__ = ["EPS_SEQUENCE", "EquivalenceReport", "KINDS", "equiv_check", "random_spd"]
