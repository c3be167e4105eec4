"""Planar EKF-SLAM, in closed form and as Gauss-Newton / marginalization steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..factors import GaussianBelief, RunningCost, State, dynamics_residual, measurement_residual
from ..manifold import Euclidean
from ..optimizer import gauss_newton_solve, gauss_newton_step, marginalize
from .models import PlanarModel

DX, DF = 3, 2
POSE = "x"
NEXT = "x_next"


def feature_key(fid):
    return ("f", int(fid))


@dataclass
class EkfBelief:
    """Pose (x1, x2, theta) followed by 2D features, in ``feature_ids`` order."""

    mean: np.ndarray
    cov: np.ndarray
    feature_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        self.feature_ids = [int(f) for f in self.feature_ids]
        d = DX + DF * len(self.feature_ids)
        if self.mean.shape != (d,) or self.cov.shape != (d, d):
            raise ValueError(f"belief with {len(self.feature_ids)} features needs dimension {d}")

    @property
    def pose(self):
        return self.mean[:DX].copy()

    def feature(self, fid):
        i = self.feature_ids.index(int(fid))
        return self.mean[DX + DF * i: DX + DF * (i + 1)].copy()

    def index(self, fid):
        i = self.feature_ids.index(int(fid))
        return slice(DX + DF * i, DX + DF * (i + 1))

    def copy(self):
        return EkfBelief(self.mean.copy(), self.cov.copy(), list(self.feature_ids))

    # bridges to the generic machinery
    def to_gaussian(self) -> GaussianBelief:
        blocks = [(POSE, Euclidean(self.mean[:DX]), "pose")]
        blocks += [(feature_key(f), Euclidean(self.feature(f)), "feature") for f in self.feature_ids]
        return GaussianBelief(State(blocks), self.cov)

    @classmethod
    def from_gaussian(cls, belief: GaussianBelief, pose_key=POSE):
        keys = [pose_key] + [k for k in belief.mean.keys if k != pose_key]
        b = belief.marginal(keys)
        fids = [k[1] for k in keys[1:]]
        mean = np.concatenate([b.mean[k].value for k in keys])
        return cls(mean, b.cov, fids)


def _tally(stats, key, n=1):
    if stats is not None:
        stats[key] = stats.get(key, 0) + n


def _split(belief, measurements):
    new, old = [], []
    for fid, z in measurements:
        (old if int(fid) in belief.feature_ids else new).append((int(fid), np.asarray(z, dtype=float)))
    return new, old


def _add_measurements(cost, measurements, model, pose_key=POSE, order_index=0):
    for fid, z in measurements:
        cost.add(measurement_residual(pose_key, feature_key(fid), z, model.h_point, model.Sigma_v,
                                      H=model.H_point, order=(order_index, fid)))


# --- feature augmentation ------------------------------------------------------

def ekf_feature_augment_classical(belief: EkfBelief, measurements, model: PlanarModel) -> EkfBelief:
    """Append new features through the inverse measurement map."""
    if not measurements:
        return belief.copy()
    mu, S = belief.mean, belief.cov
    x = mu[:DX]
    d = mu.shape[0]
    m = len(measurements)
    Lxs, Lzs, fs = [], [], []
    for _, z in measurements:
        Lx, Lz = model.measurement.L(x, z)
        Lxs.append(Lx)
        Lzs.append(Lz)
        fs.append(model.measurement.ell(x, z))
    Lx_all = np.vstack(Lxs)
    Sxx = S[:DX, :DX]
    Sx_all = S[:DX, :]
    cross = Lx_all @ Sx_all
    new_block = Lx_all @ Sxx @ Lx_all.T
    for i, Lz in enumerate(Lzs):
        sl = slice(DF * i, DF * (i + 1))
        new_block[sl, sl] += Lz @ model.Sigma_v @ Lz.T
    out = np.zeros((d + DF * m, d + DF * m))
    out[:d, :d] = S
    out[d:, :d] = cross
    out[:d, d:] = cross.T
    out[d:, d:] = new_block
    return EkfBelief(np.concatenate([mu] + fs), 0.5 * (out + out.T),
                     belief.feature_ids + [int(f) for f, _ in measurements])


def ekf_feature_augment_opt(belief: EkfBelief, measurements, model: PlanarModel, solve=False,
                            stats=None) -> EkfBelief:
    """One Gauss-Newton step on prior + new-feature residuals about (mu, ell(mu_x, z))."""
    if not measurements:
        return belief.copy()
    g = belief.to_gaussian()
    state = g.mean
    x = belief.pose
    for fid, z in measurements:
        state = state.with_block(feature_key(fid), Euclidean(model.measurement.ell(x, z)), "feature")
    cost = RunningCost(state, [g.as_prior()])
    _add_measurements(cost, measurements, model)
    rep = gauss_newton_solve(cost) if solve else gauss_newton_step(cost)
    _tally(stats, "gn_iterations", rep.iterations)
    return EkfBelief.from_gaussian(rep.belief)


# --- feature update ---------------------------------------------------------

def ekf_feature_update_classical(belief: EkfBelief, measurements, model: PlanarModel) -> EkfBelief:
    """Standard Kalman update with measurements of features already in the state."""
    if not measurements:
        return belief.copy()
    mu, S = belief.mean, belief.cov
    x = mu[:DX]
    d = mu.shape[0]
    m = len(measurements)
    H = np.zeros((DF * m, d))
    r = np.zeros(DF * m)
    R = np.zeros((DF * m, DF * m))
    for i, (fid, z) in enumerate(measurements):
        sl = slice(DF * i, DF * (i + 1))
        f = belief.feature(fid)
        Hx, Hf = model.measurement.H(x, f)
        H[sl, :DX] = Hx
        H[sl, belief.index(fid)] = Hf
        r[sl] = np.asarray(z) - model.measurement.h(x, f)
        R[sl, sl] = model.Sigma_v
    Sinn = H @ S @ H.T + R
    K = np.linalg.solve(Sinn, H @ S).T
    mean = mu + K @ r
    cov = S - K @ H @ S
    return EkfBelief(mean, 0.5 * (cov + cov.T), belief.feature_ids)


def ekf_feature_update_opt(belief: EkfBelief, measurements, model: PlanarModel, solve=False,
                           stats=None) -> EkfBelief:
    """Gauss-Newton on prior + measurement residuals, linearized at the mean."""
    if not measurements:
        return belief.copy()
    g = belief.to_gaussian()
    cost = RunningCost(g.mean, [g.as_prior()])
    _add_measurements(cost, measurements, model)
    rep = gauss_newton_solve(cost) if solve else gauss_newton_step(cost)
    _tally(stats, "gn_iterations", rep.iterations)
    return EkfBelief.from_gaussian(rep.belief)


# --- propagation ----------------------------------------------------------------

def ekf_propagate_classical(belief: EkfBelief, u, model: PlanarModel) -> EkfBelief:
    mu, S = belief.mean, belief.cov
    G = model.motion.jacobian(mu[:DX], u)
    mean = mu.copy()
    mean[:DX] = model.motion.step(mu[:DX], u)
    cov = S.copy()
    cov[:DX, :DX] = G @ S[:DX, :DX] @ G.T + model.Sigma_w
    cov[:DX, DX:] = G @ S[:DX, DX:]
    cov[DX:, :DX] = cov[:DX, DX:].T
    return EkfBelief(mean, cov, belief.feature_ids)


def ekf_propagate_opt(belief: EkfBelief, u, model: PlanarModel, stats=None) -> EkfBelief:
    """Marginalize x_t from prior + dynamics, linearized at (mu, g(mu))."""
    g = belief.to_gaussian()
    state = g.mean.with_block(NEXT, Euclidean(model.motion.step(belief.pose, u)), "pose")
    cost = RunningCost(state, [g.as_prior()])
    cost.add(dynamics_residual(POSE, NEXT, model.g_point(u), model.Sigma_w, G=model.G_point(u)))
    rep, _ = marginalize(cost, [POSE])
    _tally(stats, "marginalizations")
    return EkfBelief.from_gaussian(rep.belief, pose_key=NEXT)


# --- full filter ----------------------------------------------------------------

@dataclass
class PlanarFrame:
    """Measurements at one timestep and the control applied afterwards."""

    t: float
    measurements: Sequence
    control: np.ndarray | None = None


def ekf_run(frames: Sequence[PlanarFrame], model: PlanarModel, mu0, Sigma0, iterated=False,
            classical=False, stats=None):
    """Augment, update, then propagate at every frame.

    Returns the list of beliefs after each frame's update. With ``iterated``
    the update runs Gauss-Newton to convergence.
    """
    belief = EkfBelief(mu0, Sigma0, [])
    out = []
    for k, frame in enumerate(frames):
        new, old = _split(belief, frame.measurements)
        if classical:
            belief = ekf_feature_augment_classical(belief, new, model)
            belief = ekf_feature_update_classical(belief, old, model)
        else:
            belief = ekf_feature_augment_opt(belief, new, model, solve=iterated, stats=stats)
            belief = ekf_feature_update_opt(belief, old, model, solve=iterated, stats=stats)
        out.append(belief)
        if k + 1 < len(frames):
            u = frame.control
            if classical:
                belief = ekf_propagate_classical(belief, u, model)
            else:
                belief = ekf_propagate_opt(belief, u, model, stats=stats)
    return out
