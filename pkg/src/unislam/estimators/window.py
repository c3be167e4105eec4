"""Sliding-window and keyframe estimators over a persistent running cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..factors import RunningCost, State, dynamics_residual, measurement_residual, prior_residual
from ..manifold import Euclidean
from ..optimizer import gauss_newton_solve, gauss_newton_step, marginalize
from .models import PlanarModel

FEATURE_POLICIES = ("oldest_frame", "keep")


def pose_key(k):
    return ("x", int(k))


def feature_key(fid):
    return ("f", int(fid))


@dataclass(frozen=True)
class KeyframePolicy:
    """k keyframes kept beyond the n most recent frames."""

    n: int = 5
    k: int = 5
    threshold: float = 0.6

    def __post_init__(self):
        if self.n < 1 or self.k < 0:
            raise ValueError("keyframe policy needs n >= 1 and k >= 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("match-ratio threshold must lie in [0, 1]")

    def promotes(self, ratio):
        return self.threshold >= 1.0 or ratio < self.threshold


class WindowEstimator:
    """Sliding-window filter over planar poses and landmarks.

    Each frame adds a pose linked to the previous one by the dynamics
    residual, marginalizes whatever the window policy evicts (linearized at
    the current estimate), adds the frame's measurements and then runs
    Gauss-Newton. ``gn_iters=None`` iterates to convergence.
    """

    def __init__(self, model: PlanarModel, mu0, Sigma0, n=5, gn_iters=None,
                 feature_policy="oldest_frame", keyframes: KeyframePolicy | None = None,
                 max_iters=10, tol=1e-9):
        if n < 1:
            raise ValueError("window size must be at least 1")
        if feature_policy not in FEATURE_POLICIES:
            raise ValueError(f"unknown feature policy {feature_policy!r}")
        self.model = model
        self.mu0 = np.asarray(mu0, dtype=float)
        self.Sigma0 = np.asarray(Sigma0, dtype=float)
        self.n = n
        self.gn_iters = gn_iters
        self.feature_policy = feature_policy
        self.keyframes = keyframes
        self.max_iters = max_iters
        self.tol = tol
        self.cost = RunningCost(State())
        self.poses: list = []
        self.is_keyframe: dict = {}
        self.retired: set = set()
        self.gn_iterations = 0
        self.marginalizations = 0
        self.last_covariance = None

    # -- window bookkeeping ---------------------------------------------------------
    def _frame_features(self, key):
        return {r.keys[1][1] for r in self.cost.residuals
                if r.kind == "measurement" and r.keys[0] == key}

    def _features_only_at(self, key, incoming):
        if self.feature_policy == "keep":
            return []
        out = []
        for fk in self.cost.state.keys:
            if fk[0] != "f" or fk[1] in incoming:
                continue
            poses = {r.keys[0] for r in self.cost.residuals if r.kind == "measurement" and r.keys[1] == fk}
            if poses == {key}:
                out.append(fk)
        return out

    def _marginalize_pose(self, key, incoming):
        feats = self._features_only_at(key, incoming)
        _, self.cost = marginalize(self.cost, [key] + feats)
        self.poses.remove(key)
        self.is_keyframe.pop(key, None)
        self.retired.update(f[1] for f in feats)
        self.marginalizations += 1

    def _evict(self, incoming):
        if self.keyframes is None:
            while len(self.poses) > self.n:
                self._marginalize_pose(self.poses[0], incoming)
            return
        n, k = self.keyframes.n, self.keyframes.k
        old = self.poses[:-n] if len(self.poses) > n else []
        for key in old:
            if not self.is_keyframe[key]:
                self._marginalize_pose(key, incoming)
        old_kf = [p for p in self.poses[:-n] if self.is_keyframe[p]] if len(self.poses) > n else []
        while len(old_kf) > k:
            self._marginalize_pose(old_kf.pop(0), incoming)

    def _promote(self, key, fids):
        kfs = [p for p in self.poses if self.is_keyframe.get(p)]
        if not kfs:
            return True
        ref = self._frame_features(kfs[-1])
        ratio = len(ref.intersection(fids)) / len(fids) if fids else 0.0
        return self.keyframes.promotes(ratio)

    # -- per-frame update -------------------------------------------------------
    def step(self, k, measurements, control=None):
        """Process frame ``k``; ``control`` drove the motion from frame k-1."""
        key = pose_key(k)
        incoming = {int(f) for f, _ in measurements if int(f) not in self.retired}
        if not self.poses:
            state = self.cost.state.with_block(key, Euclidean(self.mu0), "pose")
            self.cost = self.cost.copy(state)
            self.cost.add(prior_residual([key], [Euclidean(self.mu0)], self.Sigma0, label="initial prior"))
        else:
            prev = self.poses[-1]
            g = self.model.g_point(control)
            state = self.cost.state.with_block(key, g(self.cost.state[prev]), "pose")
            self.cost = self.cost.copy(state)
            self.cost.add(dynamics_residual(prev, key, g, self.model.Sigma_w,
                                            G=self.model.G_point(control), time=k))
        self.poses.append(key)
        if self.keyframes is not None:
            self.is_keyframe[key] = self._promote(key, incoming)
        self._evict(incoming)

        x = self.cost.state[key].value
        state = self.cost.state
        for fid, z in measurements:
            fid = int(fid)
            if fid in self.retired:
                continue
            fk = feature_key(fid)
            if fk not in state:
                state = state.with_block(fk, Euclidean(self.model.measurement.ell(x, z)), "feature")
        self.cost = self.cost.copy(state)
        for fid, z in measurements:
            fid = int(fid)
            if fid in self.retired:
                continue
            self.cost.add(measurement_residual(key, feature_key(fid), z, self.model.h_point,
                                               self.model.Sigma_v, H=self.model.H_point, order=(k, fid)))
        self._optimize()
        return self.estimate()

    def _optimize(self):
        if self.gn_iters is None:
            rep = gauss_newton_solve(self.cost, max_iters=self.max_iters, tol=self.tol)
            self.gn_iterations += rep.iterations
        else:
            for _ in range(self.gn_iters):
                rep = gauss_newton_step(self.cost)
                self.cost = self.cost.copy(rep.mean)
                self.gn_iterations += 1
        self.cost = self.cost.copy(rep.mean)
        self.last_covariance = rep.covariance

    def estimate(self):
        return self.cost.state[self.poses[-1]].value.copy()

    def window_size(self):
        return len(self.poses)


def swf_step(estimator: WindowEstimator, k, measurements, control=None):
    return estimator.step(k, measurements, control)


def keyframe_step(estimator: WindowEstimator, k, measurements, control=None):
    if estimator.keyframes is None:
        raise ValueError("estimator has no keyframe policy")
    return estimator.step(k, measurements, control)
