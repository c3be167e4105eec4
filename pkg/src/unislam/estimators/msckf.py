"""Multi-state constraint filter: pose cloning, nullspace feature updates, propagation.

Every sub-step comes in a closed-form flavour and an optimization flavour
built from the Gauss-Newton and marginalization primitives. The state is an
IMU-like block ``"imu"`` followed by cloned poses ``("pose", i)``; a problem
object says what those blocks are and how they are measured.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..factors import GaussianBelief, RunningCost, State, dynamics_residual, measurement_residual
from ..imu import ImuDynamics, ImuNoiseSpec, discretize, unpack
from ..manifold import Euclidean, Product, Quat, quat_mul, skew
from ..optimizer import gauss_newton_solve, gauss_newton_step, marginalize
from .models import PlanarModel, StereoMeasurement
from .triangulation import TriangulationError, triangulate_feature

log = logging.getLogger(__name__)

IMU = "imu"
IMU_NEXT = "imu_next"


def pose_key(i):
    return ("pose", int(i))


def _feature_key(fid):
    return ("f", int(fid))


@dataclass
class Transition:
    """Discrete motion of the IMU block: mean map, its Jacobian, process noise."""

    g: object
    G: np.ndarray
    Sigma_w: np.ndarray


# --- problems -------------------------------------------------------------------

class _PlanarView:
    def __init__(self, model: PlanarModel):
        self.model = model
        self.dz = model.measurement.dz
        self.df = model.measurement.df

    def h_point(self, x, f):
        return self.model.h_point(x, f)

    def H_point(self, x, f):
        return self.model.H_point(x, f)

    def ell(self, x, z):
        return self.model.measurement.ell(x.value, z)


class PlanarMsckfProblem:
    """Unicycle robot whose pose is its own IMU block, so cloning copies it."""

    def __init__(self, model: PlanarModel | None = None):
        self.model = model or PlanarModel()
        self.measurement = _PlanarView(self.model)
        self.Sigma_v = self.model.Sigma_v
        self.d_imu = 3
        self.d_pose = 3

    def psi(self, imu):
        return Euclidean(np.array(imu.value))

    def Psi(self, imu):
        return np.eye(3)

    def transition(self, imu, u):
        return Transition(self.model.g_point(u), self.model.motion.jacobian(imu.value, u),
                          self.model.Sigma_w)

    def estimate(self, imu):
        return np.array(imu.value)


class StereoImuProblem:
    """IMU state (attitude, velocity, biases, position) with a rigidly mounted stereo camera.

    ``q_SC`` and ``r_SC`` place the camera in the IMU frame.
    """

    def __init__(self, measurement: StereoMeasurement | None = None, q_SC=(1.0, 0.0, 0.0, 0.0),
                 r_SC=(0.0, 0.0, 0.0), noise: ImuNoiseSpec | None = None, pixel_sigma=0.05,
                 substeps=1):
        self.measurement = measurement or StereoMeasurement()
        self.q_SC = np.asarray(q_SC, dtype=float)
        self.R_SC = Quat(self.q_SC).rotation
        self.r_SC = np.asarray(r_SC, dtype=float)
        self.noise = noise or ImuNoiseSpec()
        self.Sigma_v = pixel_sigma**2 * np.eye(3)
        self.substeps = substeps
        self.dynamics = ImuDynamics()
        self.d_imu = 15
        self.d_pose = 6

    def psi(self, imu):
        q, _, _, _, r = unpack(imu)
        return Product((Quat(quat_mul(q.q, self.q_SC)), Euclidean(r + q.rotation @ self.r_SC)))

    def Psi(self, imu):
        R = unpack(imu)[0].rotation
        P = np.zeros((6, 15))
        P[0:3, 0:3] = self.R_SC.T
        P[3:6, 0:3] = -R @ skew(self.r_SC)
        P[3:6, 12:15] = np.eye(3)
        return P

    def transition(self, imu, inputs):
        """``inputs`` is (imu rows, end time) for the interval to the next frame."""
        rows, t1 = inputs
        d = discretize(self.dynamics, imu, rows, self.noise, t1=t1, substeps=self.substeps)
        return Transition(d.g_hat, d.Phi, d.Sigma_w)

    def estimate(self, imu):
        q, _, _, _, r = unpack(imu)
        return np.concatenate([r, q.q])


# --- belief ---------------------------------------------------------------------

@dataclass
class MsckfBelief:
    """Gaussian over (imu, pose_1..pose_n) plus the measurement bookkeeping.

    ``obs`` maps each live pose key to {feature id: measurement};
    ``processed`` holds features already used, which never come back.
    """

    mean: State
    cov: np.ndarray
    obs: dict = field(default_factory=dict)
    processed: set = field(default_factory=set)

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (self.mean.dim, self.mean.dim):
            raise ValueError(f"covariance {cov.shape} does not match state dimension {self.mean.dim}")
        self.cov = 0.5 * (cov + cov.T)

    @property
    def poses(self):
        return [k for k in self.mean.keys if k != IMU]

    @property
    def imu_state(self):
        return self.mean[IMU]

    def gaussian(self) -> GaussianBelief:
        return GaussianBelief(self.mean, self.cov)

    def with_gaussian(self, g: GaussianBelief):
        return MsckfBelief(g.mean, g.cov, {k: dict(v) for k, v in self.obs.items()}, set(self.processed))

    def pairs(self):
        return [(p, f) for p in self.poses for f in self.obs.get(p, {})]


def msckf_init(imu0, Sigma0):
    return MsckfBelief(State([(IMU, imu0, "imu_state")]), Sigma0)


# --- pose augmentation ----------------------------------------------------------

def _psi_rows(belief: MsckfBelief, problem):
    J = np.zeros((problem.d_pose, belief.mean.dim))
    J[:, belief.mean.slice(IMU)] = problem.Psi(belief.mean[IMU])
    return J


def msckf_pose_augment(belief: MsckfBelief, problem, pose_id, measurements=None) -> MsckfBelief:
    """Append the pose implied by the IMU block, with covariance [I; dpsi] S [I; dpsi]^T."""
    key = pose_key(pose_id)
    J = _psi_rows(belief, problem)
    S = belief.cov
    SJ = S @ J.T
    cov = np.block([[S, SJ], [SJ.T, J @ SJ]])
    mean = belief.mean.with_block(key, problem.psi(belief.mean[IMU]), "pose")
    out = MsckfBelief(mean, cov, {k: dict(v) for k, v in belief.obs.items()}, set(belief.processed))
    out.obs[key] = {int(f): np.asarray(z, dtype=float) for f, z in (measurements or [])
                    if int(f) not in belief.processed}
    return out


def msckf_pose_augment_eps(belief: MsckfBelief, problem, pose_id, eps) -> MsckfBelief:
    """One Gauss-Newton step on prior + eps^-1 |x_new [-] psi(imu)|^2.

    Kept as a check on the closed form: as eps shrinks the result approaches
    :func:`msckf_pose_augment`. No eigenvalue truncation is applied, since
    the constraint makes the normal matrix deliberately stiff.
    """
    key = pose_key(pose_id)
    g = belief.gaussian()
    state = g.mean.with_block(key, problem.psi(g.mean[IMU]), "pose")
    cost = RunningCost(state, [g.as_prior()])
    cost.add(dynamics_residual(IMU, key, problem.psi, eps * np.eye(problem.d_pose), G=problem.Psi,
                               label="clone constraint"))
    rep = gauss_newton_step(cost, rcond=0.0)
    return MsckfBelief(rep.mean, rep.covariance, {k: dict(v) for k, v in belief.obs.items()},
                       set(belief.processed))


# --- bookkeeping sets -----------------------------------------------------------

@dataclass
class SetSelection:
    drop_poses: list
    shared_pairs: list
    lost_pairs: list
    features: list

    @property
    def pairs(self):
        seen, out = set(), []
        for p in self.shared_pairs + self.lost_pairs:
            if p not in seen:
                seen.add(p)
                out.append(p)
        return out


def msckf_select_sets(belief: MsckfBelief, n_max, current=None) -> SetSelection:
    """Poses to drop, the measurement pairs to process and their features.

    Once ``n >= n_max - 1``, every pose whose 1-based index is 2 mod 3 is
    selected, along with the features all of them observe. Independently,
    features missing from ``current`` (by default the newest pose's
    observations) are processed with every pair they have.
    """
    poses = belief.poses
    n = len(poses)
    drop_poses = [p for i, p in enumerate(poses, start=1) if n >= n_max - 1 and i % 3 == 2]
    shared_pairs = []
    if drop_poses:
        common = set.intersection(*(set(belief.obs.get(p, {})) for p in drop_poses))
        shared_pairs = [(p, f) for p in drop_poses for f in sorted(common)]
    if current is None:
        current = set(belief.obs.get(poses[-1], {})) if poses else set()
    current = set(current)
    lost_pairs = [(p, f) for p in poses for f in sorted(belief.obs.get(p, {})) if f not in current]
    features = sorted({f for _, f in shared_pairs + lost_pairs})
    return SetSelection(drop_poses, shared_pairs, lost_pairs, features)


# --- feature update -------------------------------------------------------------

def _stack(belief: MsckfBelief, problem, pairs, features):
    """Residual z - h, and Jacobians of h w.r.t. the state and the features."""
    meas = problem.measurement
    fids = sorted(features)
    col = {f: i for i, f in enumerate(fids)}
    dz, df = meas.dz, meas.df
    m = len(pairs) * dz
    Hx = np.zeros((m, belief.mean.dim))
    Hf = np.zeros((m, len(fids) * df))
    r = np.zeros(m)
    for i, (pk, fid) in enumerate(pairs):
        rows = slice(i * dz, (i + 1) * dz)
        pose = belief.mean[pk]
        f = Euclidean(features[fid])
        z = belief.obs[pk][fid]
        r[rows] = z - meas.h_point(pose, f)
        Hxp, Hfp = meas.H_point(pose, f)
        Hx[rows, belief.mean.slice(pk)] = Hxp
        Hf[rows, col[fid] * df:(col[fid] + 1) * df] = Hfp
    return r, Hx, Hf


def left_nullspace(H, tol=1e-10):
    """Orthonormal columns A with A^T H = 0."""
    m, k = H.shape
    Q, Rm = np.linalg.qr(H, mode="complete")
    d = np.abs(np.diag(Rm)) if k else np.zeros(0)
    rank = int(np.sum(d > tol * max(d.max(initial=0.0), 1e-300)))
    if rank < min(m, k):
        U, s, _ = np.linalg.svd(H, full_matrices=True)
        rank = int(np.sum(s > tol * max(s.max(initial=0.0), 1e-300)))
        return U[:, rank:]
    return Q[:, rank:]


@dataclass
class NullspaceProjection:
    A: np.ndarray
    Q: np.ndarray
    T: np.ndarray
    residual: np.ndarray


def msckf_feature_update_classical(belief: MsckfBelief, problem, pairs, features,
                                   return_projection=False):
    """Nullspace projection of the feature Jacobian, QR of the projected state Jacobian,
    then the information-form update."""
    if not pairs:
        return (belief, None) if return_projection else belief
    r, Hx, Hf = _stack(belief, problem, pairs, features)
    A = left_nullspace(Hf)
    if A.shape[1] == 0:
        raise ValueError("feature Jacobian has no left nullspace: too few observations")
    M = A.T @ Hx
    Q, T = np.linalg.qr(M, mode="complete")
    R = np.kron(np.eye(len(pairs)), problem.Sigma_v)
    S = Q.T @ A.T @ R @ A @ Q
    Sinv = np.linalg.inv(S)
    info = np.linalg.inv(belief.cov) + T.T @ Sinv @ T
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    delta = cov @ T.T @ Sinv @ (Q.T @ (A.T @ r))
    out = belief.with_gaussian(GaussianBelief(belief.mean.boxplus(delta), cov))
    if return_projection:
        return out, NullspaceProjection(A, Q, T, A.T @ r)
    return out


def msckf_feature_update_opt(belief: MsckfBelief, problem, pairs, features, iterated=False, stats=None):
    """Marginalize the features out of prior + measurement residuals."""
    if not pairs:
        return belief
    g = belief.gaussian()
    state = g.mean
    for fid in sorted(features):
        state = state.with_block(_feature_key(fid), Euclidean(features[fid]), "feature")
    cost = RunningCost(state, [g.as_prior()])
    meas = problem.measurement
    for i, (pk, fid) in enumerate(pairs):
        cost.add(measurement_residual(pk, _feature_key(fid), belief.obs[pk][fid], meas.h_point,
                                      problem.Sigma_v, H=meas.H_point, order=(i,)))
    x = state
    if iterated:
        sol = gauss_newton_solve(cost, max_iters=10)
        x = sol.mean
        if stats is not None:
            stats["gn_iterations"] = stats.get("gn_iterations", 0) + sol.iterations
    rep, _ = marginalize(cost, [_feature_key(f) for f in sorted(features)], x=x)
    if stats is not None:
        stats["marginalizations"] = stats.get("marginalizations", 0) + 1
    post = rep.belief.marginal(belief.mean.keys)
    return belief.with_gaussian(post)


# --- propagation ----------------------------------------------------------------

def msckf_propagate_classical(belief: MsckfBelief, transition: Transition) -> MsckfBelief:
    sl = belief.mean.slice(IMU)
    n = belief.mean.dim
    F = np.eye(n)
    F[sl, sl] = transition.G
    cov = F @ belief.cov @ F.T
    cov[sl, sl] += transition.Sigma_w
    mean = belief.mean.replace({IMU: transition.g(belief.mean[IMU])})
    return belief.with_gaussian(GaussianBelief(mean, cov))


def msckf_propagate_opt(belief: MsckfBelief, transition: Transition) -> MsckfBelief:
    """Marginalize the current IMU block from prior + dynamics, at (mu, g(mu))."""
    g = belief.gaussian()
    state = g.mean.with_block(IMU_NEXT, transition.g(g.mean[IMU]), "imu_state")
    cost = RunningCost(state, [g.as_prior()])
    G = transition.G
    cost.add(dynamics_residual(IMU, IMU_NEXT, transition.g, transition.Sigma_w, G=lambda _x: G))
    rep, _ = marginalize(cost, [IMU])
    post = rep.belief
    order = [IMU_NEXT] + [k for k in post.mean.keys if k != IMU_NEXT]
    post = post.marginal(order)
    renamed = State([(IMU if k == IMU_NEXT else k, v, kind) for k, v, kind in post.mean.items()])
    return belief.with_gaussian(GaussianBelief(renamed, post.cov))


# --- dropping poses -------------------------------------------------------------

def msckf_drop_poses(belief: MsckfBelief, keys) -> MsckfBelief:
    """Marginalize poses out of a Gaussian belief: keep the remaining sub-blocks."""
    drop = set(keys)
    keep = [k for k in belief.mean.keys if k not in drop]
    out = belief.with_gaussian(belief.gaussian().marginal(keep))
    for k in drop:
        out.obs.pop(k, None)
    return out


# --- the filter -------------------------------------------------------------------

MODES = ("classical", "optimization")


class MsckfEstimator:
    """Clone, update, drop and propagate, frame after frame.

    Each frame first processes the feature sets chosen against the frame's
    observations, drops the selected poses, and only then clones the new
    pose. Cloning last keeps the covariance nonsingular whenever the update
    needs its inverse.
    """

    def __init__(self, problem, imu0, Sigma0, n_max=5, mode="optimization", iterated=False,
                 max_rms=100.0):
        if n_max < 2:
            raise ValueError("N_max must be at least 2")
        if mode not in MODES:
            raise ValueError(f"unknown MSCKF mode {mode!r}")
        self.problem = problem
        self.n_max = int(n_max)
        self.mode = mode
        self.iterated = iterated
        self.max_rms = max_rms
        self.belief = msckf_init(imu0, Sigma0)
        self.events: list = []
        self.updates = 0
        self.marginalizations = 0
        self.gn_iterations = 0
        self._fresh = None

    def _note(self, msg):
        self.events.append(msg)
        log.info(msg)

    def _triangulate(self, fid, pairs):
        b = self.belief
        poses = [b.mean[p] for p, _ in pairs]
        zs = [b.obs[p][fid] for p, _ in pairs]
        return triangulate_feature(poses, zs, self.problem.measurement, self.problem.Sigma_v,
                                   max_rms=self.max_rms).point

    def step(self, k, measurements):
        """Process frame ``k``; returns the IMU-block estimate after cloning."""
        b = self.belief
        meas = self.problem.measurement
        current = {int(f) for f, _ in measurements}
        sel = msckf_select_sets(b, self.n_max, current)
        lost = {f for _, f in sel.lost_pairs}
        by_feature: dict = {}
        for p, f in sel.pairs:
            by_feature.setdefault(f, []).append((p, f))
        used_pairs, features, done = [], {}, set()
        for fid in sel.features:
            prs = by_feature[fid]
            if len(prs) < 2 or len(prs) * meas.dz <= meas.df:
                if fid in lost:
                    self._note(f"frame {k}: feature {fid} dropped with {len(prs)} observation(s)")
                    done.add(fid)
                continue
            try:
                features[fid] = self._triangulate(fid, prs)
            except TriangulationError as exc:
                self._note(f"frame {k}: feature {fid} dropped, triangulation failed: {exc}")
                if fid in lost:
                    done.add(fid)
                continue
            used_pairs.extend(prs)
            done.add(fid)
        if used_pairs:
            stats = {}
            if self.mode == "classical":
                b = msckf_feature_update_classical(b, self.problem, used_pairs, features)
            else:
                b = msckf_feature_update_opt(b, self.problem, used_pairs, features, self.iterated, stats)
            # a closed-form update counts as the single step it is equivalent to
            self.gn_iterations += stats.get("gn_iterations", 1)
            self.marginalizations += stats.get("marginalizations", 0)
            self.updates += 1
        b.processed.update(f for f in done if f in features)
        for p in list(b.obs):
            for f in done:
                b.obs[p].pop(f, None)
        if sel.drop_poses:
            b = msckf_drop_poses(b, sel.drop_poses)
            self.marginalizations += len(sel.drop_poses)
        fresh = [(f, z) for f, z in measurements if int(f) not in b.processed]
        b = msckf_pose_augment(b, self.problem, k, fresh)
        self._fresh = (pose_key(k), b.obs[pose_key(k)])
        self.belief = b
        return self.estimate()

    def propagate(self, inputs):
        tr = self.problem.transition(self.belief.mean[IMU], inputs)
        if self.mode == "classical":
            self.belief = msckf_propagate_classical(self.belief, tr)
        elif self._fresh is not None:
            self.belief = self._propagate_past_clone(tr)
            self.marginalizations += 1
        else:
            self.belief = msckf_propagate_opt(self.belief, tr)
            self.marginalizations += 1
        self._fresh = None

    def _propagate_past_clone(self, tr):
        # A pose cloned this frame is an exact copy of psi(imu), so the joint
        # covariance is singular and has no information form. Set the clone
        # aside, keep the old IMU block through the dynamics step, re-clone
        # from it and only then drop it.
        key, fresh_obs = self._fresh
        b = msckf_drop_poses(self.belief, [key])
        g = b.gaussian()
        state = g.mean.with_block(IMU_NEXT, tr.g(g.mean[IMU]), "imu_state")
        cost = RunningCost(state, [g.as_prior()])
        G = tr.G
        cost.add(dynamics_residual(IMU, IMU_NEXT, tr.g, tr.Sigma_w, G=lambda _x: G))
        joint = b.with_gaussian(gauss_newton_step(cost).belief)
        joint = msckf_pose_augment(joint, self.problem, key[1], list(fresh_obs.items()))
        keep = [k for k in joint.mean.keys if k not in (IMU, IMU_NEXT)]
        post = joint.gaussian().marginal([IMU_NEXT] + keep)
        renamed = State([(IMU if k == IMU_NEXT else k, v, kind) for k, v, kind in post.mean.items()])
        return joint.with_gaussian(GaussianBelief(renamed, post.cov))

    def estimate(self):
        return self.problem.estimate(self.belief.mean[IMU])

    @property
    def n_poses(self):
        return len(self.belief.poses)


__all__ = ["IMU", "MODES", "MsckfBelief", "MsckfEstimator", "NullspaceProjection", "PlanarMsckfProblem",
           "SetSelection", "StereoImuProblem", "Transition", "left_nullspace", "msckf_drop_poses",
           "msckf_feature_update_classical", "msckf_feature_update_opt", "msckf_init",
           "msckf_pose_augment", "msckf_pose_augment_eps", "msckf_propagate_classical",
           "msckf_propagate_opt", "msckf_select_sets", "pose_key"]
