"""One estimator on one dataset: run it, score it, write the result bundle."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimators.ekf import PlanarFrame, ekf_run
from .estimators.models import BodyFrame, PlanarModel, RelativePosition
from .estimators.msckf import MsckfEstimator, PlanarMsckfProblem, StereoImuProblem
from .estimators.schedule import EstimatorSchedule
from .estimators.window import KeyframePolicy, WindowEstimator
from .factors import EvaluatorFault, NotPositiveDefinite
from .imu import ImuDynamics, ImuNoiseSpec, imu_point, unpack
from .io import Dataset, DataError, load_dataset, write_csv
from .manifold import Euclidean
from .metrics import MetricsError, Trajectory, drift_curve, rmse, umeyama_align
from .optimizer import DivergenceError
from .sim import SimConfig

log = logging.getLogger(__name__)

METRICS_SCHEMA = "unislam-metrics"
METRICS_VERSION = 1
FORMS = ("optimization", "classical")
DIVERGENCE = (DivergenceError, NotPositiveDefinite, EvaluatorFault, np.linalg.LinAlgError,
              FloatingPointError, OverflowError)


class ConfigError(ValueError):
    """Parameters that do not fit the chosen estimator or dataset."""


@dataclass
class ExperimentConfig:
    """Estimator schedule plus everything else a run needs.

    Noise overrides of None use the levels recorded in the dataset config.
    ``form`` picks the closed-form or the optimization version of the
    EKF and MSCKF sub-steps.
    """

    dataset: str | Path
    schedule: EstimatorSchedule
    out_dir: str | Path | None = None
    form: str = "optimization"
    seed: int = 42
    sigma_v: float | None = None
    sigma_w_xy: float | None = None
    sigma_w_theta: float | None = None
    pixel_sigma: float | None = None
    prior_sigma: float = 1e-3

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigError(f"unknown form {self.form!r}; expected one of {', '.join(FORMS)}")
        for name in ("sigma_v", "sigma_w_xy", "sigma_w_theta", "pixel_sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.prior_sigma > 0:
            raise ConfigError("prior_sigma must be positive")


@dataclass
class RunResult:
    estimate: np.ndarray          # rows as in the ground-truth file
    metrics: dict
    drift: list
    log_lines: list = field(default_factory=list)

    @property
    def diverged(self):
        return self.metrics["diverged"]


# --- models from the dataset config ---------------------------------------------

def _sim_config(ds: Dataset) -> SimConfig:
    return SimConfig.from_dict(ds.config)


def planar_model(ds: Dataset, cfg: ExperimentConfig | None = None) -> PlanarModel:
    """Estimator-side model. Noise-free datasets still get the nominal noise levels."""
    sc = _sim_config(ds)
    sv = sc.sigma_v if cfg is None or cfg.sigma_v is None else cfg.sigma_v
    sxy = sc.sigma_w_xy if cfg is None or cfg.sigma_w_xy is None else cfg.sigma_w_xy
    sth = sc.sigma_w_theta if cfg is None or cfg.sigma_w_theta is None else cfg.sigma_w_theta
    meas = BodyFrame() if sc.measurement == "body" else RelativePosition()
    return PlanarModel(dt=sc.dt, measurement=meas, Sigma_w=np.diag([sxy**2, sxy**2, sth**2]),
                       Sigma_v=sv**2 * np.eye(2))


def stereo_problem(ds: Dataset, cfg: ExperimentConfig | None = None) -> StereoImuProblem:
    sc = _sim_config(ds)
    pix = sc.pixel_sigma if cfg is None or cfg.pixel_sigma is None else cfg.pixel_sigma
    noise = ImuNoiseSpec(sc.gyro_density**2, sc.accel_density**2, sc.gyro_bias_density**2,
                         sc.accel_bias_density**2)
    return StereoImuProblem(noise=noise, pixel_sigma=pix)


def _stereo_start(ds: Dataset):
    v0 = [float(ds.config.get(f"v0_{a}", 0.0)) for a in "xyz"]
    return imu_point(ds.gt[0, 3:7], v0, np.zeros(3), np.zeros(3), ds.gt[0, :3])


# --- dead reckoning -------------------------------------------------------------

def dead_reckoning(ds: Dataset) -> np.ndarray:
    """Integrate controls or IMU from the true start, with no landmark corrections."""
    if ds.model == "planar2d":
        motion = planar_model(ds).motion
        U = ds.controls()
        xs = [np.array(ds.gt[0], dtype=float)]
        for k in range(ds.n_frames - 1):
            xs.append(motion.step(xs[-1], U[k]))
        return np.array(xs)
    dyn = ImuDynamics()
    x = _stereo_start(ds)
    out = [np.concatenate([unpack(x)[4], unpack(x)[0].q])]
    for k in range(ds.n_frames - 1):
        rows = ds.imu_between(ds.gt_t[k], ds.gt_t[k + 1])
        ends = np.append(rows[1:, 0], ds.gt_t[k + 1])
        for row, t_end in zip(rows, ends):
            x = dyn.integrate(x, row[1:], t_end - row[0])
        out.append(np.concatenate([unpack(x)[4], unpack(x)[0].q]))
    return np.array(out)


# --- estimator drivers ----------------------------------------------------------

class _Partial(Exception):
    def __init__(self, rows, cause):
        super().__init__(str(cause))
        self.rows = rows
        self.cause = cause


def _finite_or_raise(x):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e6:
        raise DivergenceError("estimate left the finite range")


def _run_planar(ds, sched: EstimatorSchedule, cfg: ExperimentConfig, stats, lines):
    model = planar_model(ds, cfg)
    frames = ds.frames()
    U = ds.controls()
    mu0 = np.array(ds.gt[0], dtype=float)
    S0 = cfg.prior_sigma**2 * np.eye(3)
    rows = []
    if sched.kind in ("ekf", "iekf"):
        pf = [PlanarFrame(t, m, U[k]) for k, (t, m) in enumerate(zip(ds.gt_t, frames))]
        beliefs = ekf_run(pf, model, mu0, S0, iterated=sched.kind == "iekf",
                          classical=cfg.form == "classical", stats=stats)
        for b in beliefs:
            _finite_or_raise(b.pose)
            rows.append(b.pose)
        return rows
    if sched.kind in ("swf", "keyframe"):
        kf = KeyframePolicy(sched.n, sched.k, sched.threshold) if sched.kind == "keyframe" else None
        est = WindowEstimator(model, mu0, S0, n=sched.n, gn_iters=sched.gn_iters,
                              feature_policy=sched.feature_policy, keyframes=kf)
        try:
            for k, m in enumerate(frames):
                x = est.step(k, m, U[k - 1] if k else None)
                _finite_or_raise(x)
                rows.append(x)
        except DIVERGENCE as exc:
            raise _Partial(rows, exc) from exc
        finally:
            stats["gn_iterations"] = est.gn_iterations
            stats["marginalizations"] = est.marginalizations
        return rows
    est = MsckfEstimator(PlanarMsckfProblem(model), Euclidean(mu0), S0, n_max=sched.n_max,
                         mode=cfg.form, iterated=sched.kind == "imsckf")
    try:
        for k, m in enumerate(frames):
            x = est.step(k, m)
            _finite_or_raise(x)
            rows.append(x)
            if k + 1 < len(frames):
                est.propagate(U[k])
    except DIVERGENCE as exc:
        raise _Partial(rows, exc) from exc
    finally:
        stats["gn_iterations"] = est.gn_iterations
        stats["marginalizations"] = est.marginalizations
        lines.extend(est.events)
    return rows


def _run_stereo(ds, sched: EstimatorSchedule, cfg: ExperimentConfig, stats, lines):
    if sched.kind not in ("msckf", "imsckf"):
        raise ConfigError(f"stereo3d datasets support msckf and imsckf, not {sched.kind}")
    problem = stereo_problem(ds, cfg)
    p = cfg.prior_sigma**2
    S0 = np.diag([p] * 3 + [100 * p] * 3 + [p] * 3 + [100 * p] * 3 + [p] * 3)
    est = MsckfEstimator(problem, _stereo_start(ds), S0, n_max=sched.n_max, mode=cfg.form,
                         iterated=sched.kind == "imsckf")
    frames = ds.frames()
    rows = []
    try:
        for k, m in enumerate(frames):
            x = est.step(k, m)
            _finite_or_raise(x)
            rows.append(x)
            if k + 1 < len(frames):
                est.propagate((ds.imu_between(ds.gt_t[k], ds.gt_t[k + 1]), ds.gt_t[k + 1]))
    except DIVERGENCE as exc:
        raise _Partial(rows, exc) from exc
    finally:
        stats["gn_iterations"] = est.gn_iterations
        stats["marginalizations"] = est.marginalizations
        lines.extend(est.events)
    return rows


# --- scoring -----------------------------------------------------------------------

def _traj(ds: Dataset, rows):
    rows = np.asarray(rows, dtype=float)
    return Trajectory.from_rows(np.column_stack([ds.gt_t[:len(rows)], rows]))


def score(ds: Dataset, rows, interval_m=5.0):
    """(translation RMSE, rotation RMSE, drift curve) after rigid alignment.

    Alignment is skipped when fewer than three non-collinear positions are
    available; the scores are then None.
    """
    if len(rows) == 0:
        return None, None, []
    est = _traj(ds, rows)
    gt = Trajectory.from_rows(np.column_stack([ds.gt_t, ds.gt]))
    try:
        al = umeyama_align(est, gt)
    except MetricsError:
        return None, None, []
    est = al.apply_trajectory(est)
    t, r = rmse(est, gt)
    return t, r, drift_curve(est, gt, interval_m)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def build_metrics(ds, sched: EstimatorSchedule, cfg: ExperimentConfig, rows, stats, diverged,
                  runtime, reason=""):
    t, r, drift = score(ds, rows)
    dr_t, dr_r, _ = score(ds, dead_reckoning(ds))
    metrics = {
        "schema": METRICS_SCHEMA,
        "schema_version": METRICS_VERSION,
        "unislam_version": __version__,
        "estimator": sched.label,
        "schedule": sched.to_dict(),
        "form": cfg.form,
        "dataset": {"model": ds.model, "seed": int(float(ds.config.get("seed", cfg.seed))),
                    "frames": int(ds.n_frames), "measurements": int(len(ds.track_t))},
        "seed": int(cfg.seed),
        "frames_processed": int(len(rows)),
        "translation_rmse_m": _clean(t),
        "rotation_rmse_deg": _clean(r),
        "dead_reckoning": {"translation_rmse_m": _clean(dr_t), "rotation_rmse_deg": _clean(dr_r)},
        "gn_iterations": int(stats.get("gn_iterations", 0)),
        "marginalizations": int(stats.get("marginalizations", 0)),
        "diverged": bool(diverged),
        "divergence_reason": reason,
        "runtime_s": float(runtime),
    }
    return metrics, drift


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> RunResult:
    """Run, score and (when ``out_dir`` is set) write the result bundle.

    Divergence does not raise: the frames processed so far are scored and
    the metrics carry ``diverged: true``.
    """
    ds = dataset if dataset is not None else load_dataset(config.dataset)
    sched = config.schedule
    stats: dict = {}
    lines = [f"unislam {__version__} run: estimator={sched.label} form={config.form} "
             f"model={ds.model} frames={ds.n_frames}"]
    diverged, reason = False, ""
    t0 = time.perf_counter()
    try:
        if ds.model == "planar2d":
            rows = _run_planar(ds, sched, config, stats, lines)
        else:
            rows = _run_stereo(ds, sched, config, stats, lines)
    except _Partial as p:
        rows, diverged, reason = p.rows, True, f"{type(p.cause).__name__}: {p.cause}"
    except DIVERGENCE as exc:
        rows, diverged, reason = [], True, f"{type(exc).__name__}: {exc}"
    runtime = time.perf_counter() - t0
    if diverged:
        lines.append(f"diverged after {len(rows)} frame(s): {reason}")
    metrics, drift = build_metrics(ds, sched, config, rows, stats, diverged, runtime, reason)
    lines.append(f"frames processed: {len(rows)}")
    lines.append(f"translation RMSE [m]: {metrics['translation_rmse_m']}")
    lines.append(f"dead-reckoning translation RMSE [m]: {metrics['dead_reckoning']['translation_rmse_m']}")
    est = np.asarray(rows, dtype=float).reshape(len(rows), ds.gt.shape[1])
    result = RunResult(est, metrics, drift, lines)
    if config.out_dir is not None:
        write_result(result, ds, config.out_dir)
    return result


# --- files ----------------------------------------------------------------------

def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"


def write_result(result: RunResult, ds: Dataset, out_dir):
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    t = ds.gt_t[:len(result.estimate)]
    write_csv(d / "estimate.csv", "estimate", ds.model, ([ti, *x] for ti, x in zip(t, result.estimate)))
    write_csv(d / "drift.csv", "drift", ds.model, result.drift)
    (d / "metrics.json").write_text(metrics_json(result.metrics), encoding="utf-8")
    (d / "run.log").write_text("\n".join(result.log_lines) + "\n", encoding="utf-8")
    return d


def evaluate_estimate(ds: Dataset, estimate_rows) -> dict:
    """Scores for an estimate file's rows (time first) against a dataset."""
    rows = np.atleast_2d(np.asarray(estimate_rows, dtype=float))
    if rows.shape[1] != ds.gt.shape[1] + 1:
        raise DataError(f"estimate rows have {rows.shape[1]} columns, expected {ds.gt.shape[1] + 1}")
    est = Trajectory.from_rows(rows)
    gt = Trajectory.from_rows(np.column_stack([ds.gt_t, ds.gt]))
    al = umeyama_align(est, gt)
    aligned = al.apply_trajectory(est)
    t, r = rmse(aligned, gt)
    return {"schema": METRICS_SCHEMA, "schema_version": METRICS_VERSION,
            "translation_rmse_m": _clean(t), "rotation_rmse_deg": _clean(r),
            "drift": [[m, e] for m, e in drift_curve(aligned, gt)], "poses": int(len(rows))}
