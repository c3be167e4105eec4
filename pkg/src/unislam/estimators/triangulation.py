"""Multi-view landmark triangulation at fixed poses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..factors import sqrt_information
from ..manifold import Euclidean, Product


class TriangulationError(ValueError):
    pass


def position_of(pose):
    if isinstance(pose, Product):
        return pose[1].value
    return np.asarray(pose.value)[:2]


@dataclass
class Triangulation:
    point: np.ndarray
    iterations: int
    rms: float


def triangulate_feature(poses, measurements, model, Sigma_v, max_iters=10, tol=1e-12,
                        max_rms=100.0, min_baseline=1e-6):
    """Landmark position from two or more observations at known poses.

    ``model`` supplies ``ell`` (inverse measurement), ``h_point`` and
    ``H_point``. The back-projections are averaged, then refined by at most
    ``max_iters`` Gauss-Newton steps on the whitened measurement residuals.
    """
    if len(poses) != len(measurements):
        raise TriangulationError("need one measurement per pose")
    if len(poses) < 2:
        raise TriangulationError(f"need at least 2 observations, got {len(poses)}")
    pos = np.array([position_of(p) for p in poses])
    baseline = max(np.linalg.norm(a - b) for a in pos for b in pos)
    if baseline <= min_baseline:
        raise TriangulationError(f"baseline {baseline:.3g} m is degenerate")
    f = np.mean([model.ell(p, np.asarray(z, dtype=float)) for p, z in zip(poses, measurements)], axis=0)
    W = sqrt_information(Sigma_v)
    it = 0
    for it in range(1, max_iters + 1):
        fp = Euclidean(f)
        r = np.concatenate([W @ (np.asarray(z) - model.h_point(p, fp)) for p, z in zip(poses, measurements)])
        J = np.vstack([W @ model.H_point(p, fp)[1] for p in poses])
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        if not np.all(np.isfinite(step)):
            raise TriangulationError("non-finite triangulation step")
        f = f + step
        if np.linalg.norm(step) < tol * max(1.0, np.linalg.norm(f)):
            break
    fp = Euclidean(f)
    r = np.concatenate([W @ (np.asarray(z) - model.h_point(p, fp)) for p, z in zip(poses, measurements)])
    rms = float(np.sqrt(np.mean(r * r)))
    if not np.isfinite(rms) or rms > max_rms:
        raise TriangulationError(f"whitened residual rms {rms:.3g} above threshold {max_rms}")
    return Triangulation(f, it, rms)
