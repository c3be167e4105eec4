"""Estimator presets: which primitives run, how often, over which window."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from .window import FEATURE_POLICIES

KINDS = ("ekf", "iekf", "swf", "msckf", "imsckf", "keyframe")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorSchedule:
    """Window sizes, Gauss-Newton budget and feature handling for one estimator.

    ``gn_iters=None`` means iterate until the step is negligible.
    """

    kind: str
    n: int = 5
    k: int = 5
    n_max: int = 5
    gn_iters: int | None = 1
    feature_policy: str = "oldest_frame"
    threshold: float = 0.6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown estimator kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.n < 1:
            raise ScheduleError("window size n must be at least 1")
        if self.k < 0:
            raise ScheduleError("keyframe window k must be non-negative")
        if self.kind in ("msckf", "imsckf") and self.n_max < 2:
            raise ScheduleError("N_max must be at least 2")
        if self.gn_iters is not None and self.gn_iters < 1:
            raise ScheduleError("gn_iters must be positive, or None for convergence")
        if self.feature_policy not in FEATURE_POLICIES:
            raise ScheduleError(f"unknown feature policy {self.feature_policy!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ScheduleError("keyframe threshold must lie in [0, 1]")
        if self.kind in ("ekf", "iekf") and self.n != 1:
            raise ScheduleError(f"{self.kind} keeps a single pose; n must be 1")

    @classmethod
    def preset(cls, kind, **overrides):
        """Defaults per kind; explicit ``None`` values in ``overrides`` are ignored."""
        base = {
            "ekf": dict(n=1, gn_iters=1),
            "iekf": dict(n=1, gn_iters=None),
            "swf": dict(n=5, gn_iters=None),
            "msckf": dict(n_max=5, gn_iters=1),
            "imsckf": dict(n_max=5, gn_iters=None),
            "keyframe": dict(n=5, k=5, gn_iters=None),
        }
        if kind not in base:
            raise ScheduleError(f"unknown estimator kind {kind!r}; expected one of {', '.join(KINDS)}")
        params = dict(base[kind])
        params.update({key: v for key, v in overrides.items() if v is not None})
        return cls(kind, **params)

    @property
    def iterated(self):
        return self.gn_iters is None or self.gn_iters > 1

    @property
    def label(self):
        if self.kind == "swf":
            return f"SWF-{self.n}"
        if self.kind in ("msckf", "imsckf"):
            return f"{self.kind.upper()}-{self.n_max}"
        if self.kind == "keyframe":
            return f"KF-{self.n}+{self.k}"
        return "iEKF" if self.kind == "iekf" else self.kind.upper()

    def to_dict(self):
        return asdict(self)

    def with_(self, **changes):
        return replace(self, **changes)
