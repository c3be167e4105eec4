"""Block-structured states, weighted residual blocks and the running cost."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg

from .manifold import Euclidean, ManifoldPoint, StructureError, boxminus_jacobians

BLOCK_KINDS = ("imu_state", "pose", "feature", "euclidean")
RESIDUAL_KINDS = ("prior", "dynamics", "measurement")
FD_STEP = 1e-6


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class EvaluatorFault(FloatingPointError):
    pass


# --- state -------------------------------------------------------------------

class State:
    """Ordered, immutable collection of named manifold blocks."""

    __slots__ = ("_values", "_kinds", "_layout", "_dim")

    def __init__(self, blocks: Iterable[tuple] = ()):
        values, kinds = {}, {}
        for item in blocks:
            key, value = item[0], item[1]
            kind = item[2] if len(item) > 2 else "euclidean"
            if key in values:
                raise StructureError(f"duplicate block id {key!r}")
            if kind not in BLOCK_KINDS:
                raise StructureError(f"unknown block kind {kind!r}")
            if not isinstance(value, ManifoldPoint):
                raise StructureError(f"block {key!r} is not a manifold point")
            values[key] = value
            kinds[key] = kind
        self._values = values
        self._kinds = kinds
        layout, i = {}, 0
        for key, v in values.items():
            layout[key] = slice(i, i + v.dim)
            i += v.dim
        self._layout = layout
        self._dim = i

    def items(self):
        return [(k, v, self._kinds[k]) for k, v in self._values.items()]

    @property
    def keys(self):
        return list(self._values)

    @property
    def dim(self):
        return self._dim

    @property
    def layout(self) -> Mapping[Hashable, slice]:
        return dict(self._layout)

    def slice(self, key):
        return self._layout[key]

    def kind(self, key):
        return self._kinds[key]

    def __getitem__(self, key):
        return self._values[key]

    def __contains__(self, key):
        return key in self._values

    def __len__(self):
        return len(self._values)

    def __iter__(self):
        return iter(self._values)

    def indices(self, keys) -> np.ndarray:
        if not keys:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(self._layout[k].start, self._layout[k].stop) for k in keys])

    def with_block(self, key, value, kind="euclidean"):
        return State(self.items() + [(key, value, kind)])

    def without(self, keys):
        drop = set(keys)
        return State([it for it in self.items() if it[0] not in drop])

    def select(self, keys):
        return State([(k, self._values[k], self._kinds[k]) for k in keys])

    def replace(self, updates: Mapping):
        return State([(k, updates.get(k, v), kind) for k, v, kind in self.items()])

    def boxplus(self, delta):
        delta = np.asarray(delta, dtype=float).reshape(-1)
        if delta.shape[0] != self._dim:
            raise StructureError(f"perturbation of length {delta.shape[0]} for a state of dimension {self._dim}")
        return State([(k, v.boxplus(delta[self._layout[k]]), kind) for k, v, kind in self.items()])

    def boxminus(self, other: "State"):
        if other.keys != self.keys:
            raise StructureError("states have different block structure")
        if not self._values:
            return np.zeros(0)
        return np.concatenate([self._values[k].boxminus(other[k]) for k in self._values])

    def __repr__(self):
        return f"State({', '.join(f'{k!r}:{self._kinds[k]}' for k in self._values)})"


# --- square roots of information ---------------------------------------------

def sqrt_information(cov) -> np.ndarray:
    """Upper factor W with W.T @ W = inv(cov); fails unless cov is SPD."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        c = scipy.linalg.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not symmetric positive definite") from exc
    info = scipy.linalg.cho_solve(c, np.eye(cov.shape[0]))
    return sqrt_from_information(0.5 * (info + info.T))


def sqrt_from_information(info, rank_tol=None) -> np.ndarray:
    """Square root of an information matrix; rank-deficient input gives fewer rows."""
    info = np.atleast_2d(np.asarray(info, dtype=float))
    try:
        L = np.linalg.cholesky(info)
        return L.T
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(0.5 * (info + info.T))
    tol = (rank_tol if rank_tol is not None else 1e-10) * max(w.max(initial=0.0), 0.0)
    keep = w > tol
    return (np.sqrt(w[keep])[:, None] * V[:, keep].T)


# --- residual blocks ---------------------------------------------------------

@dataclass
class ResidualBlock:
    """One weighted residual sqrt_info @ fn(*blocks).

    ``jac`` returns the unweighted Jacobians of ``fn`` w.r.t. right
    perturbations of each connected block. Without it, central differences
    are used.
    """

    kind: str
    keys: tuple
    sqrt_info: np.ndarray
    fn: Callable[..., np.ndarray]
    jac: Optional[Callable[..., Sequence[np.ndarray]]] = None
    order: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        self.keys = tuple(self.keys)
        self.sqrt_info = np.atleast_2d(np.asarray(self.sqrt_info, dtype=float))

    @property
    def dim(self):
        return self.sqrt_info.shape[0]

    def _values(self, state):
        try:
            return [state[k] for k in self.keys]
        except KeyError as exc:
            raise StructureError(f"residual {self.label or self.kind} references missing block {exc.args[0]!r}") from None

    def raw(self, state):
        return np.asarray(self.fn(*self._values(state)), dtype=float).reshape(-1)

    def evaluate(self, state):
        return self.sqrt_info @ self.raw(state)

    def raw_jacobians(self, state, numeric=False):
        vals = self._values(state)
        if self.jac is not None and not numeric:
            return [np.atleast_2d(np.asarray(J, dtype=float)) for J in self.jac(*vals)]
        return [self._fd(vals, i) for i in range(len(vals))]

    def _fd(self, vals, i):
        x = vals[i]
        cols = []
        for j in range(x.dim):
            d = np.zeros(x.dim)
            d[j] = FD_STEP
            plus = list(vals)
            minus = list(vals)
            plus[i] = x.boxplus(d)
            minus[i] = x.boxplus(-d)
            rp = np.asarray(self.fn(*plus), dtype=float).reshape(-1)
            rm = np.asarray(self.fn(*minus), dtype=float).reshape(-1)
            cols.append((rp - rm) / (2.0 * FD_STEP))
        return np.column_stack(cols) if cols else np.zeros((self.sqrt_info.shape[1], 0))

    def linearize(self, state, numeric=False):
        r = self.evaluate(state)
        Js = [self.sqrt_info @ J for J in self.raw_jacobians(state, numeric)]
        return r, Js


def prior_residual(keys, means: Sequence[ManifoldPoint], cov=None, sqrt_info=None, label="prior"):
    """Residual sqrt_info @ (x [-] mean) over the concatenation of ``keys``."""
    keys = tuple(keys)
    means = tuple(means)
    if sqrt_info is None:
        sqrt_info = sqrt_information(cov)

    def fn(*xs):
        parts = [x.boxminus(m) for x, m in zip(xs, means)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def place(Js):
        n = sum(J.shape[0] for J in Js)
        out, i = [], 0
        for J in Js:
            full = np.zeros((n, J.shape[1]))
            full[i:i + J.shape[0]] = J
            out.append(full)
            i += J.shape[0]
        return out

    if all(isinstance(m, Euclidean) for m in means):
        # linear in every block: the Jacobians never change
        fixed = place([np.eye(m.dim) for m in means])

        def jac(*xs):
            return fixed
    else:
        def jac(*xs):
            return place([boxminus_jacobians(x, m)[0] for x, m in zip(xs, means)])

    return ResidualBlock("prior", keys, sqrt_info, fn, jac, label=label)


def dynamics_residual(key_from, key_to, g, cov, G=None, time=0.0, label="dynamics"):
    """Residual x_to [-] g(x_from). ``G`` is the tangent Jacobian of g, if known."""

    def fn(x0, x1):
        return x1.boxminus(g(x0))

    jac = None
    if G is not None:
        def jac(x0, x1):
            Jy, Jx = boxminus_jacobians(x1, g(x0))
            return [Jx @ G(x0), Jy]

    return ResidualBlock("dynamics", (key_from, key_to), sqrt_information(cov), fn, jac,
                         order=(float(time),), label=label)


def measurement_residual(pose_key, feature_key, z, h, cov, H=None, order=(), label="measurement"):
    """Residual z - h(pose, feature). ``H`` returns (dh/dpose, dh/dfeature)."""
    z = np.asarray(z, dtype=float).reshape(-1)

    def fn(x, f):
        return z - np.asarray(h(x, f), dtype=float).reshape(-1)

    jac = None
    if H is not None:
        def jac(x, f):
            Hx, Hf = H(x, f)
            return [-np.asarray(Hx), -np.asarray(Hf)]

    return ResidualBlock("measurement", (pose_key, feature_key), sqrt_information(cov), fn, jac,
                         order=tuple(order), label=label)


# --- running cost ------------------------------------------------------------

_RANK = {k: i for i, k in enumerate(RESIDUAL_KINDS)}


@dataclass
class RunningCost:
    """A state estimate plus the residual blocks whose squared norm is the cost."""

    state: State
    residuals: list = field(default_factory=list)

    def add(self, residual: ResidualBlock):
        for k in residual.keys:
            if k not in self.state:
                raise StructureError(f"residual {residual.label or residual.kind} references missing block {k!r}")
        self.residuals.append(residual)
        return residual

    def ordered(self):
        idx = sorted(range(len(self.residuals)),
                     key=lambda i: (_RANK[self.residuals[i].kind], self.residuals[i].order, i))
        return [self.residuals[i] for i in idx]

    def copy(self, state=None):
        return RunningCost(self.state if state is None else state, list(self.residuals))

    def touching(self, keys):
        ks = set(keys)
        return [r for r in self.residuals if ks.intersection(r.keys)]

    @property
    def dim(self):
        return sum(r.dim for r in self.residuals)


def _check(cost, x):
    x = cost.state if x is None else x
    if x.keys != cost.state.keys:
        raise StructureError("values do not match the cost's state structure")
    return x


def stack_residuals(cost: RunningCost, x: Optional[State] = None) -> np.ndarray:
    x = _check(cost, x)
    rs = [r.evaluate(x) for r in cost.ordered()]
    return np.concatenate(rs) if rs else np.zeros(0)


def eval_cost(cost: RunningCost, x: Optional[State] = None) -> float:
    C = stack_residuals(cost, x)
    return float(C @ C)


def linearize(cost: RunningCost, x: Optional[State] = None, numeric=False, residuals=None):
    """Stacked residual C and dense Jacobian J at x (right perturbations)."""
    x = _check(cost, x)
    blocks = cost.ordered() if residuals is None else residuals
    rows = sum(r.dim for r in blocks)
    C = np.zeros(rows)
    J = np.zeros((rows, x.dim))
    i = 0
    for r in blocks:
        c, Js = r.linearize(x, numeric)
        C[i:i + r.dim] = c
        for k, Jk in zip(r.keys, Js):
            J[i:i + r.dim, x.slice(k)] += Jk
        i += r.dim
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(J))):
        raise EvaluatorFault("non-finite residual or Jacobian entry")
    return C, J


def jacobian(cost: RunningCost, x: Optional[State] = None, numeric=False) -> np.ndarray:
    return linearize(cost, x, numeric)[1]


# --- Gaussian beliefs ----------------------------------------------------------

@dataclass
class GaussianBelief:
    """Mean state and covariance over its tangent space."""

    mean: State
    cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (self.mean.dim, self.mean.dim):
            raise StructureError(f"covariance {cov.shape} does not match state dimension {self.mean.dim}")
        self.cov = 0.5 * (cov + cov.T)

    def marginal(self, keys):
        idx = self.mean.indices(keys)
        return GaussianBelief(self.mean.select(keys), self.cov[np.ix_(idx, idx)])

    def as_prior(self, label="prior") -> ResidualBlock:
        keys = self.mean.keys
        return prior_residual(keys, [self.mean[k] for k in keys],
                              sqrt_info=sqrt_information(self.cov), label=label)

    def as_cost(self) -> RunningCost:
        cost = RunningCost(self.mean)
        if self.mean.dim:
            cost.add(self.as_prior())
        return cost
