"""Gauss-Newton steps and marginalization over a running cost."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .factors import (GaussianBelief, RunningCost, State, eval_cost, linearize,
                      prior_residual, sqrt_from_information)
from .manifold import rotational_slices

RCOND = 1e-10


class DivergenceError(ArithmeticError):
    """A step left the chart of a rotation block or produced non-finite values."""


class UnobservableBlockError(np.linalg.LinAlgError):
    def __init__(self, blocks, message=None):
        self.blocks = list(blocks)
        super().__init__(message or f"marginalized blocks are not observable: {self.blocks!r}")


def _sym(A):
    return 0.5 * (A + A.T)


def pinv_normal(J, rcond=RCOND):
    """(J^T J)^+ and the map C -> J^+ C.

    Eigenvalues of J^T J below ``rcond`` times the largest are dropped. Well
    conditioned problems use a symmetric eigensolver on J^T J; the rest fall
    back to an SVD of J itself, which keeps tiny singular values accurate.
    """
    n = J.shape[1]
    if J.shape[0] == 0 or n == 0:
        return np.zeros((n, n)), np.zeros((n, J.shape[0]))
    H = J.T @ J
    w, V = np.linalg.eigh(H)
    if w[0] > 1e-6 * w[-1] > 0.0:
        cov = _sym((V / w) @ V.T)
        return cov, cov @ J.T
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    s2 = s * s
    keep = s2 > rcond * s2.max() if s2.max() > 0 else np.zeros_like(s, dtype=bool)
    Vk = Vt[keep].T
    cov = _sym((Vk / s2[keep]) @ Vk.T)
    Jpinv = (Vk / s[keep]) @ U[:, keep].T
    return cov, Jpinv


def _check_step(state: State, delta):
    if not np.all(np.isfinite(delta)):
        raise DivergenceError("non-finite Gauss-Newton step")
    for key in state.keys:
        base = state.slice(key).start
        for sl in rotational_slices(state[key], base):
            if np.linalg.norm(delta[sl]) >= np.pi:
                raise DivergenceError(f"rotation step on block {key!r} leaves the chart")


@dataclass
class GaussNewtonReport:
    mean: State
    covariance: np.ndarray
    cost_before: float
    cost_after: float
    iterations: int
    step_norm: float
    gradient_norm: float
    converged: bool = True

    @property
    def belief(self) -> GaussianBelief:
        return GaussianBelief(self.mean, self.covariance)


def gauss_newton_step(cost: RunningCost, x: Optional[State] = None, rcond=RCOND, damping=0.0):
    x = cost.state if x is None else x
    C, J = linearize(cost, x)
    cost_before = float(C @ C)
    cov, Jpinv = pinv_normal(J, rcond)
    if damping > 0.0:
        H = J.T @ J
        delta = -np.linalg.solve(H + damping * np.diag(np.diag(H) + 1e-12), J.T @ C)
    else:
        delta = -(Jpinv @ C)
    _check_step(x, delta)
    mean = x.boxplus(delta)
    cost_after = eval_cost(cost, mean)
    return GaussNewtonReport(mean, cov, cost_before, cost_after, 1,
                             float(np.linalg.norm(delta)), float(np.linalg.norm(J.T @ C)))


def gauss_newton_solve(cost: RunningCost, x0: Optional[State] = None, max_iters=20, tol=1e-9,
                       damping=False, rcond=RCOND):
    """Iterate Gauss-Newton steps until the step norm drops below ``tol``.

    With ``damping`` a Levenberg term starts at zero and grows tenfold
    whenever a step would raise the cost. The reported covariance is taken
    at the returned mean.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    x = cost.state if x0 is None else x0
    C, J = linearize(cost, x)
    first_cost = float(C @ C)
    lam = 0.0
    it = 0
    step_norm = np.inf
    while it < max_iters:
        it += 1
        if lam > 0.0:
            H = J.T @ J
            delta = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), J.T @ C)
        else:
            _, Jpinv = pinv_normal(J, rcond)
            delta = -(Jpinv @ C)
        _check_step(x, delta)
        trial = x.boxplus(delta)
        C_new, J_new = linearize(cost, trial)
        if damping and C_new @ C_new > C @ C:
            lam = 1e-4 if lam == 0.0 else lam * 10.0
            if lam > 1e8:
                break
            continue
        if damping:
            lam = lam / 10.0 if lam > 1e-8 else 0.0
        x, C, J = trial, C_new, J_new
        step_norm = float(np.linalg.norm(delta))
        if step_norm < tol:
            break
    cov, _ = pinv_normal(J, rcond)
    return GaussNewtonReport(x, cov, first_cost, float(C @ C), it, step_norm,
                             float(np.linalg.norm(J.T @ C)), step_norm < tol)


@dataclass
class MarginalizationReport:
    kept_ids: list
    marginalized_ids: list
    mean_K: State
    covariance_K: np.ndarray
    replaced: list = field(default_factory=list)
    linearized: bool = True

    @property
    def belief(self) -> GaussianBelief:
        return GaussianBelief(self.mean_K, self.covariance_K)


def _offending(JM, state, marg, rank_tol):
    bad = []
    for k in marg:
        cols = JM[:, state.slice(k)]
        s = np.linalg.svd(cols, compute_uv=False)
        if s.size == 0 or s.min() <= rank_tol * max(s.max(), 1e-300) or cols.shape[0] < cols.shape[1]:
            bad.append(k)
    return bad or list(marg)


def marginalize(cost: RunningCost, marg_ids, x: Optional[State] = None, fold_priors=True,
                rank_tol=RCOND):
    """Replace every residual touching ``marg_ids`` with one Gaussian prior.

    The prior sits on the kept blocks those residuals connect. With
    ``fold_priors``, prior residuals on those kept blocks are absorbed too,
    so a prior produced by filtering is carried into the new one instead of
    being left beside it. For nonlinear residuals the result is the
    first-order approximation at ``x``.
    """
    x = cost.state if x is None else x
    marg = [k for k in x.keys if k in set(marg_ids)]
    missing = set(marg_ids) - set(marg)
    if missing:
        raise KeyError(f"blocks not in the state: {sorted(map(repr, missing))}")
    mset = set(marg)
    C2 = [r for r in cost.residuals if mset.intersection(r.keys)]
    touched = set(k for r in C2 for k in r.keys)
    lonely = [k for k in marg if k not in touched]
    if lonely:
        raise UnobservableBlockError(lonely, f"blocks not referenced by any residual: {lonely!r}")
    kept = touched - mset
    if fold_priors:
        chosen = set(map(id, C2))
        grew = True
        while grew:
            grew = False
            for r in cost.residuals:
                if id(r) not in chosen and r.kind == "prior" and kept.intersection(r.keys):
                    C2.append(r)
                    chosen.add(id(r))
                    kept.update(r.keys)
                    grew = True
    kept_ids = [k for k in x.keys if k in kept]
    sub = x.select(kept_ids + marg)
    C, J = linearize(RunningCost(sub, C2), sub)
    nK = sum(x[k].dim for k in kept_ids)
    JK, JM = J[:, :nK], J[:, nK:]

    s = np.linalg.svd(JM, compute_uv=False)
    if JM.shape[0] < JM.shape[1] or s.min() <= rank_tol * s.max():
        raise UnobservableBlockError(_offending(JM, sub, marg, rank_tol))
    Q, _ = np.linalg.qr(JM)
    PJK = JK - Q @ (Q.T @ JK)
    PC = C - Q @ (Q.T @ C)
    info = _sym(JK.T @ PJK)
    b = JK.T @ PC
    cov_K, _ = pinv_normal(PJK, rank_tol)
    delta = -(cov_K @ b)
    mean_sub = x.select(kept_ids)
    _check_step(mean_sub, delta)
    mean_K = mean_sub.boxplus(delta)

    new = RunningCost(x.without(marg), [r for r in cost.residuals if all(r is not c for c in C2)])
    if kept_ids:
        W = sqrt_from_information(info, rank_tol)
        new.add(prior_residual(kept_ids, [mean_K[k] for k in kept_ids], sqrt_info=W,
                               label="marginal prior"))
    report = MarginalizationReport(kept_ids, marg, mean_K, cov_K,
                                   [r.label or r.kind for r in C2])
    return report, new
