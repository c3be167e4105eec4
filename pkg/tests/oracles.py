"""Reference computations that share no code with the package.

Each oracle is written from textbook formulas with plain numpy so that a
bug in the library cannot leak into the expected values. The frozen
numbers in the tests were produced by running these functions once.
"""

import math

import numpy as np


def hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rodrigues(w):
    """Rotation matrix of the axis-angle vector w."""
    w = np.asarray(w, dtype=float)
    th = np.linalg.norm(w)
    if th == 0.0:
        return np.eye(3)
    K = hat(w / th)
    return np.eye(3) + math.sin(th) * K + (1.0 - math.cos(th)) * K @ K


def quat_closed_form(w):
    """(cos(t/2), sin(t/2) * axis), scalar first."""
    w = np.asarray(w, dtype=float)
    th = np.linalg.norm(w)
    if th == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return np.concatenate([[math.cos(th / 2)], math.sin(th / 2) * w / th])


def expm_series(A, terms=40):
    """Matrix exponential by scaling and squaring a truncated Taylor series."""
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, 1)
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    B = A / (2 ** s)
    out = np.eye(len(A))
    term = np.eye(len(A))
    for k in range(1, terms):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def left_jacobian_fd(w, h=1e-6):
    """J_l(w) from Exp(w + d) ~ Exp(J_l d) Exp(w), by central differences."""
    R0 = rodrigues(w)
    J = np.zeros((3, 3))
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        Rp = rodrigues(np.asarray(w) + d) @ R0.T
        Rm = rodrigues(np.asarray(w) - d) @ R0.T
        vp = np.array([Rp[2, 1] - Rp[1, 2], Rp[0, 2] - Rp[2, 0], Rp[1, 0] - Rp[0, 1]]) / 2
        vm = np.array([Rm[2, 1] - Rm[1, 2], Rm[0, 2] - Rm[2, 0], Rm[1, 0] - Rm[0, 1]]) / 2
        J[:, i] = (vp - vm) / (2 * h)
    return J


def gaussian_marginal(mu, Lambda, keep):
    """Marginal (mean, cov) of N(mu, inv(Lambda)) via the Schur complement."""
    n = len(mu)
    keep = list(keep)
    drop = [i for i in range(n) if i not in keep]
    A = Lambda[np.ix_(keep, keep)]
    B = Lambda[np.ix_(keep, drop)]
    D = Lambda[np.ix_(drop, drop)]
    S = A - B @ np.linalg.solve(D, B.T)
    return np.asarray(mu)[keep], np.linalg.inv(S)


def kalman_update(mu, P, H, R, innovation):
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    return mu + K @ innovation, (np.eye(len(mu)) - K @ H) @ P


def unicycle_endpoint(v, w, theta0, T):
    """Exact endpoint of constant-input unicycle motion from the origin."""
    if w == 0.0:
        return np.array([v * T * math.cos(theta0), v * T * math.sin(theta0), theta0])
    th = theta0 + w * T
    return np.array([v / w * (math.sin(th) - math.sin(theta0)),
                     -v / w * (math.cos(th) - math.cos(theta0)), th])


def pinhole_disparity(fx, baseline, depth):
    return fx * baseline / depth


def rmse_by_hand(errors):
    return math.sqrt(sum(e * e for e in errors) / len(errors))
