"""Manifold arithmetic on R^n, unit quaternions, SO(3) and their products.

Quaternions are stored scalar-first as ``(w, x, y, z)``. The product is
chosen so that ``quat_to_rot(p * q) == quat_to_rot(p) @ quat_to_rot(q)``,
which keeps quaternion and matrix perturbations interchangeable.
Perturbations always compose on the right: ``x [+] d = x * Exp(d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SMALL_ANGLE = 1e-6
_I3 = np.eye(3)


class ManifoldDomainError(ValueError):
    """Rotation outside the chart used by Exp/Log."""


class StructureError(ValueError):
    """Points or tangent vectors with mismatched structure."""


def skew(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def _check_chart(theta):
    if theta >= np.pi:
        raise ManifoldDomainError(f"rotation angle {theta:.6g} outside the chart (must be < pi)")


# --- quaternions -------------------------------------------------------------

def quat_mul(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _unit4(q):
    """Normalized quaternion components as Python floats."""
    w, x, y, z = (float(c) for c in q)
    n = math.hypot(w, x, y, z)
    if not math.isfinite(n) or n == 0.0:
        raise ManifoldDomainError("cannot normalize a zero or non-finite quaternion")
    return w / n, x / n, y / n, z / n


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        return q / _checked_norm(q)
    return np.array(_unit4(q))


def _checked_norm(q):
    n = float(np.linalg.norm(q))
    if not math.isfinite(n) or n == 0.0:
        raise ManifoldDomainError("cannot normalize a zero or non-finite quaternion")
    return n


def quat_exp(omega):
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (3,):
        raise StructureError(f"expected a 3-vector, got shape {omega.shape}")
    x, y, z = omega.tolist()
    theta = math.hypot(x, y, z)
    _check_chart(theta)
    if theta < SMALL_ANGLE:
        # sin(t/2)/t ~ 1/2 - t^2/48
        half_sinc = 0.5 - theta * theta / 48.0
        w = 1.0 - theta * theta / 8.0
    else:
        half_sinc = math.sin(0.5 * theta) / theta
        w = math.cos(0.5 * theta)
    return np.array(_unit4((w, half_sinc * x, half_sinc * y, half_sinc * z)))


def quat_log(q):
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise StructureError(f"expected a 4-vector, got shape {q.shape}")
    w, x, y, z = _unit4(q)
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.hypot(x, y, z)
    theta = 2.0 * math.atan2(s, w)
    if abs(theta - math.pi) <= 1e-12:
        raise ManifoldDomainError("rotation angle equals pi; Log is undefined on the chart boundary")
    if s < SMALL_ANGLE:
        # 2 atan(s/w)/s ~ (2/w)(1 - s^2/(3 w^2))
        k = (2.0 / w) * (1.0 - s * s / (3.0 * w * w))
    else:
        k = theta / s
    return np.array([k * x, k * y, k * z])


def quat_to_rot(q):
    w, x, y, z = _unit4(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    """Shepperd's method; returns the scalar-nonnegative representative."""
    (r00, r01, r02), (r10, r11, r12), (r20, r21, r22) = np.asarray(R, dtype=float).tolist()
    tr = r00 + r11 + r22
    diag = (tr, r00, r11, r22)
    k = diag.index(max(diag))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = (0.25 * s, (r21 - r12) / s, (r02 - r20) / s, (r10 - r01) / s)
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + r00 - r11 - r22)
        q = ((r21 - r12) / s, 0.25 * s, (r01 + r10) / s, (r02 + r20) / s)
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 - r00 + r11 - r22)
        q = ((r02 - r20) / s, (r01 + r10) / s, 0.25 * s, (r12 + r21) / s)
    else:
        s = 2.0 * math.sqrt(1.0 - r00 - r11 + r22)
        q = ((r10 - r01) / s, (r02 + r20) / s, (r12 + r21) / s, 0.25 * s)
    w, x, y, z = _unit4(q)
    return np.array([-w, -x, -y, -z] if w < 0.0 else [w, x, y, z])


# --- SO(3) -------------------------------------------------------------------

def so3_exp(omega):
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (3,):
        raise StructureError(f"expected a 3-vector, got shape {omega.shape}")
    x, y, z = omega.tolist()
    theta = math.hypot(x, y, z)
    _check_chart(theta)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    # I + a W + b W^2 with W^2 = w w^T - |w|^2 I
    t2 = theta * theta
    return np.array([
        [1.0 + b * (x * x - t2), b * x * y - a * z, b * x * z + a * y],
        [b * x * y + a * z, 1.0 + b * (y * y - t2), b * y * z - a * x],
        [b * x * z - a * y, b * y * z + a * x, 1.0 + b * (z * z - t2)],
    ])


def so3_log(R):
    return quat_log(rot_to_quat(R))


def orthonormalize(R):
    """Nearest rotation; matrices already orthonormal to 1e-13 pass through."""
    if np.abs(R.T @ R - _I3).max() <= 1e-13:
        (a, b, c), (d, e, f), (g, h, i) = R.tolist()
        if a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g) > 0.0:
            return R
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0.0:
        U[:, -1] *= -1.0
        out = U @ Vt
    return out


def jacobian_right(theta):
    theta = np.asarray(theta, dtype=float)
    t = math.hypot(*theta)
    W = skew(theta)
    if t < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 6.0
    return (np.eye(3) - (1.0 - np.cos(t)) / t**2 * W + (t - np.sin(t)) / t**3 * (W @ W))


def jacobian_left(theta):
    return jacobian_right(-np.asarray(theta, dtype=float))


def inv_jacobian_left(theta):
    theta = np.asarray(theta, dtype=float)
    t = math.hypot(*theta)
    _check_chart(t)
    W = skew(theta)
    if t < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    c = 1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t))
    return np.eye(3) - 0.5 * W + c * (W @ W)


def inv_jacobian_right(theta):
    return inv_jacobian_left(-np.asarray(theta, dtype=float))


# --- manifold points ---------------------------------------------------------

class ManifoldPoint:
    """Base class. Subclasses are immutable."""

    dim: int

    def boxplus(self, delta):
        raise NotImplementedError

    def boxminus(self, other):
        raise NotImplementedError

    def _delta(self, delta):
        delta = np.asarray(delta, dtype=float).reshape(-1)
        if delta.shape[0] != self.dim:
            raise StructureError(f"perturbation of length {delta.shape[0]} for a point of dimension {self.dim}")
        return delta

    def _same(self, other):
        if type(other) is not type(self) or other.dim != self.dim:
            raise StructureError(f"cannot compare {self!r} with {other!r}")

    def __add__(self, delta):
        return self.boxplus(delta)

    def __sub__(self, other):
        return self.boxminus(other)


@dataclass(frozen=True, eq=False)
class Euclidean(ManifoldPoint):
    value: np.ndarray

    def __post_init__(self):
        v = np.array(self.value, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "value", v)

    @property
    def dim(self):
        return self.value.shape[0]

    def boxplus(self, delta):
        return Euclidean(self.value + self._delta(delta))

    def boxminus(self, other):
        self._same(other)
        return self.value - other.value

    def __repr__(self):
        return f"Euclidean({self.value.tolist()})"


@dataclass(frozen=True, eq=False)
class Quat(ManifoldPoint):
    q: np.ndarray

    def __post_init__(self):
        q = quat_normalize(np.array(self.q, dtype=float).reshape(-1))
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    dim = 3

    @property
    def rotation(self):
        return quat_to_rot(self.q)

    def boxplus(self, delta):
        return Quat(quat_mul(self.q, quat_exp(self._delta(delta))))

    def boxminus(self, other):
        self._same(other)
        return quat_log(quat_mul(quat_conj(other.q), self.q))

    def __repr__(self):
        return f"Quat({self.q.tolist()})"


@dataclass(frozen=True, eq=False)
class Rot(ManifoldPoint):
    R: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    dim = 3

    def boxplus(self, delta):
        return Rot(orthonormalize(self.R @ so3_exp(self._delta(delta))))

    def boxminus(self, other):
        self._same(other)
        return so3_log(other.R.T @ self.R)

    def __repr__(self):
        return f"Rot({self.R.tolist()})"


@dataclass(frozen=True, eq=False)
class Product(ManifoldPoint):
    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        for p in parts:
            if not isinstance(p, ManifoldPoint):
                raise StructureError(f"product component {p!r} is not a manifold point")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "_dim", sum(p.dim for p in parts))

    @property
    def dim(self):
        return self._dim

    def _split(self, delta):
        out, i = [], 0
        for p in self.parts:
            out.append(delta[i:i + p.dim])
            i += p.dim
        return out

    def boxplus(self, delta):
        delta = self._delta(delta)
        return Product(tuple(p.boxplus(d) for p, d in zip(self.parts, self._split(delta))))

    def boxminus(self, other):
        if not isinstance(other, Product) or len(other.parts) != len(self.parts):
            raise StructureError(f"cannot compare {self!r} with {other!r}")
        if not self.parts:
            return np.zeros(0)
        return np.concatenate([a.boxminus(b) for a, b in zip(self.parts, other.parts)])

    def __getitem__(self, i):
        return self.parts[i]

    def __len__(self):
        return len(self.parts)

    def __repr__(self):
        return f"Product({', '.join(map(repr, self.parts))})"


def boxplus(x: ManifoldPoint, delta) -> ManifoldPoint:
    return x.boxplus(delta)


def boxminus(y: ManifoldPoint, x: ManifoldPoint) -> np.ndarray:
    return y.boxminus(x)


def _rotational(p):
    return isinstance(p, (Quat, Rot))


def boxminus_jacobians(y: ManifoldPoint, x: ManifoldPoint):
    """Exact Jacobians of ``y [-] x`` w.r.t. right perturbations of y and of x."""
    if isinstance(y, Product):
        if not isinstance(x, Product) or len(x.parts) != len(y.parts):
            raise StructureError("structure mismatch")
        pairs = [boxminus_jacobians(a, b) for a, b in zip(y.parts, x.parts)]
        return block_diag([p[0] for p in pairs]), block_diag([p[1] for p in pairs])
    if _rotational(y):
        e = y.boxminus(x)
        return inv_jacobian_right(e), -inv_jacobian_left(e)
    n = y.dim
    return np.eye(n), -np.eye(n)


def rotational_mask(x: ManifoldPoint) -> np.ndarray:
    """Boolean mask of tangent coordinates that belong to rotation components."""
    if isinstance(x, Product):
        if not x.parts:
            return np.zeros(0, dtype=bool)
        return np.concatenate([rotational_mask(p) for p in x.parts])
    return np.full(x.dim, _rotational(x))


def rotational_slices(x: ManifoldPoint, offset=0):
    """Tangent index ranges of the 3-dof rotation components of x."""
    if isinstance(x, Product):
        out = []
        for p in x.parts:
            out.extend(rotational_slices(p, offset))
            offset += p.dim
        return out
    return [slice(offset, offset + 3)] if _rotational(x) else []


def block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    i = j = 0
    for m in mats:
        out[i:i + m.shape[0], j:j + m.shape[1]] = m
        i += m.shape[0]
        j += m.shape[1]
    return out
