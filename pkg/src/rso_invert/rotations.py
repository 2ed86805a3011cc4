"""Rotation representations, SVD orthogonalization, and geodesic angular error.

Euler convention used throughout: XYZ with extrinsic composition
R = Rz(rz) @ Ry(ry) @ Rx(rx), i.e. the X rotation is applied first.
The convention string ``euler-xyz-rzryrx`` is serialized into every
dataset manifest so downstream consumers can audit it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EULER_CONVENTION",
    "EulerXYZ",
    "Rotation",
    "DegenerateRotationError",
    "euler_to_matrix",
    "matrix_to_euler",
    "svd_orthogonalize",
    "geodesic_angle",
    "grid_labels",
    "rot_x",
    "rot_y",
    "rot_z",
]

EULER_CONVENTION = "euler-xyz-rzryrx"

_TWO_PI = 2.0 * math.pi


class DegenerateRotationError(ValueError):
    """Input matrix has rank < 2; the nearest rotation is not unique."""


def _wrap(angle: float) -> float:
    a = math.fmod(angle, _TWO_PI)
    if a < 0.0:
        a += _TWO_PI
    return 0.0 if a == _TWO_PI else a


@dataclass(frozen=True)
class EulerXYZ:
    """XYZ Euler triple in radians, each component wrapped to [0, 2*pi)."""

    rx: float
    ry: float
    rz: float

    def __post_init__(self):
        for name in ("rx", "ry", "rz"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, _wrap(float(v)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rx, self.ry, self.rz)


@dataclass(frozen=True)
class Rotation:
    """Proper rotation matrix (3x3, row-major, det +1)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {m.shape}")
        if np.linalg.norm(m.T @ m - np.eye(3)) > 1e-6:
            raise ValueError("matrix is not orthonormal within 1e-6")
        if abs(np.linalg.det(m) - 1.0) > 1e-6:
            raise ValueError("matrix determinant is not +1 within 1e-6")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def flat(self) -> list[float]:
        """Row-major 9-vector, the manifest / CSV serialization."""
        return [float(v) for v in self.m.reshape(-1)]


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(e: EulerXYZ) -> Rotation:
    """Compose R = Rz(rz) @ Ry(ry) @ Rx(rx) (X applied first)."""
    return Rotation(rot_z(e.rz) @ rot_y(e.ry) @ rot_x(e.rx))


def matrix_to_euler(r: Rotation) -> EulerXYZ:
    """Invert euler_to_matrix.

    At gimbal lock (|cos ry| < 1e-7, i.e. ry = +/- pi/2) the free angle is
    folded into rz and rx is fixed at 0.
    """
    m = r.m
    sy = -m[2, 0]
    sy = min(1.0, max(-1.0, sy))
    cy = math.sqrt(max(0.0, 1.0 - sy * sy))
    if cy < 1e-7:
        ry = math.copysign(math.pi / 2.0, sy)
        rx = 0.0
        rz = math.atan2(-m[0, 1], m[1, 1])
    else:
        ry = math.asin(sy)
        rx = math.atan2(m[2, 1], m[2, 2])
        rz = math.atan2(m[1, 0], m[0, 0])
    return EulerXYZ(rx, ry, rz)


def svd_orthogonalize(m9: np.ndarray) -> Rotation:
    """Project an arbitrary 3x3 matrix to the Frobenius-nearest rotation.

    Computes m9 = U S V^T and returns U diag(1, 1, det(U V^T)) V^T; the
    sign branch uses det(U V^T) rather than det(m9) for robustness near
    singular inputs. Inputs of rank < 2 are rejected.
    """
    m = np.asarray(m9, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    u, s, vt = np.linalg.svd(m)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateRotationError("matrix rank < 2; nearest rotation ill-defined")
    d = np.linalg.det(u @ vt)
    r = u @ np.diag([1.0, 1.0, math.copysign(1.0, d)]) @ vt
    return Rotation(r)


def geodesic_angle(a: Rotation, b: Rotation) -> float:
    """Rotation angle of a^T b in [0, pi], the natural SO(3) distance.

    Equals arccos((trace(a^T b) - 1)/2), but evaluated through atan2 of
    the skew part so the result stays accurate near 0 and pi instead of
    inheriting the sqrt(eps) noise floor of arccos at its endpoints.
    """
    m = a.m.T @ b.m
    cos_t = (float(np.trace(m)) - 1.0) / 2.0
    skew = m - m.T
    sin_t = float(np.sqrt((skew * skew).sum())) / (2.0 * math.sqrt(2.0))
    return math.atan2(sin_t, min(1.0, max(-1.0, cos_t)))


def grid_labels(steps_per_axis: int = 24) -> list[EulerXYZ]:
    """Cartesian Euler grid {2*pi*k/steps} per axis, rx slowest, rz fastest."""
    if steps_per_axis < 1:
        raise ValueError(f"steps_per_axis must be >= 1, got {steps_per_axis}")
    vals = [_TWO_PI * k / steps_per_axis for k in range(steps_per_axis)]
    return [EulerXYZ(rx, ry, rz) for rx in vals for ry in vals for rz in vals]
