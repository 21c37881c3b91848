"""Gaze-direction geometry.

Conventions used everywhere in the package:

* Camera coordinate system (CCS) in centimeters, the subject sits at +z and
  looks toward the camera, so a gaze straight into the lens is ``(0, 0, -1)``.
* Polar gaze ``(theta, phi)`` in degrees with ``theta = arcsin(-g_y)`` (pitch)
  and ``phi = atan2(-g_x, -g_z)`` (yaw).
* Euler rotations ``(pitch, yaw, roll)`` in degrees compose intrinsically as
  ``Rz(roll) @ Ry(yaw) @ Rx(pitch)``.

All functions broadcast over leading axes: a vector argument may be ``(3,)``
or ``(..., 3)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRay, GimbalLockWarning, OutOfFrustum

MIN_RAY_LENGTH = 1e-6  # cm
GIMBAL_LIMIT_DEG = 89.99


def wrap_degrees(angle):
    """Wrap angles to the half-open interval (-180, 180]."""
    a = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(a == -180.0, 180.0, a)


def normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def gaze_direction(origin, target):
    """Unit vector from ``origin`` toward ``target``.

    Raises:
        DegenerateRay: if any ray is shorter than 1e-6 cm.
    """
    diff = np.asarray(target, dtype=float) - np.asarray(origin, dtype=float)
    length = np.linalg.norm(diff, axis=-1, keepdims=True)
    if np.any(length <= MIN_RAY_LENGTH):
        raise DegenerateRay("gaze origin and target coincide")
    return diff / length


def angular_error(a, b):
    """Angle between gaze directions in degrees, in [0, 180].

    Evaluated as ``atan2(|a x b|, a . b)``, which equals the clamped
    ``arccos`` of the normalized dot product but keeps full precision for
    nearly parallel vectors.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def mean_angular_error(a, b) -> float:
    return float(np.mean(angular_error(a, b)))


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(pitch, yaw=None, roll=None) -> np.ndarray:
    """Rotation matrix ``Rz(roll) @ Ry(yaw) @ Rx(pitch)`` from degrees.

    Accepts three scalars, a length-3 sequence, or an :class:`EulerRot`.
    """
    if yaw is None:
        pitch, yaw, roll = _as_triple(pitch)
    p, y, r = np.radians([pitch, yaw, roll])
    return _rz(r) @ _ry(y) @ _rx(p)


def euler_to_rotation_batch(angles) -> np.ndarray:
    """Vectorized :func:`euler_to_rotation` for an ``(N, 3)`` array of degrees."""
    ang = np.radians(np.asarray(angles, dtype=float))
    cp, sp = np.cos(ang[:, 0]), np.sin(ang[:, 0])
    cy, sy = np.cos(ang[:, 1]), np.sin(ang[:, 1])
    cr, sr = np.cos(ang[:, 2]), np.sin(ang[:, 2])
    out = np.empty((ang.shape[0], 3, 3))
    out[:, 0, 0] = cr * cy
    out[:, 0, 1] = cr * sy * sp - sr * cp
    out[:, 0, 2] = cr * sy * cp + sr * sp
    out[:, 1, 0] = sr * cy
    out[:, 1, 1] = sr * sy * sp + cr * cp
    out[:, 1, 2] = sr * sy * cp - cr * sp
    out[:, 2, 0] = -sy
    out[:, 2, 1] = cy * sp
    out[:, 2, 2] = cy * cp
    return out


def rotation_to_euler(rotation) -> "EulerRot":
    """Inverse of :func:`euler_to_rotation`, yaw in [-90, 90].

    The middle angle of the Z-Y-X composition is yaw, so the decomposition
    is singular at yaw = +-90 deg.  Beyond :data:`GIMBAL_LIMIT_DEG` a
    :class:`GimbalLockWarning` is emitted and roll is fixed at zero.
    """
    m = np.asarray(rotation, dtype=float)
    yaw = np.arctan2(-m[2, 0], np.hypot(m[2, 1], m[2, 2]))
    if abs(np.degrees(yaw)) > GIMBAL_LIMIT_DEG:
        warnings.warn("Euler decomposition at gimbal lock", GimbalLockWarning, stacklevel=2)
        # With roll = 0 the remaining freedom folds into pitch.
        pitch = np.arctan2(m[0, 1] * np.sign(-m[2, 0]), m[1, 1])
        roll = 0.0
    else:
        pitch = np.arctan2(m[2, 1], m[2, 2])
        roll = np.arctan2(m[1, 0], m[0, 0])
    p, y, r = wrap_degrees(np.degrees([pitch, yaw, roll]))
    return EulerRot(float(p), float(y), float(r))


def is_rotation(matrix, tol: float = 1e-9) -> bool:
    m = np.asarray(matrix, dtype=float)
    return bool(
        np.allclose(m @ m.T, np.eye(3), atol=tol, rtol=0.0)
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def screen_to_camera(uv, rotation, translation):
    """Map screen points ``(u, v)`` in cm to camera coordinates.

    ``t_c = R @ [u, v, 0] + T`` for each row of ``uv``.
    """
    uv = np.asarray(uv, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    return uv[..., 0:1] * rotation[:, 0] + uv[..., 1:2] * rotation[:, 1] + np.asarray(
        translation, dtype=float
    )


def vector_to_polar(g):
    """Unit gaze vectors to ``(theta, phi)`` degrees, shape ``(..., 2)``.

    Raises:
        OutOfFrustum: if any vector has ``g_z >= 0``.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g[..., 2] >= 0.0):
        raise OutOfFrustum("gaze direction points away from the camera")
    theta = np.arcsin(np.clip(-g[..., 1], -1.0, 1.0))
    phi = np.arctan2(-g[..., 0], -g[..., 2])
    return np.degrees(np.stack([theta, phi], axis=-1))


def polar_to_vector(polar):
    """``(theta, phi)`` degrees to unit gaze vectors, shape ``(..., 3)``."""
    p = np.radians(np.asarray(polar, dtype=float))
    theta, phi = p[..., 0], p[..., 1]
    ct = np.cos(theta)
    return np.stack([-ct * np.sin(phi), -np.sin(theta), -ct * np.cos(phi)], axis=-1)


def _as_triple(value):
    if isinstance(value, EulerRot):
        return value.pitch, value.yaw, value.roll
    p, y, r = (float(x) for x in value)
    return p, y, r


@dataclass(frozen=True)
class EulerRot:
    """Rotation as ``(pitch, yaw, roll)`` in degrees."""

    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.pitch, self.yaw, self.roll], dtype=float)

    def matrix(self) -> np.ndarray:
        return euler_to_rotation(self.pitch, self.yaw, self.roll)


@dataclass
class Extrinsics:
    """Screen-to-camera transform: rotation (3x3) and translation (cm)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Extrinsics":
        return cls(np.array(d["rotation"]), np.array(d["translation"]))
