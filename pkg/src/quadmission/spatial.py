"""Reference-frame maths and polygonal target geometry.

World frame W has z pointing down, so gravity acts along +z. Attitudes are
roll-pitch-yaw Euler angles (phi, theta, psi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

#: Guard on |theta| below which the Euler-rate map is considered singular.
GIMBAL_LOCK_MARGIN = 1e-6


class SingularAttitudeError(ValueError):
    """Raised when the Euler-rate map is requested too close to theta = +-pi/2."""


@dataclass(frozen=True)
class EulerAngles:
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi], dtype=float)


@dataclass(frozen=True)
class Pose:
    position: tuple = (0.0, 0.0, 0.0)
    attitude: EulerAngles = field(default_factory=EulerAngles)


@njit(cache=True)
def dcm_wb(phi, theta, psi):
    """World-to-body direction cosine matrix for roll-pitch-yaw angles."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    R = np.empty((3, 3))
    R[0, 0] = ct * cp
    R[0, 1] = ct * sp
    R[0, 2] = -st
    R[1, 0] = sf * st * cp - cf * sp
    R[1, 1] = sf * st * sp + cf * cp
    R[1, 2] = sf * ct
    R[2, 0] = cf * st * cp + sf * sp
    R[2, 1] = cf * st * sp - sf * cp
    R[2, 2] = cf * ct
    return R


@njit(cache=True)
def euler_rates(phi, theta, p, q, r):
    """Euler angle rates from body angular rates (theta must be away from +-pi/2)."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct = math.cos(theta)
    tt = math.tan(theta)
    return (p + sf * tt * q + cf * tt * r,
            cf * q - sf * r,
            (sf * q + cf * r) / ct)


def _angles(eta) -> tuple[float, float, float]:
    if isinstance(eta, EulerAngles):
        return eta.phi, eta.theta, eta.psi
    phi, theta, psi = (float(a) for a in eta)
    return phi, theta, psi


def dcm_world_to_body(eta) -> np.ndarray:
    """Direction cosine matrix R such that v_body = R v_world.

    Parameters
    ----------
    eta : EulerAngles or sequence of 3 floats
        Roll, pitch and yaw in radians.

    Returns
    -------
    ndarray, shape (3, 3)
        Orthonormal matrix; its transpose maps body vectors to the world frame.
    """
    phi, theta, psi = _angles(eta)
    return dcm_wb(phi, theta, psi)


def euler_rate_map(eta) -> np.ndarray:
    """Matrix mapping body angular rates to Euler angle rates.

    Raises
    ------
    SingularAttitudeError
        If |theta| is within ``GIMBAL_LOCK_MARGIN`` of pi/2.
    """
    phi, theta, _ = _angles(eta)
    if abs(theta) >= math.pi / 2 - GIMBAL_LOCK_MARGIN:
        raise SingularAttitudeError(f"pitch {theta!r} too close to +-pi/2")
    cf, sf = math.cos(phi), math.sin(phi)
    tt, sec = math.tan(theta), 1.0 / math.cos(theta)
    return np.array([[1.0, sf * tt, cf * tt],
                     [0.0, cf, -sf],
                     [0.0, sf * sec, cf * sec]])


def vertex_to_world(v_local, pose: Pose) -> np.ndarray:
    """Express a body-frame vertex in the world frame."""
    R = dcm_world_to_body(pose.attitude)
    return R.T @ np.asarray(v_local, dtype=float) + np.asarray(pose.position, dtype=float)


def world_to_vertex(v_world, pose: Pose) -> np.ndarray:
    """Inverse of :func:`vertex_to_world`."""
    R = dcm_world_to_body(pose.attitude)
    return R @ (np.asarray(v_world, dtype=float) - np.asarray(pose.position, dtype=float))


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class Geometry:
    """Polygonal body: vertices in the body frame, faces and per-face RGB colours."""

    vertices: np.ndarray
    faces: list
    face_colours: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.face_colours = np.asarray(self.face_colours, dtype=float).reshape(-1, 3)
        n = len(self.vertices)
        if len(self.faces) != len(self.face_colours):
            raise ValueError("one colour per face required")
        for f in self.faces:
            if len(f) == 0 or any(i < 0 or i >= n for i in f):
                raise ValueError(f"bad face {f!r}")
        if np.any(self.face_colours < 0) or np.any(self.face_colours > 1):
            raise ValueError("colours must lie in [0, 1]")

    def vertex_colours(self) -> list[list[np.ndarray]]:
        """Colours of every face touching each vertex."""
        out: list[list[np.ndarray]] = [[] for _ in range(len(self.vertices))]
        for f, c in zip(self.faces, self.face_colours):
            for i in f:
                out[i].append(c)
        return out


RED = (1.0, 0.0, 0.0)
GREEN = (0.0, 1.0, 0.0)
BLUE = (0.0, 0.0, 1.0)


def sphere(radius: float, colour: Sequence[float] = RED) -> Geometry:
    """Icosahedral approximation of a sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v *= radius / np.linalg.norm(v[0])
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return Geometry(v, faces, [colour] * len(faces))


def pyramid(radius: float, colour: Sequence[float] = BLUE) -> Geometry:
    """Square pyramid with base on the bottom (z = +radius) and apex on top."""
    r = radius
    v = [[r, r, r], [r, -r, r], [-r, -r, r], [-r, r, r], [0.0, 0.0, -r]]
    faces = [[0, 1, 2, 3], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return Geometry(v, faces, [colour] * len(faces))


def cuboid(radius: float, colour: Sequence[float] = GREEN) -> Geometry:
    """Cube of half-width ``radius``."""
    r = radius
    v = [[x, y, z] for z in (-r, r) for y in (-r, r) for x in (-r, r)]
    faces = [[0, 1, 3, 2], [4, 5, 7, 6], [0, 1, 5, 4],
             [2, 3, 7, 6], [0, 2, 6, 4], [1, 3, 7, 5]]
    return Geometry(v, faces, [colour] * len(faces))


SHAPES = {"sphere": sphere, "pyramid": pyramid, "cuboid": cuboid}
