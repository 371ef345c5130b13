"""Sensors (motion capture, gyroscope, gimballed camera) and the colour tracker."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .spatial import Geometry, dcm_wb

# colour bands (lower, upper) in RGB; a vertex belongs to a band when any face
# touching it has a colour inside the band
COLOUR_BANDS = {
    "red": ((0.4, 0.0, 0.0), (1.0, 0.0, 0.0)),
    "green": ((0.0, 0.4, 0.0), (0.0, 1.0, 0.0)),
    "blue": ((0.0, 0.0, 0.4), (0.0, 0.0, 1.0)),
}
BAND_NAMES = tuple(COLOUR_BANDS)


@dataclass
class CameraParams:
    focal_length: float = 400.0
    aspect: float = 4.0 / 3.0
    half_fov: float = math.radians(45.0)
    detect_radius: float = 70.0
    drop_radius: float = 0.25

    def __post_init__(self):
        if self.focal_length <= 0 or self.aspect <= 0 or self.detect_radius <= 0:
            raise ValueError("focal length, aspect and detection radius must be positive")
        if not 0 < self.half_fov < math.pi / 2:
            raise ValueError("half field of view must lie in (0, pi/2)")

    @property
    def x_limit(self) -> float:
        return self.focal_length * math.tan(self.half_fov)

    @property
    def y_limit(self) -> float:
        return self.focal_length / self.aspect * math.tan(self.half_fov)

    def packed(self) -> np.ndarray:
        return np.array([self.focal_length, self.x_limit, self.y_limit,
                         self.detect_radius, self.drop_radius])


@dataclass(frozen=True)
class Detection:
    found: bool
    centroid: tuple | None = None
    colour: str | None = None


def in_band(colour, band: str) -> bool:
    lo, hi = COLOUR_BANDS[band]
    return all(lo[i] <= colour[i] <= hi[i] for i in range(3))


def band_mask(geometry: Geometry) -> np.ndarray:
    """Bit mask per vertex: bit k set when the vertex belongs to band k."""
    masks = np.zeros(len(geometry.vertices), dtype=np.int64)
    for i, colours in enumerate(geometry.vertex_colours()):
        for k, name in enumerate(BAND_NAMES):
            if any(in_band(c, name) for c in colours):
                masks[i] |= 1 << k
    return masks


def mocap_measure(state):
    """Motion capture: exact position and attitude."""
    return np.array(state.r, dtype=float), np.array(state.eta, dtype=float)


def imu_measure(state):
    """Gyroscope: exact body angular rates."""
    return np.array(state.omega, dtype=float)


# ----------------------------------------------------------------------------
# compiled kernels

@njit(cache=True)
def camera_dcm(phi_g, theta_g):
    """Body-to-camera rotation for the given gimbal angles."""
    sf, cf = math.sin(phi_g), math.cos(phi_g)
    st, ct = math.sin(theta_g), math.cos(theta_g)
    R = np.empty((3, 3))
    R[0, 0] = st
    R[0, 1] = -sf * ct
    R[0, 2] = cf * ct
    R[1, 0] = 0.0
    R[1, 1] = cf
    R[1, 2] = sf
    R[2, 0] = -ct
    R[2, 1] = -sf * st
    R[2, 2] = cf * st
    return R


@njit(cache=True)
def world_to_camera(points, quad, gimbal, cam_offset):
    """Camera-frame coordinates of world points, shape (n, 3)."""
    Rwb = dcm_wb(quad[6], quad[7], quad[8])
    Rbc = camera_dcm(gimbal[0], gimbal[1])
    M = Rbc @ Rwb
    off = Rbc @ cam_offset
    out = np.empty((points.shape[0], 3))
    for i in range(points.shape[0]):
        d0 = points[i, 0] - quad[0]
        d1 = points[i, 1] - quad[1]
        d2 = points[i, 2] - quad[2]
        for j in range(3):
            out[i, j] = M[j, 0] * d0 + M[j, 1] * d1 + M[j, 2] * d2 + off[j]
    return out


@njit(cache=True)
def target_vertices_world(targets, owner, local):
    """World positions of stacked target vertices; ``owner[i]`` is the target index."""
    out = np.empty_like(local)
    for i in range(local.shape[0]):
        t = targets[owner[i]]
        R = dcm_wb(t[6], t[7], t[8])
        for j in range(3):
            out[i, j] = R[0, j] * local[i, 0] + R[1, j] * local[i, 1] + R[2, j] * local[i, 2] + t[j]
    return out


@njit(cache=True)
def detect_kernel(points, masks, quad, gimbal, cam_offset, cam, drop_site):
    """Colour-band tracker; returns (found, cx, cy, band index or -1, any centroid)."""
    f = cam[0]
    xl = cam[1]
    yl = cam[2]
    rc = cam[3]
    pc = world_to_camera(points, quad, gimbal, cam_offset)
    sx = np.zeros(3)
    sy = np.zeros(3)
    cnt = np.zeros(3)
    for i in range(points.shape[0]):
        vx = pc[i, 0]
        if vx <= 0.0:
            continue
        x = f * pc[i, 1] / vx
        y = -f * pc[i, 2] / vx
        if abs(x) > xl or abs(y) > yl:
            continue
        for k in range(3):
            if masks[i] & (1 << k):
                sx[k] += x
                sy[k] += y
                cnt[k] += 1.0
    # drop-site image point and projected drop-zone radius
    ds = np.empty((1, 3))
    ds[0, 0] = drop_site[0]
    ds[0, 1] = drop_site[1]
    ds[0, 2] = drop_site[2]
    dc = world_to_camera(ds, quad, gimbal, cam_offset)
    Rwb = dcm_wb(quad[6], quad[7], quad[8])
    zc = quad[2] - (Rwb[0, 2] * cam_offset[0] + Rwb[1, 2] * cam_offset[1] + Rwb[2, 2] * cam_offset[2])
    mask_r = f * cam[4] / abs(zc) if zc != 0.0 else np.inf
    have_ds = dc[0, 0] > 0.0
    dsx = f * dc[0, 1] / dc[0, 0] if have_ds else 0.0
    dsy = -f * dc[0, 2] / dc[0, 0] if have_ds else 0.0
    best = -1
    bx = 0.0
    by = 0.0
    bd = np.inf
    for k in range(3):
        if cnt[k] == 0.0:
            continue
        cx = sx[k] / cnt[k]
        cy = sy[k] / cnt[k]
        if have_ds and math.hypot(cx - dsx, cy - dsy) < mask_r:
            continue
        d = math.hypot(cx, cy)
        if d < bd:
            bd = d
            best = k
            bx = cx
            by = cy
    return bd < rc, bx, by, best


# ----------------------------------------------------------------------------
# public wrappers

def project_vertices(world_vertices, quad_state, gimbal, cam: CameraParams,
                     camera_offset=(0.0, 0.0, 0.1)):
    """Image coordinates of the visible vertices.

    Returns
    -------
    list of (int, ndarray)
        Vertex index and its (x_c, y_c) image position for every vertex in
        front of the image plane and inside the field of view.
    """
    pts = np.atleast_2d(np.asarray(world_vertices, dtype=float))
    q = _quad_vector(quad_state)
    pc = world_to_camera(pts, q, np.asarray(gimbal, float), np.asarray(camera_offset, float))
    return project_camera_points(pc, cam)


def project_camera_points(camera_points, cam: CameraParams):
    """Pinhole projection of camera-frame points with the visibility limits."""
    out = []
    f = cam.focal_length
    for i, (vx, vy, vz) in enumerate(np.atleast_2d(camera_points)):
        if vx <= 0:
            continue
        x, y = f * vy / vx, -f * vz / vx
        if abs(x) <= cam.x_limit and abs(y) <= cam.y_limit:
            out.append((i, np.array([x, y])))
    return out


def detect_targets(projections, colours, cam: CameraParams, drop_site_image=None,
                   camera_height: float | None = None) -> Detection:
    """Centroid tracker over projected vertices.

    Parameters
    ----------
    projections : list of (int, array_like)
        Output of :func:`project_vertices`.
    colours : sequence
        For each vertex index, an iterable of RGB colours of its faces.
    drop_site_image : array_like, optional
        Image position of the drop site; centroids closer to it than the
        projected drop-zone radius are ignored.
    camera_height : float, optional
        World z of the camera, needed with ``drop_site_image``.
    """
    groups: dict[str, list] = {name: [] for name in BAND_NAMES}
    for idx, xy in projections:
        for name in BAND_NAMES:
            if any(in_band(c, name) for c in colours[idx]):
                groups[name].append(np.asarray(xy, dtype=float))
    mask_r = None
    if drop_site_image is not None and camera_height:
        mask_r = cam.focal_length * cam.drop_radius / abs(camera_height)
    best = None
    for name, pts in groups.items():
        if not pts:
            continue
        c = np.mean(pts, axis=0)
        if mask_r is not None and np.hypot(*(c - np.asarray(drop_site_image))) < mask_r:
            continue
        if best is None or np.hypot(*c) < np.hypot(*best[0]):
            best = (c, name)
    if best is None:
        return Detection(False)
    c, name = best
    return Detection(bool(np.hypot(*c) < cam.detect_radius), (float(c[0]), float(c[1])), name)


def _quad_vector(state) -> np.ndarray:
    if hasattr(state, "packed"):
        return state.packed()
    return np.asarray(state, dtype=float)
