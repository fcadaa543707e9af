"""Camera pose algebra, pinhole projection, Plücker rays and frustum overlap.

Conventions used throughout the package:

* Camera frame is right-handed: x right, y down, z forward (OpenCV style).
* ``CameraPose.rotation`` is world-from-camera; its columns are the camera
  axes expressed in world coordinates.
* ``CameraPose.center`` is the camera center in world coordinates.
* Intrinsics are normalized: ``u = fx * x / z + cx`` lands in ``[0, 1]``
  across the image width, ``v = fy * y / z + cy`` across the height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Normalized pinhole intrinsics plus the pixel size of the image."""

    fx: float = 0.5
    fy: float = 0.5
    cx: float = 0.5
    cy: float = 0.5
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < 1 and 0 < self.cy < 1):
            raise ValueError(f"principal point must lie in (0, 1), got ({self.cx}, {self.cy})")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @classmethod
    def from_fov(cls, hfov_deg: float, width: int = 128, height: int = 128) -> "Intrinsics":
        """Square-pixel intrinsics with the given horizontal field of view."""
        fx = 0.5 / math.tan(math.radians(hfov_deg) / 2)
        fy = fx * width / height
        return cls(fx=fx, fy=fy, cx=0.5, cy=0.5, width=width, height=height)

    @property
    def hfov_deg(self) -> float:
        return math.degrees(2 * math.atan(0.5 / self.fx))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CameraPose:
    """A rigid camera (world-from-camera rotation, camera center) with intrinsics."""

    rotation: np.ndarray
    center: np.ndarray
    intrinsics: Intrinsics = field(default_factory=Intrinsics)

    def __post_init__(self):
        R = _frozen_array(self.rotation, (3, 3))
        c = _frozen_array(self.center, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(c))):
            raise ValueError("pose contains non-finite values")
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.center, other.center)
            and self.intrinsics == other.intrinsics
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.center.tobytes(), self.intrinsics))

    @classmethod
    def identity(cls, intrinsics: Intrinsics | None = None) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3), intrinsics or Intrinsics())

    @property
    def right(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def down(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def world_to_camera(self) -> np.ndarray:
        """3x4 extrinsic matrix ``[R^T | -R^T c]`` mapping world to camera."""
        Rt = self.rotation.T
        return np.hstack([Rt, (-Rt @ self.center)[:, None]])

    def with_center(self, center) -> "CameraPose":
        return CameraPose(self.rotation, center, self.intrinsics)

    def with_intrinsics(self, intrinsics: Intrinsics) -> "CameraPose":
        return CameraPose(self.rotation, self.center, intrinsics)

    def transformed(self, rotation: np.ndarray, translation) -> "CameraPose":
        """Apply the rigid world motion ``x -> rotation @ x + translation``."""
        rotation = np.asarray(rotation, dtype=np.float64)
        return CameraPose(
            rotation @ self.rotation,
            rotation @ self.center + np.asarray(translation, dtype=np.float64),
            self.intrinsics,
        )


@dataclass(frozen=True)
class OverlapConfig:
    """Parameters of the grid overlap estimator and distance normalization.

    Attributes:
        grid: samples per image axis (``grid**2`` frustum samples).
        sample_depth: depth of the sample plane in the target camera.
        scene_diameter: translation distances are divided by this and clamped to 1.
        distance_weight: weight of the normalized distance in the relevance score.
    """

    grid: int = 16
    sample_depth: float = 1.0
    scene_diameter: float = 1.0
    distance_weight: float = 0.5

    def __post_init__(self):
        if int(self.grid) != self.grid or self.grid < 2:
            raise ValueError(f"grid must be an integer >= 2, got {self.grid}")
        if not self.sample_depth > 0:
            raise ValueError(f"sample_depth must be positive, got {self.sample_depth}")
        if not self.scene_diameter > 0:
            raise ValueError(f"scene_diameter must be positive, got {self.scene_diameter}")
        if not self.distance_weight >= 0:
            raise ValueError(f"distance_weight must be nonnegative, got {self.distance_weight}")


# ---------------------------------------------------------------------------
# rotations


def rot_x(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_pitch(yaw_deg: float, pitch_deg: float = 0.0) -> np.ndarray:
    """World-from-camera rotation for a camera yawed about world y then pitched.

    Positive yaw turns the forward axis from +z towards +x; positive pitch
    tilts it upwards (towards -y, since y points down).
    """
    return rot_y(math.radians(yaw_deg)) @ rot_x(math.radians(pitch_deg))


def project_to_so3(matrix: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    return R


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations.

    Uses the chordal form, which stays accurate for tiny angles where the
    trace/arccos form loses half the significant digits.
    """
    chord = np.linalg.norm(np.asarray(Ra) - np.asarray(Rb)) / (2.0 * math.sqrt(2.0))
    return 2.0 * math.asin(min(1.0, chord))


# ---------------------------------------------------------------------------
# projection


def project_point(pose: CameraPose, world_point) -> tuple[np.ndarray, float]:
    """Project a world point through ``pose``.

    Returns the normalized pixel ``(u, v)`` and the camera-frame depth. Points
    behind the camera or outside the image are returned as computed; callers
    filter on depth and bounds.
    """
    pixels, depth = project_points(pose, np.asarray(world_point, dtype=np.float64)[None, :])
    return pixels[0], float(depth[0])


def project_points(pose: CameraPose, world_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``project_point`` over an ``(M, 3)`` array."""
    cam = (np.asarray(world_points, dtype=np.float64) - pose.center) @ pose.rotation
    z = cam[:, 2]
    k = pose.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / z + k.cx
        v = k.fy * cam[:, 1] / z + k.cy
    return np.stack([u, v], axis=-1), z


def unproject(pose: CameraPose, pixels: np.ndarray, depth) -> np.ndarray:
    """World points at camera-frame ``depth`` behind normalized ``pixels``."""
    pixels = np.asarray(pixels, dtype=np.float64)
    k = pose.intrinsics
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), pixels.shape[:-1])
    cam = np.stack(
        [(pixels[..., 0] - k.cx) / k.fx * depth, (pixels[..., 1] - k.cy) / k.fy * depth, depth],
        axis=-1,
    )
    return cam @ pose.rotation.T + pose.center


def grid_pixels(grid: int) -> np.ndarray:
    """Cell-center sample positions of a ``grid x grid`` lattice, row-major ``(G*G, 2)``."""
    c = (np.arange(grid) + 0.5) / grid
    uu, vv = np.meshgrid(c, c, indexing="xy")
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def _inside(pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
    u, v = pixels[..., 0], pixels[..., 1]
    return (depth > 0) & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)


# ---------------------------------------------------------------------------
# overlap and distance


def fov_overlap(target: CameraPose, history: CameraPose, cfg: OverlapConfig = OverlapConfig()) -> float:
    """Fraction of ``target``'s frustum samples that ``history`` can see.

    ``cfg.grid**2`` samples are placed at pixel-cell centers of the target on
    the plane at depth ``cfg.sample_depth`` and counted as visible when they
    project in front of ``history`` and inside its image. Occlusion is ignored.
    """
    points = unproject(target, grid_pixels(cfg.grid), cfg.sample_depth)
    pixels, depth = project_points(history, points)
    return int(np.count_nonzero(_inside(pixels, depth))) / cfg.grid**2


def translation_distance(target: CameraPose, history: CameraPose, cfg: OverlapConfig = OverlapConfig()) -> float:
    return min(float(np.linalg.norm(target.center - history.center)) / cfg.scene_diameter, 1.0)


def _stack(poses):
    R = np.stack([p.rotation for p in poses]) if poses else np.zeros((0, 3, 3))
    c = np.stack([p.center for p in poses]) if poses else np.zeros((0, 3))
    k = np.array([[p.intrinsics.fx, p.intrinsics.fy, p.intrinsics.cx, p.intrinsics.cy] for p in poses])
    return R, c, k.reshape(len(poses), 4)


def overlap_matrix(targets, history, cfg: OverlapConfig = OverlapConfig(), max_block: int = 1 << 16) -> np.ndarray:
    """Batched ``fov_overlap`` for every (target, history) pair, shape ``(N, F)``.

    Samples of a block of targets go through all history cameras in one
    matrix product; ``max_block`` bounds the (samples x history) block size.
    """
    targets, history = list(targets), list(history)
    out = np.zeros((len(targets), len(history)))
    if not targets or not history:
        return out
    F = len(history)
    Rh, ch, kh = _stack(history)
    fx, fy, cx, cy = kh.T
    # camera coordinate j of X in camera f: (X - c_f) . R_f[:, j]
    axes = [Rh[:, :, j].T.copy() for j in range(3)]         # (3, F) each
    offs = [np.einsum("fi,fi->f", ch, Rh[:, :, j]) for j in range(3)]
    grid = grid_pixels(cfg.grid)
    S = len(grid)
    step = max(1, max_block // (S * F))
    for lo in range(0, len(targets), step):
        block = targets[lo : lo + step]
        pts = np.concatenate([unproject(t, grid, cfg.sample_depth) for t in block])
        x, y, z = (pts @ a - o for a, o in zip(axes, offs))
        with np.errstate(divide="ignore", invalid="ignore"):
            u = fx * x / z + cx
            v = fy * y / z + cy
        vis = (z > 0) & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        out[lo : lo + len(block)] = np.count_nonzero(vis.reshape(len(block), S, F), axis=1) / S
    return out


def distance_matrix(targets, history, cfg: OverlapConfig = OverlapConfig()) -> np.ndarray:
    """Batched ``translation_distance``, shape ``(N, F)``."""
    targets, history = list(targets), list(history)
    if not targets or not history:
        return np.zeros((len(targets), len(history)))
    ct = np.stack([p.center for p in targets])
    ch = np.stack([p.center for p in history])
    dist = np.linalg.norm(ct[:, None, :] - ch[None, :, :], axis=-1)
    return np.minimum(dist / cfg.scene_diameter, 1.0)


# ---------------------------------------------------------------------------
# Plücker rays


@dataclass(frozen=True, eq=False)
class PluckerMap:
    """Per-pixel Plücker coordinates, ``data[..., :3]`` direction, ``data[..., 3:]`` moment."""

    data: np.ndarray

    @property
    def directions(self) -> np.ndarray:
        return self.data[..., :3]

    @property
    def moments(self) -> np.ndarray:
        return self.data[..., 3:]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


def pixel_rays(pose: CameraPose, height: int, width: int) -> np.ndarray:
    """Unit world-frame ray directions through pixel centers, shape ``(H, W, 3)``."""
    if height < 1 or width < 1:
        raise ValueError(f"resolution must be positive, got {height}x{width}")
    k = pose.intrinsics
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v, indexing="xy")
    cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
    cam /= np.linalg.norm(cam, axis=-1, keepdims=True)
    world = cam @ pose.rotation.T
    # re-normalize after rotation so ||d|| = 1 holds to rounding
    return world / np.linalg.norm(world, axis=-1, keepdims=True)


def plucker_embed(pose: CameraPose, height: int, width: int) -> PluckerMap:
    d = pixel_rays(pose, height, width)
    m = np.cross(np.broadcast_to(pose.center, d.shape), d)
    return PluckerMap(np.concatenate([d, m], axis=-1))


# ---------------------------------------------------------------------------
# plain-data form, used by the JSON manifests


def pose_to_dict(pose: CameraPose) -> dict:
    k = pose.intrinsics
    return {
        "rotation": pose.rotation.tolist(),
        "center": pose.center.tolist(),
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
    }


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(np.array(d["rotation"]), np.array(d["center"]), Intrinsics(**d["intrinsics"]))
