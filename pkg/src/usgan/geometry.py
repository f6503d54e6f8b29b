"""Rigid-transform algebra, world-coordinate grids and pose filtering.

Conventions: quaternions are stored (w, x, y, z) and kept unit-norm,
frames are right-handed, all lengths are millimetres. A transform maps
points from its source frame into its target frame via ``R @ p + t``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Precondition or state violation in a geometry operation."""


class DegenerateDatasetError(GeometryError):
    """Pooled statistics are degenerate (zero variance in a channel)."""


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise GeometryError("quaternion norm too small to normalize")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_angle_deg(q: np.ndarray) -> float:
    """Rotation angle of a unit quaternion in degrees, in [0, 180]."""
    w = abs(float(q[0]))
    v = float(np.linalg.norm(q[1:]))
    return float(np.degrees(2.0 * np.arctan2(v, w)))


def quat_slerp(qa: np.ndarray, qb: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions, shortest arc."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(qa + alpha * (qb - qa))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - alpha) * theta) / s) * qa + (np.sin(alpha * theta) / s) * qb


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) plus translation in mm."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != (3,):
            raise GeometryError(f"translation must be a 3-vector, got shape {t.shape}")
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from the source frame to the target frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix.T + self.t

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.t
        return m


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform such that (a∘b)(p) = a(b(p))."""
    return RigidTransform(quat_multiply(a.q, b.q), a.apply(b.t))


def invert(t: RigidTransform) -> RigidTransform:
    qc = quat_conjugate(t.q)
    return RigidTransform(qc, -(quat_to_matrix(qc) @ t.t))


def pose_distance(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(translation distance mm, relative rotation angle deg in [0, 180])."""
    trans = float(np.linalg.norm(a.t - b.t))
    rel = quat_multiply(quat_conjugate(a.q), b.q)
    return trans, quat_angle_deg(rel)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    """Image-to-probe transform plus in-plane pixel spacing (mm/px)."""

    image_to_probe: RigidTransform
    spacing_mm: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.spacing_mm, dtype=np.float64)
        if s.shape != (2,) or np.any(s <= 0):
            raise GeometryError("spacing_mm must be two strictly positive values")
        object.__setattr__(self, "spacing_mm", s)

    def to_json_dict(self) -> dict:
        return {
            "image_to_probe": {
                "q": [float(v) for v in self.image_to_probe.q],
                "t": [float(v) for v in self.image_to_probe.t],
            },
            "spacing_mm": [float(v) for v in self.spacing_mm],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Calibration":
        tf = RigidTransform(np.array(d["image_to_probe"]["q"]), np.array(d["image_to_probe"]["t"]))
        return Calibration(tf, np.array(d["spacing_mm"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @staticmethod
    def load(path: str | Path) -> "Calibration":
        return Calibration.from_json_dict(json.loads(Path(path).read_text()))


def pixel_to_world(
    calib: Calibration,
    pose: RigidTransform,
    px: tuple[float, float],
    dims: tuple[int, int] | None = None,
) -> np.ndarray:
    """World coordinates (mm) of a continuous pixel location (u, v).

    The pixel is scaled by the in-plane spacing, lifted to the image plane
    (z = 0), then mapped through image->probe and probe->world transforms.
    When ``dims`` is given, out-of-bounds pixels raise.
    """
    u, v = float(px[0]), float(px[1])
    if dims is not None:
        w, h = dims
        if not (0 <= u < w and 0 <= v < h):
            raise GeometryError(f"pixel ({u}, {v}) outside image bounds {dims}")
    p_img = np.array([calib.spacing_mm[0] * u, calib.spacing_mm[1] * v, 0.0])
    return pose.apply(calib.image_to_probe.apply(p_img))


# ---------------------------------------------------------------------------
# coordinate grids
# ---------------------------------------------------------------------------

@dataclass
class CoordinateGrid:
    """Per-pixel world x/y/z coordinates, 3 channels of shape (H, W)."""

    channels: np.ndarray  # (3, H, W)
    normalized: bool = False

    def __post_init__(self):
        c = np.asarray(self.channels, dtype=np.float64)
        if c.ndim != 3 or c.shape[0] != 3:
            raise GeometryError(f"grid channels must have shape (3, H, W), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise GeometryError("grid contains non-finite values")
        self.channels = c

    @property
    def dims(self) -> tuple[int, int]:
        """(W, H) in pixels."""
        return self.channels.shape[2], self.channels.shape[1]


@dataclass(frozen=True)
class GridStats:
    """Per-channel pooled mean and standard deviation over a training set."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        if m.shape != (3,) or s.shape != (3,):
            raise GeometryError("GridStats mean/std must be 3-vectors")
        if np.any(s <= 0):
            raise DegenerateDatasetError("GridStats std must be strictly positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    def to_json_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @staticmethod
    def from_json_dict(d: dict) -> "GridStats":
        return GridStats(np.array(d["mean"]), np.array(d["std"]))


def build_grid(
    calib: Calibration, pose: RigidTransform, dims: tuple[int, int]
) -> CoordinateGrid:
    """World-coordinate grid for every pixel of a (W, H) image."""
    w, h = dims
    if w < 1 or h < 1:
        raise GeometryError("grid dims must be >= 1")
    u = np.arange(w, dtype=np.float64) * calib.spacing_mm[0]
    v = np.arange(h, dtype=np.float64) * calib.spacing_mm[1]
    uu, vv = np.meshgrid(u, v)  # (H, W)
    pts = np.stack([uu, vv, np.zeros_like(uu)], axis=-1)  # (H, W, 3)
    m = compose(pose, calib.image_to_probe)
    world = pts @ m.rotation_matrix.T + m.t
    return CoordinateGrid(np.moveaxis(world, -1, 0), normalized=False)


def fit_grid_stats(grids) -> GridStats:
    """Pooled per-channel mean/std over all pixels of all grids."""
    grids = list(grids)
    if not grids:
        raise GeometryError("fit_grid_stats needs at least one grid")
    if any(g.normalized for g in grids):
        raise GeometryError("fit_grid_stats expects unnormalized grids")
    flat = np.concatenate([g.channels.reshape(3, -1) for g in grids], axis=1)
    mean = flat.mean(axis=1)
    std = flat.std(axis=1)
    if np.any(std < 1e-12):
        raise DegenerateDatasetError(f"zero variance in coordinate channel(s), std={std}")
    return GridStats(mean, std)


def normalize_grid(grid: CoordinateGrid, stats: GridStats) -> CoordinateGrid:
    if grid.normalized:
        raise GeometryError("grid is already normalized")
    c = (grid.channels - stats.mean[:, None, None]) / stats.std[:, None, None]
    return CoordinateGrid(c, normalized=True)


def denormalize_grid(grid: CoordinateGrid, stats: GridStats) -> CoordinateGrid:
    if not grid.normalized:
        raise GeometryError("grid is not normalized")
    c = grid.channels * stats.std[:, None, None] + stats.mean[:, None, None]
    return CoordinateGrid(c, normalized=False)


def resize_channels(channels: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of (C, H, W) planes to (C, H', W').

    Sample positions are aligned on half-pixel centers and clamped at the
    borders; target == source reproduces the input exactly.
    """
    tw, th = target
    if tw < 1 or th < 1:
        raise GeometryError("resize target dims must be >= 1")
    c, h, w = channels.shape
    if (tw, th) == (w, h):
        return channels.copy()
    sx = w / tw
    sy = h / th
    x = (np.arange(tw) + 0.5) * sx - 0.5
    y = (np.arange(th) + 0.5) * sy - 0.5
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = channels[:, y0[:, None], x0[None, :]] * (1 - fx) + channels[:, y0[:, None], x1[None, :]] * fx
    bot = channels[:, y1[:, None], x0[None, :]] * (1 - fx) + channels[:, y1[:, None], x1[None, :]] * fx
    return top * (1 - fy[None, :, None]) + bot * fy[None, :, None]


def resize_grid(grid: CoordinateGrid, target: tuple[int, int]) -> CoordinateGrid:
    return CoordinateGrid(resize_channels(grid.channels, target), normalized=grid.normalized)


# ---------------------------------------------------------------------------
# pose-proximity exclusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExclusionThresholds:
    """Proximity radii below which a training pose leaks a test pose."""

    max_trans_mm: float = 0.5
    max_rot_deg: float = 0.5

    def __post_init__(self):
        if self.max_trans_mm < 0 or self.max_rot_deg < 0:
            raise GeometryError("exclusion thresholds must be non-negative")


def exclusion_filter(
    train_poses, test_poses, th: ExclusionThresholds
) -> list[int]:
    """Indices of training poses that are NOT too close to any test pose.

    A training pose is excluded only when both its translation and rotation
    distances to some test pose fall within the thresholds.
    """
    train_poses = list(train_poses)
    test_poses = list(test_poses)
    if not test_poses:
        return list(range(len(train_poses)))
    tq = np.array([p.q for p in train_poses])  # (N, 4)
    tt = np.array([p.t for p in train_poses])
    sq = np.array([p.q for p in test_poses])  # (M, 4)
    st = np.array([p.t for p in test_poses])
    dt = np.linalg.norm(tt[:, None, :] - st[None, :, :], axis=-1)  # (N, M)
    # |dot(qa, qb)| = |cos(theta/2)| of the relative rotation
    dots = np.abs(tq @ sq.T)
    ang = np.degrees(2.0 * np.arccos(np.clip(dots, -1.0, 1.0)))
    near = (dt <= th.max_trans_mm) & (ang <= th.max_rot_deg)
    return [int(i) for i in np.nonzero(~near.any(axis=1))[0]]
