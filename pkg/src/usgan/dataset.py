"""Dataset generation, on-disk format, preprocessing and fold splitting.

On-disk layout of a dataset directory:

  manifest.json   {version, dims [W, H], count, timestamps_s, grid_stats?}
  calibration.json  (geometry module format)
  tracking.csv    frame_index,timestamp_s,qw,qx,qy,qz,tx,ty,tz
  frames/NNNNNN.png  8-bit grayscale (denormalized; mapped back on load)
  landmarks.csv   frame_index,name,u,v

Images live in [-1, 1] in memory. Generated images are quantized to the
8-bit lattice at creation time so a write/load round trip is lossless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    Calibration,
    ExclusionThresholds,
    GridStats,
    RigidTransform,
    exclusion_filter,
    quat_slerp,
)
from .phantom import Phantom, render_landmarks, render_slice


class DatasetError(ValueError):
    pass


class SynchronizationError(DatasetError):
    def __init__(self, msg: str, frame_indices: list[int]):
        super().__init__(msg)
        self.frame_indices = frame_indices


class DegenerateSplitError(DatasetError):
    pass


@dataclass
class Frame:
    image: np.ndarray  # (H, W) float32 in [-1, 1]
    pose: RigidTransform
    timestamp_s: float
    landmarks: list[tuple[str, float, float]] = field(default_factory=list)


@dataclass
class Dataset:
    frames: list[Frame]
    calibration: Calibration
    dims: tuple[int, int]  # (W, H)
    grid_stats: GridStats | None = None

    def __post_init__(self):
        if not self.frames:
            raise DatasetError("dataset must contain at least one frame")
        w, h = self.dims
        for i, f in enumerate(self.frames):
            if f.image.shape != (h, w):
                raise DatasetError(f"frame {i} has shape {f.image.shape}, expected {(h, w)}")

    @property
    def poses(self) -> list[RigidTransform]:
        return [f.pose for f in self.frames]


# ---------------------------------------------------------------------------
# intensity helpers
# ---------------------------------------------------------------------------

def quantize_to_u8_lattice(image: np.ndarray) -> np.ndarray:
    """Snap [-1, 1] intensities to the 256-level lattice used on disk."""
    codes = np.round((np.clip(image, -1.0, 1.0) + 1.0) * 127.5)
    return u8_to_unit(codes)


def u8_to_unit(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def unit_to_u8(image: np.ndarray) -> np.ndarray:
    return np.round((np.clip(image, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def _area_average_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Rows give exact overlap fractions of destination cells over source cells."""
    a = np.zeros((n_dst, n_src))
    scale = n_src / n_dst
    for i in range(n_dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = int(np.ceil(hi))
        for j in range(j0, min(j1, n_src)):
            a[i, j] = min(hi, j + 1) - max(lo, j)
    return a / scale


def preprocess_frame(raw: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Area-averaged downsample of an 8-bit image, mapped to [-1, 1]."""
    if raw.dtype != np.uint8:
        raise DatasetError(f"expected uint8 input, got {raw.dtype}")
    h0, w0 = raw.shape
    tw, th = target
    if tw > w0 or th > h0:
        raise DatasetError(f"target {target} exceeds raw dims {(w0, h0)}")
    ah = _area_average_matrix(h0, th)
    aw = _area_average_matrix(w0, tw)
    avg = ah @ raw.astype(np.float64) @ aw.T
    return ((avg / 127.5) - 1.0).astype(np.float32)


def foreground_fraction(image: np.ndarray, threshold: float = -0.9) -> float:
    """Fraction of pixels brighter than an anechoic threshold."""
    return float(np.mean(image > threshold))


def filter_by_foreground(ds: Dataset, min_fraction: float) -> Dataset:
    kept = [f for f in ds.frames if foreground_fraction(f.image) >= min_fraction]
    if not kept:
        raise DatasetError("foreground filter removed every frame")
    return replace(ds, frames=kept)


# ---------------------------------------------------------------------------
# synthetic sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRegion:
    """One pose-sampling region (emulates an acquisition session)."""

    center: RigidTransform
    trans_range_mm: tuple[float, float, float] = (10.0, 6.0, 10.0)
    rot_range_deg: tuple[float, float, float] = (8.0, 8.0, 8.0)


@dataclass(frozen=True)
class SweepConfig:
    n_frames: int
    regions: tuple[SweepRegion, ...]
    seed: int = 0
    speckle: bool = True
    frame_rate_hz: float = 30.0
    landmark_slab_mm: float = 1.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise DatasetError("n_frames must be >= 1")
        for r in self.regions:
            if min(r.trans_range_mm) < 0 or min(r.rot_range_deg) < 0:
                raise DatasetError("sweep ranges must be non-negative")


def default_calibration(dims: tuple[int, int], fov_mm: float = 80.0) -> Calibration:
    """Calibration whose image spans ~fov_mm laterally, centred on the volume."""
    w, h = dims
    spacing = fov_mm / w
    # place pixel grid so the image centre sits at the world origin
    t = np.array([-spacing * (w - 1) / 2, -spacing * (h - 1) / 2, 0.0])
    return Calibration(RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), t), np.array([spacing, spacing]))


def default_sweep_config(n_frames: int, seed: int = 0, n_regions: int = 4) -> SweepConfig:
    """Four pose regions at different slice offsets through the phantom."""
    regions = []
    offsets = np.linspace(-18.0, 18.0, n_regions)
    for dz in offsets:
        center = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, 0.0, dz]))
        regions.append(SweepRegion(center))
    return SweepConfig(n_frames=n_frames, regions=tuple(regions), seed=seed)


def sample_pose(region: SweepRegion, rng: np.random.Generator) -> RigidTransform:
    from .geometry import compose, quat_from_axis_angle

    dt = np.array([rng.uniform(-r, r) for r in region.trans_range_mm])
    rot = np.radians([rng.uniform(-r, r) for r in region.rot_range_deg])
    angle = float(np.linalg.norm(rot))
    dq = quat_from_axis_angle(rot, angle)
    delta = RigidTransform(dq, dt)
    return compose(delta, region.center)


def generate_sweep(ph: Phantom, calib: Calibration, sc: SweepConfig, dims: tuple[int, int]) -> Dataset:
    """Render n_frames at sampled poses; deterministic for a fixed seed."""
    rng = np.random.default_rng(sc.seed)
    frames = []
    for i in range(sc.n_frames):
        region = sc.regions[i % len(sc.regions)]
        pose = sample_pose(region, rng)
        speckle_seed = sc.seed + i if sc.speckle else None
        img = quantize_to_u8_lattice(render_slice(ph, calib, pose, dims, speckle_seed=speckle_seed))
        lms = render_landmarks(ph, calib, pose, dims, slab_mm=sc.landmark_slab_mm)
        frames.append(Frame(img, pose, timestamp_s=i / sc.frame_rate_hz, landmarks=lms))
    return Dataset(frames, calib, dims)


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def write_dataset(ds: Dataset, path: str | Path) -> None:
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "dims": list(ds.dims),
        "count": len(ds.frames),
        "timestamps_s": [f.timestamp_s for f in ds.frames],
    }
    if ds.grid_stats is not None:
        manifest["grid_stats"] = ds.grid_stats.to_json_dict()
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    ds.calibration.save(root / "calibration.json")
    with open(root / "tracking.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "timestamp_s", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])
        for i, fr in enumerate(ds.frames):
            w.writerow(
                [i, repr(float(fr.timestamp_s))]
                + [repr(float(v)) for v in fr.pose.q]
                + [repr(float(v)) for v in fr.pose.t]
            )
    with open(root / "landmarks.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "name", "u", "v"])
        for i, fr in enumerate(ds.frames):
            for name, u, v in fr.landmarks:
                w.writerow([i, name, repr(float(u)), repr(float(v))])
    for i, fr in enumerate(ds.frames):
        Image.fromarray(unit_to_u8(fr.image), mode="L").save(root / "frames" / f"{i:06d}.png")


def _read_tracking(path: Path) -> list[tuple[int, float, RigidTransform]]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            pose = RigidTransform(
                np.array([float(row[c]) for c in ("qw", "qx", "qy", "qz")]),
                np.array([float(row[c]) for c in ("tx", "ty", "tz")]),
            )
            records.append((int(row["frame_index"]), float(row["timestamp_s"]), pose))
    records.sort(key=lambda r: r[1])
    return records


def _sync_pose(t: float, records, max_gap_s: float) -> RigidTransform | None:
    """Pose at time t: exact record verbatim, else interpolate the straddle."""
    times = np.array([r[1] for r in records])
    j = int(np.argmin(np.abs(times - t)))
    if abs(times[j] - t) > max_gap_s:
        return None
    if times[j] == t:
        return records[j][2]
    # find straddling pair
    k = int(np.searchsorted(times, t))
    if 0 < k < len(records):
        t0, t1 = times[k - 1], times[k]
        a = (t - t0) / (t1 - t0)
        p0, p1 = records[k - 1][2], records[k][2]
        return RigidTransform(quat_slerp(p0.q, p1.q, a), (1 - a) * p0.t + a * p1.t)
    return records[j][2]


def load_dataset(path: str | Path, max_gap_s: float = 0.1) -> Dataset:
    root = Path(path)
    for required in ("manifest.json", "calibration.json", "tracking.csv"):
        if not (root / required).exists():
            raise IOError(f"dataset file missing: {root / required}")
    manifest = json.loads((root / "manifest.json").read_text())
    dims = tuple(manifest["dims"])
    count = int(manifest["count"])
    timestamps = [float(t) for t in manifest["timestamps_s"]]
    if len(timestamps) != count:
        raise DatasetError("manifest count does not match timestamps_s length")
    calib = Calibration.load(root / "calibration.json")
    records = _read_tracking(root / "tracking.csv")
    if not records:
        raise DatasetError(f"no tracking records in {root / 'tracking.csv'}")

    landmarks_by_frame: dict[int, list[tuple[str, float, float]]] = {}
    lm_path = root / "landmarks.csv"
    if lm_path.exists():
        with open(lm_path, newline="") as f:
            for row in csv.DictReader(f):
                landmarks_by_frame.setdefault(int(row["frame_index"]), []).append(
                    (row["name"], float(row["u"]), float(row["v"]))
                )

    frames = []
    unsynced = []
    for i in range(count):
        img_path = root / "frames" / f"{i:06d}.png"
        if not img_path.exists():
            raise IOError(f"dataset file missing: {img_path}")
        raw = np.asarray(Image.open(img_path))
        pose = _sync_pose(timestamps[i], records, max_gap_s)
        if pose is None:
            unsynced.append(i)
            continue
        frames.append(Frame(u8_to_unit(raw), pose, timestamps[i], landmarks_by_frame.get(i, [])))
    if unsynced:
        raise SynchronizationError(
            f"tracking gap exceeds {max_gap_s * 1000:.0f} ms for frames {unsynced}", unsynced
        )
    stats = GridStats.from_json_dict(manifest["grid_stats"]) if "grid_stats" in manifest else None
    return Dataset(frames, calib, dims, grid_stats=stats)


# ---------------------------------------------------------------------------
# fold splitting
# ---------------------------------------------------------------------------

def split_folds(
    ds: Dataset, k: int, th: ExclusionThresholds
) -> list[tuple[list[int], list[int]]]:
    """Contiguous k-fold partition with pose-proximity exclusion per fold."""
    n = len(ds.frames)
    if k < 2 or k > n:
        raise DatasetError(f"k must be in [2, {n}], got {k}")
    poses = ds.poses
    bounds = [round(b * n / k) for b in range(k + 1)]
    folds = []
    for b in range(k):
        test_idx = list(range(bounds[b], bounds[b + 1]))
        train_idx = [i for i in range(n) if i < bounds[b] or i >= bounds[b + 1]]
        kept = exclusion_filter(
            [poses[i] for i in train_idx], [poses[j] for j in test_idx], th
        )
        train_idx = [train_idx[i] for i in kept]
        if not train_idx:
            raise DegenerateSplitError(f"fold {b}: exclusion emptied the training set")
        folds.append((train_idx, test_idx))
    return folds
