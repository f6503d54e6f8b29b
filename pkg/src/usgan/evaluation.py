"""Evaluation metrics: conditional fidelity, landmark distances, spectral
content under Gaussian blur, sample diversity, and throughput.

Generators are passed either as a trained :class:`~usgan.nn.networks.Generator`
plus calibration/stats, or as any callable ``sample_fn(pose, seed) -> image``
so renderer oracles and baselines plug into the same metrics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import (
    Calibration,
    CoordinateGrid,
    GridStats,
    RigidTransform,
    build_grid,
    normalize_grid,
    pose_distance,
)
from .nn.networks import ContractError, Generator, gen_forward


class EvalConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_at(
    g: Generator,
    calib: Calibration,
    stats: GridStats,
    pose: RigidTransform,
    z: np.ndarray | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """One generated image (H, W) at a pose, infer mode."""
    if stats is None:
        raise ContractError("grid statistics required to sample from a generator")
    dims = g.spec.out_dims
    grid = normalize_grid(build_grid(calib, pose, dims), stats)
    if z is None:
        z = np.random.default_rng(seed).standard_normal(g.spec.noise_dim)
    return gen_forward(g, z, grid, "infer")


def make_sampler(g: Generator, calib: Calibration, stats: GridStats):
    """Adapt a trained generator to the ``sample_fn(pose, seed)`` protocol."""

    def fn(pose: RigidTransform, seed: int | None = None) -> np.ndarray:
        return sample_at(g, calib, stats, pose, seed=seed)

    return fn


# ---------------------------------------------------------------------------
# conditional fidelity
# ---------------------------------------------------------------------------

def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))


def conditioning_score(
    sample_fn,
    poses: list[RigidTransform],
    render_fn,
    n_distractors: int = 4,
    min_trans_mm: float = 10.0,
    min_rot_deg: float = 10.0,
    seed: int = 0,
) -> float:
    """Fraction of poses whose sample is closest (MSE) to its own
    speckle-free render rather than to any of ``n_distractors`` renders at
    poses at least ``min_trans_mm`` or ``min_rot_deg`` away."""
    if n_distractors < 1:
        raise EvalConfigError("n_distractors must be >= 1")
    if not poses:
        raise EvalConfigError("empty test pose set")
    renders = [np.asarray(render_fn(p), np.float64) for p in poses]
    matched = 0
    for i, pose in enumerate(poses):
        cands = []
        for j, other in enumerate(poses):
            if j == i:
                continue
            dt, dr = pose_distance(pose, other)
            if dt >= min_trans_mm or dr >= min_rot_deg:
                cands.append(j)
        if len(cands) < n_distractors:
            raise EvalConfigError(
                f"pose {i}: only {len(cands)} distractors at >= "
                f"{min_trans_mm} mm or {min_rot_deg} deg (need {n_distractors})"
            )
        rng = np.random.default_rng(seed + i)
        picks = rng.choice(len(cands), size=n_distractors, replace=False)
        sample = sample_fn(pose, seed + i)
        own = _mse(sample, renders[i])
        if all(own < _mse(sample, renders[cands[k]]) for k in picks):
            matched += 1
    return matched / len(poses)


# ---------------------------------------------------------------------------
# landmark distances
# ---------------------------------------------------------------------------

@dataclass
class LandmarkReport:
    n_total: int
    n_unrecognizable: int
    n_no_landmark: int
    n_paired: int
    mean_mm: float | None
    std_mm: float | None
    pair_distances_mm: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.n_total != self.n_unrecognizable + self.n_no_landmark + self.n_paired:
            raise EvalConfigError("landmark categories must partition n_total")

    def to_json_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_unrecognizable": self.n_unrecognizable,
            "n_no_landmark": self.n_no_landmark,
            "n_paired": self.n_paired,
            "mean_mm": self.mean_mm,
            "std_mm": self.std_mm,
            "pair_distances_mm": [float(d) for d in self.pair_distances_mm],
        }


def make_blob_detector(window_px: int = 6, min_contrast: float = 0.1):
    """Bright-blob centroid detector searching a window around the hint.

    Returns ``detect(image, hint_uv) -> (u, v) | None``: the
    intensity-weighted centroid of pixels brighter than the window mean by
    ``min_contrast``, or None when the window has no such contrast.
    """

    def detect(image: np.ndarray, hint_uv) -> tuple[float, float] | None:
        img = np.asarray(image, np.float64)
        h, w = img.shape
        u0, v0 = int(round(hint_uv[0])), int(round(hint_uv[1]))
        u_lo, u_hi = max(0, u0 - window_px), min(w, u0 + window_px + 1)
        v_lo, v_hi = max(0, v0 - window_px), min(h, v0 + window_px + 1)
        if u_lo >= u_hi or v_lo >= v_hi:
            return None
        win = img[v_lo:v_hi, u_lo:u_hi]
        mask = win > win.mean() + min_contrast
        if not mask.any():
            return None
        weights = (win - win.mean()) * mask
        vv, uu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
        total = weights.sum()
        return (float((uu * weights).sum() / total), float((vv * weights).sum() / total))

    return detect


def landmark_error(
    sample_fn,
    frames,
    spacing_mm: np.ndarray,
    detector=None,
    seed: int = 0,
) -> LandmarkReport:
    """Per-frame landmark distances between samples and annotations.

    ``frames`` need ``pose`` and a non-empty ``landmarks`` dict of
    name -> (u, v) on at least one frame. A frame is *unrecognizable* when
    the detector finds none of its landmarks, *no-landmark* when it finds
    some but not all, *paired* when every annotated landmark is found.
    """
    annotated = [f for f in frames if f.landmarks]
    if not annotated:
        raise EvalConfigError("no annotated frames")
    detector = detector or make_blob_detector()
    sx, sy = float(spacing_mm[0]), float(spacing_mm[1])
    n_unrec = n_nolm = n_paired = 0
    distances: list[float] = []
    for i, f in enumerate(annotated):
        sample = sample_fn(f.pose, seed + i)
        # accept dict name -> (u, v) or list of (name, u, v) rows
        lms = (
            f.landmarks
            if isinstance(f.landmarks, dict)
            else {name: (u, v) for name, u, v in f.landmarks}
        )
        hits = {}
        for name, uv in lms.items():
            det = detector(sample, uv)
            if det is not None:
                hits[name] = det
        if not hits:
            n_unrec += 1
        elif len(hits) < len(lms):
            n_nolm += 1
        else:
            n_paired += 1
            for name, (du, dv) in hits.items():
                au, av = lms[name]
                distances.append(float(np.hypot((du - au) * sx, (dv - av) * sy)))
    mean = float(np.mean(distances)) if n_paired >= 2 else None
    std = float(np.std(distances)) if n_paired >= 2 else None
    return LandmarkReport(len(annotated), n_unrec, n_nolm, n_paired, mean, std, distances)


# ---------------------------------------------------------------------------
# spectral content
# ---------------------------------------------------------------------------

def gaussian_blur(image: np.ndarray, sigma_mm: float, spacing_mm) -> np.ndarray:
    """Isotropic Gaussian blur with sigma given in mm; sigma 0 is identity."""
    if sigma_mm < 0:
        raise EvalConfigError("sigma_mm must be >= 0")
    img = np.asarray(image, np.float64)
    if sigma_mm == 0:
        return img.copy()
    s = np.broadcast_to(np.asarray(spacing_mm, np.float64).ravel(), (2,))
    sigma_px = (sigma_mm / s[1], sigma_mm / s[0])  # (rows, cols)
    return gaussian_filter(img, sigma=sigma_px, mode="reflect")


def hf_energy(image: np.ndarray, spacing_mm, cutoff_mm: float) -> float:
    """Fraction of 2-D spectral power at radial frequency above 1/cutoff_mm."""
    if cutoff_mm <= 0:
        raise EvalConfigError("cutoff_mm must be > 0")
    img = np.asarray(image, np.float64)
    h, w = img.shape
    s = np.broadcast_to(np.asarray(spacing_mm, np.float64).ravel(), (2,))
    spec = np.abs(np.fft.fft2(img)) ** 2
    fy = np.fft.fftfreq(h, d=s[1])
    fx = np.fft.fftfreq(w, d=s[0])
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    total = spec.sum()
    if total == 0:
        return 0.0
    return float(spec[r > 1.0 / cutoff_mm].sum() / total)


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

@dataclass
class DiversityReport:
    pose: RigidTransform
    n_samples: int
    pairwise_mse: float
    std_map: np.ndarray
    mean_image: np.ndarray
    correlation: float | None

    def __post_init__(self):
        if self.pairwise_mse < 0 or np.any(self.std_map < 0):
            raise EvalConfigError("diversity statistics must be non-negative")


def diversity_at(
    sample_fn,
    pose: RigidTransform,
    n: int,
    seed: int = 0,
    reference: np.ndarray | None = None,
) -> DiversityReport:
    """Sample n images with distinct noise at one pose; summarize spread."""
    if n < 2:
        raise EvalConfigError("n must be >= 2")
    samples = np.stack([np.asarray(sample_fn(pose, seed + k), np.float64) for k in range(n)])
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += _mse(samples[i], samples[j])
            pairs += 1
    corr = None
    mean_img = samples.mean(axis=0)
    if reference is not None:
        ref = np.asarray(reference, np.float64).ravel()
        m = mean_img.ravel()
        if np.std(ref) > 0 and np.std(m) > 0:
            corr = float(np.corrcoef(m, ref)[0, 1])
        else:
            corr = 0.0
    return DiversityReport(pose, n, total / pairs, samples.std(axis=0), mean_img, corr)


# ---------------------------------------------------------------------------
# throughput
# ---------------------------------------------------------------------------

def throughput(
    g: Generator,
    calib: Calibration,
    stats: GridStats,
    n_frames: int,
    batch: int = 1,
    warmup: int = 10,
    seed: int = 0,
) -> float:
    """Wall-clock frames/second of grid build + normalize + generate."""
    if n_frames < 1:
        raise EvalConfigError("n_frames must be >= 1")
    if batch < 1:
        raise EvalConfigError("batch must be >= 1")
    dims = g.spec.out_dims
    rng = np.random.default_rng(seed)

    def one_batch():
        pose = RigidTransform(
            np.array([1.0, 0.0, 0.0, 0.0]), rng.normal(scale=5.0, size=3)
        )
        grid = normalize_grid(build_grid(calib, pose, dims), stats)
        grids = np.repeat(grid.channels[None].astype(np.float32), batch, axis=0)
        z = rng.standard_normal((batch, g.spec.noise_dim)).astype(np.float32)
        g.forward(z, grids, train=False)

    for _ in range(warmup):
        one_batch()
    n_batches = max(1, (n_frames + batch - 1) // batch)
    t0 = time.perf_counter()
    for _ in range(n_batches):
        one_batch()
    elapsed = time.perf_counter() - t0
    return (n_batches * batch) / elapsed


def throughput_report(g, calib, stats, n_frames: int = 60, device: str = "cpu") -> dict:
    return {
        "batch1_fps": throughput(g, calib, stats, n_frames, batch=1),
        "batch36_fps": throughput(g, calib, stats, n_frames, batch=36),
        "dims": list(g.spec.out_dims),
        "device": device,
    }
