"""Procedural desk-scale phantom and B-mode-like slice renderer.

The phantom is a regular-grid echogenicity + attenuation volume containing
ellipsoidal structures with named landmarks and a high-attenuation slab
that casts acoustic shadows. The renderer samples the volume along a
calibrated image plane, applies depth attenuation and multiplicative
Rayleigh speckle, producing images in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .geometry import Calibration, RigidTransform, build_grid


class CoverageError(ValueError):
    """The requested slice plane does not intersect the phantom volume."""


@dataclass(frozen=True)
class Ellipsoid:
    name: str
    center_mm: tuple[float, float, float]
    semiaxes_mm: tuple[float, float, float]
    echogenicity: float
    attenuation: float = 0.02


@dataclass(frozen=True)
class PhantomConfig:
    """Layout of the synthetic phantom, desk scale (~10 cm cube)."""

    size_mm: tuple[float, float, float] = (96.0, 96.0, 96.0)
    voxel_mm: float = 1.5
    background_echo: float = 0.35
    background_attenuation: float = 0.004
    texture_amplitude: float = 0.03
    structures: tuple[Ellipsoid, ...] = (
        Ellipsoid("brain", (30.0, 30.0, 48.0), (16.0, 13.0, 14.0), 0.18, 0.010),
        Ellipsoid("heart", (58.0, 34.0, 40.0), (9.0, 8.0, 8.0), 0.62, 0.020),
        Ellipsoid("stomach", (62.0, 62.0, 52.0), (10.0, 8.0, 9.0), 0.06, 0.006),
        Ellipsoid("kidney", (40.0, 64.0, 44.0), (8.0, 6.0, 7.0), 0.78, 0.025),
        Ellipsoid("cord", (50.0, 48.0, 60.0), (5.0, 5.0, 12.0), 0.90, 0.030),
    )
    # high-attenuation slab (e.g. bone): [x0, x1, y0, y1, z0, z1] in mm
    slab_bounds_mm: tuple[float, float, float, float, float, float] = (
        20.0, 44.0, 18.0, 24.0, 20.0, 76.0,
    )
    slab_attenuation: float = 0.6
    slab_echo: float = 0.95


@dataclass
class Phantom:
    """Echogenicity/attenuation fields on a regular mm grid plus landmarks."""

    echogenicity: np.ndarray  # (nx, ny, nz), values in [0, 1]
    attenuation: np.ndarray  # (nx, ny, nz), per-mm, >= 0
    origin_mm: np.ndarray  # world position of voxel (0, 0, 0)
    voxel_mm: float
    landmarks3d: list[tuple[str, np.ndarray]] = field(default_factory=list)

    @property
    def size_mm(self) -> np.ndarray:
        return (np.array(self.echogenicity.shape) - 1) * self.voxel_mm


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, int, int], amplitude: float) -> np.ndarray:
    """Band-limited texture: coarse Gaussian noise trilinearly upsampled."""
    from scipy.ndimage import zoom

    coarse = rng.normal(size=(8, 8, 8))
    factors = [s / 8 for s in shape]
    up = zoom(coarse, factors, order=1, mode="nearest", grid_mode=True)
    return amplitude * up[: shape[0], : shape[1], : shape[2]]


def make_phantom(cfg: PhantomConfig = PhantomConfig(), seed: int = 0) -> Phantom:
    """Deterministic phantom for (cfg, seed)."""
    shape = tuple(int(round(s / cfg.voxel_mm)) + 1 for s in cfg.size_mm)
    if min(shape) < 32:
        raise ValueError(f"phantom volume too small, got {shape} voxels (need >= 32 per axis)")
    rng = np.random.default_rng(seed)
    echo = np.full(shape, cfg.background_echo) + _smooth_noise(rng, shape, cfg.texture_amplitude)
    atten = np.full(shape, cfg.background_attenuation)
    origin = -np.array(cfg.size_mm) / 2

    idx = np.indices(shape, dtype=np.float64) * cfg.voxel_mm  # volume-local mm
    landmarks: list[tuple[str, np.ndarray]] = []
    for s in cfg.structures:
        c = np.array(s.center_mm)
        a = np.array(s.semiaxes_mm)
        d2 = sum(((idx[i] - c[i]) / a[i]) ** 2 for i in range(3))
        inside = d2 <= 1.0
        echo[inside] = s.echogenicity
        atten[inside] = s.attenuation
        landmarks.append((f"{s.name}_center", origin + c))
    # poles of the first structure give extra point landmarks
    if cfg.structures:
        first = cfg.structures[0]
        c = origin + np.array(first.center_mm)
        landmarks.append((f"{first.name}_top", c + np.array([0.0, 0.0, first.semiaxes_mm[2]])))
        landmarks.append((f"{first.name}_bottom", c - np.array([0.0, 0.0, first.semiaxes_mm[2]])))

    x0, x1, y0, y1, z0, z1 = cfg.slab_bounds_mm
    slab = (
        (idx[0] >= x0) & (idx[0] <= x1)
        & (idx[1] >= y0) & (idx[1] <= y1)
        & (idx[2] >= z0) & (idx[2] <= z1)
    )
    echo[slab] = cfg.slab_echo
    atten[slab] = cfg.slab_attenuation

    np.clip(echo, 0.0, 1.0, out=echo)
    return Phantom(echo, atten, origin_mm=origin, voxel_mm=cfg.voxel_mm, landmarks3d=landmarks)


# ---------------------------------------------------------------------------
# trilinear sampling kernels (numba + numpy fallback)
# ---------------------------------------------------------------------------

def _sample_volumes_numpy(echo, atten, coords):
    """Trilinear sample of both volumes at voxel coords (3, N); 0 outside."""
    nx, ny, nz = echo.shape
    x, y, z = coords
    inside = (x >= 0) & (x <= nx - 1) & (y >= 0) & (y <= ny - 1) & (z >= 0) & (z <= nz - 1)
    xc = np.clip(x, 0, nx - 1)
    yc = np.clip(y, 0, ny - 1)
    zc = np.clip(z, 0, nz - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), nx - 2)
    y0 = np.minimum(np.floor(yc).astype(np.intp), ny - 2)
    z0 = np.minimum(np.floor(zc).astype(np.intp), nz - 2)
    fx, fy, fz = xc - x0, yc - y0, zc - z0
    out_e = np.zeros_like(x)
    out_a = np.zeros_like(x)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (fx if dx else 1 - fx)
                    * (fy if dy else 1 - fy)
                    * (fz if dz else 1 - fz)
                )
                out_e += w * echo[x0 + dx, y0 + dy, z0 + dz]
                out_a += w * atten[x0 + dx, y0 + dy, z0 + dz]
    out_e[~inside] = 0.0
    out_a[~inside] = 0.0
    return out_e, out_a, inside


_sample_volumes_numba = None
if backend.use_numba():
    from numba import njit

    @njit(cache=True)
    def _sample_volumes_numba_impl(echo, atten, coords):  # pragma: no cover - numba
        nx, ny, nz = echo.shape
        n = coords.shape[1]
        out_e = np.zeros(n)
        out_a = np.zeros(n)
        inside = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            x = coords[0, i]
            y = coords[1, i]
            z = coords[2, i]
            if x < 0 or x > nx - 1 or y < 0 or y > ny - 1 or z < 0 or z > nz - 1:
                continue
            inside[i] = True
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            z0 = int(np.floor(z))
            if x0 > nx - 2:
                x0 = nx - 2
            if y0 > ny - 2:
                y0 = ny - 2
            if z0 > nz - 2:
                z0 = nz - 2
            fx = x - x0
            fy = y - y0
            fz = z - z0
            e = 0.0
            a = 0.0
            for dx in range(2):
                wx = fx if dx == 1 else 1.0 - fx
                for dy in range(2):
                    wy = fy if dy == 1 else 1.0 - fy
                    for dz in range(2):
                        wz = fz if dz == 1 else 1.0 - fz
                        w = wx * wy * wz
                        e += w * echo[x0 + dx, y0 + dy, z0 + dz]
                        a += w * atten[x0 + dx, y0 + dy, z0 + dz]
            out_e[i] = e
            out_a[i] = a
        return out_e, out_a, inside

    _sample_volumes_numba = _sample_volumes_numba_impl


def _sample_volumes(echo, atten, coords):
    if _sample_volumes_numba is not None:
        return _sample_volumes_numba(echo, atten, np.ascontiguousarray(coords))
    return _sample_volumes_numpy(echo, atten, coords)


RAYLEIGH_MEAN = float(np.sqrt(np.pi / 2.0))


def render_slice(
    ph: Phantom,
    calib: Calibration,
    pose: RigidTransform,
    dims: tuple[int, int],
    speckle_seed: int | None = None,
) -> np.ndarray:
    """Render one B-mode-like frame at the given probe pose.

    Depth attenuation accumulates along the image v axis (two-way, exp
    law), so high-attenuation voxels shadow everything beneath them.
    ``speckle_seed=None`` disables speckle (deterministic render); any int
    seeds unit-mean multiplicative Rayleigh speckle.
    """
    w, h = dims
    grid = build_grid(calib, pose, dims)  # (3, H, W) world mm
    coords = (grid.channels.reshape(3, -1) - ph.origin_mm[:, None]) / ph.voxel_mm
    echo, atten, inside = _sample_volumes(ph.echogenicity, ph.attenuation, coords)
    if not inside.any():
        raise CoverageError("slice plane lies entirely outside the phantom volume")
    echo = echo.reshape(h, w)
    atten = atten.reshape(h, w)

    # exclusive cumulative attenuation down each column (v = depth axis)
    step_mm = float(calib.spacing_mm[1])
    path = np.cumsum(atten, axis=0) - atten
    transmission = np.exp(-2.0 * path * step_mm)
    val = echo * transmission

    if speckle_seed is not None:
        rng = np.random.default_rng(speckle_seed)
        speckle = rng.rayleigh(scale=1.0, size=(h, w)) / RAYLEIGH_MEAN
        val = val * speckle

    return np.clip(2.0 * val - 1.0, -1.0, 1.0)


def render_landmarks(
    ph: Phantom,
    calib: Calibration,
    pose: RigidTransform,
    dims: tuple[int, int],
    slab_mm: float = 1.0,
) -> list[tuple[str, float, float]]:
    """Project 3-D landmarks lying within ``slab_mm`` of the slice plane."""
    from .geometry import compose, invert

    w, h = dims
    world_to_image = invert(compose(pose, calib.image_to_probe))
    out = []
    for name, p in ph.landmarks3d:
        q = world_to_image.apply(p)
        if abs(q[2]) > slab_mm:
            continue
        u = q[0] / calib.spacing_mm[0]
        v = q[1] / calib.spacing_mm[1]
        if 0 <= u < w and 0 <= v < h:
            out.append((name, float(u), float(v)))
    return out


def save_phantom(ph: Phantom, path) -> None:
    """Persist volumes + landmarks to an npz archive."""
    names = [n for n, _ in ph.landmarks3d]
    pts = np.array([p for _, p in ph.landmarks3d]).reshape(-1, 3)
    np.savez_compressed(
        path,
        echogenicity=ph.echogenicity,
        attenuation=ph.attenuation,
        origin_mm=ph.origin_mm,
        voxel_mm=np.array([ph.voxel_mm]),
        landmark_names=np.array(names),
        landmark_points=pts,
    )


def load_phantom(path) -> Phantom:
    d = np.load(path, allow_pickle=False)
    lms = [
        (str(n), d["landmark_points"][i])
        for i, n in enumerate(d["landmark_names"])
    ]
    return Phantom(
        echogenicity=d["echogenicity"],
        attenuation=d["attenuation"],
        origin_mm=d["origin_mm"],
        voxel_mm=float(d["voxel_mm"][0]),
        landmarks3d=lms,
    )
