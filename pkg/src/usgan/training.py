"""Adversarial training loop and the two supervised baselines.

One iteration samples a data batch, updates the discriminator once on the
real/fake split, then updates the generator once on freshly drawn noise at
the same batch poses. Everything is driven by a single seeded RNG so runs
are reproducible; telemetry goes to a CSV step log.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .geometry import GridStats, build_grid, normalize_grid
from .nn.adam import Adam
from .nn.checkpoint import Checkpoint
from .nn.networks import Discriminator, Generator
from .nn.specs import DiscriminatorSpec, GeneratorSpec

EPS = 1e-7

MODES = ("gan", "l2gan", "regress")


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, msg: str, diagnostic_path: str | None = None):
        super().__init__(msg)
        self.diagnostic_path = diagnostic_path


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    mode: str = "gan"
    batch_size: int = 36
    lr: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    label_smoothing: float = 0.9
    l2_weight: float = 1.0
    checkpoint_interval: int = 0  # 0 -> only the final checkpoint

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lr <= 0 or not (0 < self.adam_beta1 < 1) or not (0 < self.adam_beta2 < 1):
            raise ValueError("invalid optimizer settings")
        if self.batch_size < 1 or self.steps < 1 or self.l2_weight < 0:
            raise ValueError("invalid batch/steps/l2_weight")
        if not (0 < self.label_smoothing <= 1):
            raise ValueError("label_smoothing must be in (0, 1]")

    def to_json_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass
class StepRecord:
    step: int
    j_d: float
    j_g: float
    d_real_mean: float
    d_fake_mean: float
    wall_ms: float

    CSV_HEADER = ["step", "J_D", "J_G", "d_real_mean", "d_fake_mean", "wall_ms"]

    def csv_row(self) -> list:
        return [
            self.step,
            repr(self.j_d),
            repr(self.j_g),
            repr(self.d_real_mean),
            repr(self.d_fake_mean),
            repr(self.wall_ms),
        ]


def write_step_log(path: str | Path, records: list[StepRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(StepRecord.CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)


def clamp_triggered(p) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(np.any(p < EPS) or np.any(p > 1.0 - EPS))


def d_loss(p_real, p_fake, alpha: float = 1.0) -> float:
    """Discriminator cost with one-sided label smoothing on the real term."""
    if not (0 < alpha <= 1):
        raise ValueError("alpha must be in (0, 1]")
    pr = _clamp(p_real)
    pf = _clamp(p_fake)
    real_term = np.mean(alpha * np.log(pr) + (1.0 - alpha) * np.log(1.0 - pr))
    fake_term = np.mean(np.log(1.0 - pf))
    return float(-0.5 * real_term - 0.5 * fake_term)


def g_loss(p_fake) -> float:
    """Non-saturating generator cost: -1/2 E[log D(G(z, y), y)]."""
    return float(-0.5 * np.mean(np.log(_clamp(p_fake))))


def l2_term(generated: np.ndarray, target: np.ndarray) -> float:
    """Mean per-pixel squared difference."""
    g = np.asarray(generated, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean((g - t) ** 2))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# batch plumbing
# ---------------------------------------------------------------------------

def dataset_grid_stats(ds: Dataset) -> GridStats:
    """Pooled coordinate statistics over every frame, streaming accumulation."""
    count = 0
    total = np.zeros(3)
    ssq = np.zeros(3)
    for f in ds.frames:
        g = build_grid(ds.calibration, f.pose, ds.dims).channels
        count += g.shape[1] * g.shape[2]
        total += g.sum(axis=(1, 2))
        ssq += (g**2).sum(axis=(1, 2))
    mean = total / count
    var = ssq / count - mean**2
    return GridStats(mean, np.sqrt(np.maximum(var, 0.0)))


def precompute_grids(ds: Dataset, stats: GridStats, dtype=np.float32) -> np.ndarray:
    """(N, 3, H, W) normalized conditioning grids for every frame."""
    out = np.empty((len(ds.frames), 3, ds.dims[1], ds.dims[0]), dtype=dtype)
    for i, f in enumerate(ds.frames):
        g = build_grid(ds.calibration, f.pose, ds.dims)
        out[i] = normalize_grid(g, stats).channels.astype(dtype)
    return out


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    records: list[StepRecord] = field(default_factory=list)
    checkpoint_paths: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def train(
    cfg: TrainConfig,
    ds: Dataset,
    gspec: GeneratorSpec,
    dspec: DiscriminatorSpec | None = None,
    out: str | Path | None = None,
    train_indices: list[int] | None = None,
    progress: bool = False,
) -> TrainResult:
    """Run cfg.steps iterations of the configured mode.

    ``out`` is the checkpoint path prefix; intermediate checkpoints are
    written every ``cfg.checkpoint_interval`` steps plus one final
    checkpoint and a step log CSV. ``train_indices`` restricts sampling to
    a subset of frames (fold training split).
    """
    if cfg.mode in ("gan", "l2gan") and dspec is None:
        raise TrainingError(f"mode {cfg.mode} requires a discriminator spec")
    if (ds.dims != gspec.out_dims) or (dspec is not None and ds.dims != dspec.in_dims):
        raise TrainingError("dataset dims do not match network specs")

    stats = ds.grid_stats or dataset_grid_stats(ds)
    grids = precompute_grids(ds, stats)
    images = np.stack([f.image for f in ds.frames]).astype(np.float32)[:, None]  # (N,1,H,W)
    pool = np.asarray(train_indices if train_indices is not None else np.arange(len(ds.frames)))
    if pool.size == 0:
        raise TrainingError("empty training pool")

    rng = np.random.default_rng(cfg.seed)
    gen = Generator(gspec, seed=cfg.seed)
    disc = Discriminator(dspec, seed=cfg.seed + 1) if dspec is not None else None
    opt_g = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
    opt_d = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2)

    records: list[StepRecord] = []
    ckpt_paths: list[str] = []
    out = Path(out) if out is not None else None

    # embed the calibration so a checkpoint is self-contained for serving
    tconf = {**cfg.to_json_dict(), "calibration": ds.calibration.to_json_dict()}

    def save(tag: str, step: int) -> str:
        assert out is not None
        ck = Checkpoint(gen, disc, stats, tconf, step)
        p = out.parent / f"{out.name}{tag}"
        ck.save(p)
        return str(p)

    b = cfg.batch_size
    npix = gspec.out_dims[0] * gspec.out_dims[1]
    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter()
        idx = pool[rng.integers(0, pool.size, size=b)]
        x = images[idx]
        y = grids[idx]

        if cfg.mode == "regress":
            z = rng.standard_normal((b, gspec.noise_dim)).astype(np.float32)
            fake = gen.forward(z, y, train=True)
            diff = fake.astype(np.float64) - x
            loss = float(np.mean(diff**2))
            gen.zero_grads()
            gen.backward((2.0 * diff / (b * npix)).astype(np.float32))
            opt_g.step(gen.parameters(), gen.gradients())
            j_d = 0.0
            j_g = loss
            d_real = 0.0
            d_fake = 0.0
        else:
            alpha = cfg.label_smoothing
            # discriminator update
            z = rng.standard_normal((b, gspec.noise_dim)).astype(np.float32)
            fake = gen.forward(z, y, train=True)
            both = np.concatenate([x, fake], axis=0)
            both_grids = np.concatenate([y, y], axis=0)
            logits = disc.forward(both, both_grids, train=True)
            p = _sigmoid(logits)
            p_real, p_fake = p[:b], p[b:]
            j_d = d_loss(p_real, p_fake, alpha)
            dl = np.concatenate([-(alpha - p_real) / (2 * b), p_fake / (2 * b)])
            disc.zero_grads()
            disc.backward(dl.astype(np.float32))
            opt_d.step(disc.parameters(), disc.gradients())

            # generator update: fresh noise, same batch poses
            z2 = rng.standard_normal((b, gspec.noise_dim)).astype(np.float32)
            fake2 = gen.forward(z2, y, train=True)
            logits2 = disc.forward(fake2, y, train=True)
            p2 = _sigmoid(logits2)
            j_g = g_loss(p2)
            dimg = -(1.0 - p2) / (2 * b)
            disc.zero_grads()
            dfake = disc.backward(dimg.astype(np.float32))
            if cfg.mode == "l2gan" and cfg.l2_weight > 0:
                lam = cfg.l2_weight
                j_g += lam * l2_term(fake2, x)
                dfake = dfake + (2.0 * lam * (fake2 - x) / (b * npix)).astype(np.float32)
            gen.zero_grads()
            gen.backward(dfake)
            opt_g.step(gen.parameters(), gen.gradients())
            d_real = float(np.mean(p_real))
            d_fake = float(np.mean(p_fake))

        wall_ms = (time.perf_counter() - t0) * 1e3
        rec = StepRecord(step, j_d, j_g, d_real, d_fake, wall_ms)
        if not np.all(np.isfinite([rec.j_d, rec.j_g, rec.d_real_mean, rec.d_fake_mean])):
            diag = save("_diverged", step) if out is not None else None
            raise NonFiniteLossError(f"non-finite loss at step {step}", diag)
        records.append(rec)
        if progress and (step % 50 == 0 or step == 1):
            print(
                f"step {step}/{cfg.steps} J_D={rec.j_d:.4f} J_G={rec.j_g:.4f} "
                f"D(real)={rec.d_real_mean:.3f} D(fake)={rec.d_fake_mean:.3f} "
                f"{rec.wall_ms:.0f} ms",
                flush=True,
            )
        if out is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            ckpt_paths.append(save(f"_step{step}", step))

    final = Checkpoint(gen, disc, stats, tconf, cfg.steps)
    if out is not None:
        final.save(out)
        ckpt_paths.append(str(out))
        write_step_log(out.parent / f"{out.name}.log.csv", records)
    return TrainResult(final, records, ckpt_paths)


def train_gan(cfg, ds, gspec, dspec, **kw) -> TrainResult:
    if cfg.mode != "gan":
        cfg = TrainConfig(**{**cfg.to_json_dict(), "mode": "gan"})
    return train(cfg, ds, gspec, dspec, **kw)


def train_l2gan(cfg, ds, gspec, dspec, **kw) -> TrainResult:
    if cfg.mode != "l2gan":
        cfg = TrainConfig(**{**cfg.to_json_dict(), "mode": "l2gan"})
    return train(cfg, ds, gspec, dspec, **kw)


def train_regression(cfg, ds, gspec, **kw) -> TrainResult:
    if cfg.mode != "regress":
        cfg = TrainConfig(**{**cfg.to_json_dict(), "mode": "regress"})
    return train(cfg, ds, gspec, None, **kw)
