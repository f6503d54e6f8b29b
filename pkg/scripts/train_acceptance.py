"""Train the desk-scale GAN and regression baseline used by the acceptance
tests (tests/test_acceptance.py). Idempotent: existing artifacts are reused.

Artifacts under runs/acceptance/:
  data/          2000-frame 64x48 phantom sweep dataset (+ phantom.npz)
  split.json     train/test indices (contiguous test block, exclusion-filtered)
  gan.npz/.json  adversarially trained generator + discriminator
  regress.npz/.json  regression baseline, identical budget
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from usgan.dataset import (  # noqa: E402
    default_calibration,
    default_sweep_config,
    generate_sweep,
    load_dataset,
    split_folds,
    write_dataset,
)
from usgan.geometry import ExclusionThresholds  # noqa: E402
from usgan.nn.specs import DiscriminatorSpec, GeneratorSpec  # noqa: E402
from usgan.phantom import PhantomConfig, make_phantom, save_phantom  # noqa: E402
from usgan.training import TrainConfig, train  # noqa: E402

DIMS = (64, 48)
N_FRAMES = 2000
SEED = 0
GSPEC = GeneratorSpec(out_dims=DIMS, n_upsample=4, initial_channels=128)
DSPEC = DiscriminatorSpec(in_dims=DIMS, n_stages=3, initial_channels=8)


def ensure_dataset(out: Path) -> Path:
    data = out / "data"
    if (data / "manifest.json").exists():
        print(f"dataset exists: {data}", flush=True)
        return data
    print("generating dataset...", flush=True)
    ph = make_phantom(PhantomConfig(), seed=SEED)
    calib = default_calibration(DIMS)
    ds = generate_sweep(ph, calib, default_sweep_config(N_FRAMES, seed=SEED), DIMS)
    write_dataset(ds, data)
    save_phantom(ph, data / "phantom.npz")
    return data


def ensure_split(out: Path, ds) -> dict:
    split_path = out / "split.json"
    if split_path.exists():
        return json.loads(split_path.read_text())
    # contiguous 100-frame held-out block with pose-proximity exclusion
    train_idx, test_idx = split_folds(ds, 20, ExclusionThresholds())[0]
    split = {"train": train_idx, "test": test_idx}
    split_path.write_text(json.dumps(split))
    print(f"split: {len(train_idx)} train / {len(test_idx)} test", flush=True)
    return split


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "runs" / "acceptance"))
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--modes", default="gan,regress")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data = ensure_dataset(out)
    ds = load_dataset(data)
    split = ensure_split(out, ds)

    for mode in args.modes.split(","):
        ck = out / mode
        if ck.with_suffix(".npz").exists():
            print(f"{mode}: checkpoint exists, skipping", flush=True)
            continue
        cfg = TrainConfig(
            steps=args.steps,
            mode=mode,
            batch_size=36,
            lr=0.0002,
            seed=SEED,
            checkpoint_interval=1000,
        )
        dspec = DSPEC if mode in ("gan", "l2gan") else None
        t0 = time.time()
        print(f"training {mode} for {args.steps} steps...", flush=True)
        train(cfg, ds, GSPEC, dspec, out=ck, train_indices=split["train"], progress=True)
        print(f"{mode} done in {(time.time() - t0) / 60:.1f} min", flush=True)


if __name__ == "__main__":
    main()
