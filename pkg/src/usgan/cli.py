"""Command-line surface: dataset synthesis, calibration, training,
sampling, evaluation, benchmarking and serving."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import backend
from .calibration import calibrate_pinhead, load_observations
from .dataset import (
    default_calibration,
    default_sweep_config,
    generate_sweep,
    load_dataset,
    split_folds,
    unit_to_u8,
)
from .evaluation import (
    EvalConfigError,
    conditioning_score,
    diversity_at,
    gaussian_blur,
    hf_energy,
    landmark_error,
    make_sampler,
    sample_at,
    throughput_report,
)
from .geometry import ExclusionThresholds, RigidTransform
from .nn.checkpoint import load_checkpoint
from .nn.specs import DiscriminatorSpec, GeneratorSpec
from .phantom import PhantomConfig, load_phantom, make_phantom, render_slice, save_phantom
from .training import TrainConfig, train


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


def _parse_dims(s: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in s.lower().split("x"))
        if w < 1 or h < 1:
            raise ValueError
        return w, h
    except ValueError:
        raise click.BadParameter(f"dims must be WxH, got {s!r}")


def _parse_pose(s: str) -> RigidTransform:
    vals = [float(v) for v in s.split(",")]
    if len(vals) != 7:
        raise click.BadParameter("pose must be qw,qx,qy,qz,tx,ty,tz")
    q = np.array(vals[:4])
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-3:
        raise click.BadParameter(f"quaternion norm {n:.6f} deviates from 1 beyond 1e-3")
    return RigidTransform(q / n, np.array(vals[4:]))


@click.group()
def main():
    """Spatially-conditioned ultrasound simulation toolkit."""


@main.command("make-phantom")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--frames", default=2000, type=int)
@click.option("--dims", default="64x48")
def make_phantom_cmd(out, seed, frames, dims):
    """Synthesize a phantom and render a tracked sweep dataset into DIR."""
    dims = _parse_dims(dims)
    try:
        ph = make_phantom(PhantomConfig(), seed=seed)
        calib = default_calibration(dims)
        ds = generate_sweep(ph, calib, default_sweep_config(frames, seed=seed), dims)
        from .dataset import write_dataset

        write_dataset(ds, out)
        save_phantom(ph, Path(out) / "phantom.npz")
    except Exception as e:
        _fail(str(e))
    click.echo(f"wrote {frames} frames at {dims[0]}x{dims[1]} to {out}")


@main.command()
@click.option("--obs", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--init-spacing", default=0.5, type=float,
              help="initial pixel spacing guess in mm/px")
def calibrate(obs, out, init_spacing):
    """Solve the pinhead calibration from an observation CSV."""
    from .geometry import Calibration

    try:
        observations = load_observations(obs)
        init = Calibration(
            RigidTransform(np.array([1.0, 0, 0, 0]), np.zeros(3)),
            np.array([init_spacing, init_spacing]),
        )
        pin_guess = np.mean([o.probe_pose.t for o in observations], axis=0)
        result = calibrate_pinhead(observations, init, pin_guess)
        result.calibration.save(out)
    except Exception as e:
        _fail(str(e))
    click.echo(
        f"converged in {result.iterations} iterations, "
        f"residual rms {result.residual_rms_mm:.4f} mm -> {out}"
    )


@main.command("train")
@click.option("--mode", type=click.Choice(["gan", "l2gan", "regress"]), default="gan")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=5000, type=int)
@click.option("--batch", default=36, type=int)
@click.option("--lr", default=0.0002, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--l2-weight", default=1.0, type=float)
@click.option("--checkpoint-interval", default=0, type=int)
@click.option("--gen-channels", default=128, type=int)
@click.option("--disc-channels", default=8, type=int)
@click.option("--disc-stages", default=3, type=int)
@click.option("--upsamples", default=4, type=int)
@click.option("--holdout", default=0, type=int, help="reserve the last N frames as held-out")
def train_cmd(mode, data, out, steps, batch, lr, seed, l2_weight, checkpoint_interval,
              gen_channels, disc_channels, disc_stages, upsamples, holdout):
    """Train a generator (adversarial or regression) on a dataset DIR."""
    try:
        ds = load_dataset(data)
        gspec = GeneratorSpec(
            out_dims=ds.dims, n_upsample=upsamples, initial_channels=gen_channels
        )
        dspec = None
        if mode in ("gan", "l2gan"):
            dspec = DiscriminatorSpec(
                in_dims=ds.dims, n_stages=disc_stages, initial_channels=disc_channels
            )
        cfg = TrainConfig(
            steps=steps, mode=mode, batch_size=batch, lr=lr, seed=seed,
            l2_weight=l2_weight, checkpoint_interval=checkpoint_interval,
        )
        indices = None
        if holdout > 0:
            if holdout >= len(ds.frames):
                raise ValueError("holdout exceeds dataset size")
            from .geometry import exclusion_filter

            test_poses = [f.pose for f in ds.frames[-holdout:]]
            train_poses = [f.pose for f in ds.frames[:-holdout]]
            indices = exclusion_filter(train_poses, test_poses, ExclusionThresholds())
        train(cfg, ds, gspec, dspec, out=out, train_indices=indices, progress=True)
    except Exception as e:
        _fail(str(e))
    click.echo(f"trained {steps} steps ({mode}) -> {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--pose", required=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--float-out", default=None, type=click.Path(),
              help="also write the raw float32 image as .npy (lossless)")
def sample(ckpt, pose, seed, out, float_out):
    """Generate one frame at a pose and write it as a PNG."""
    from PIL import Image

    from .geometry import Calibration

    try:
        p = _parse_pose(pose)
        ck = load_checkpoint(ckpt)
        if ck.grid_stats is None:
            raise ValueError("checkpoint lacks grid statistics")
        calib = (
            Calibration.from_json_dict(ck.train_config["calibration"])
            if "calibration" in ck.train_config
            else default_calibration(ck.generator.spec.out_dims)
        )
        img = sample_at(ck.generator, calib, ck.grid_stats, p, seed=seed)
        Image.fromarray(unit_to_u8(img)).save(out)
        if float_out:
            np.save(float_out, img.astype(np.float32))
    except Exception as e:
        _fail(str(e))
    click.echo(f"wrote {out}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--report", required=True, type=click.Path())
@click.option("--distractors", default=4, type=int)
@click.option("--max-poses", default=100, type=int)
@click.option("--diversity-n", default=16, type=int)
@click.option("--seed", default=0, type=int)
def eval_cmd(ckpt, data, report, distractors, max_poses, diversity_n, seed):
    """Evaluate a checkpoint against a dataset DIR, writing a JSON report."""
    from .geometry import Calibration

    try:
        ck = load_checkpoint(ckpt)
        ds = load_dataset(data)
        if ck.grid_stats is None:
            raise ValueError("checkpoint lacks grid statistics")
        calib = (
            Calibration.from_json_dict(ck.train_config["calibration"])
            if "calibration" in ck.train_config
            else ds.calibration
        )
        sampler = make_sampler(ck.generator, calib, ck.grid_stats)
        folds = split_folds(ds, 5, ExclusionThresholds())
        test_idx = folds[0][1][:max_poses]
        test_frames = [ds.frames[i] for i in test_idx]
        poses = [f.pose for f in test_frames]

        out: dict = {"n_test_poses": len(poses)}
        phantom_path = Path(data) / "phantom.npz"
        if phantom_path.exists():
            ph = load_phantom(phantom_path)
            render = lambda p: render_slice(ph, calib, p, ds.dims, speckle_seed=None)
            out["conditioning_score"] = conditioning_score(
                sampler, poses, render, n_distractors=distractors, seed=seed
            )
            divs = []
            for k, pose in enumerate(poses[:3]):
                rep = diversity_at(
                    sampler, pose, diversity_n, seed=seed + 1000 * k, reference=render(pose)
                )
                divs.append(
                    {
                        "n_samples": rep.n_samples,
                        "pairwise_mse": rep.pairwise_mse,
                        "correlation": rep.correlation,
                    }
                )
            out["diversity"] = divs
        else:
            out["conditioning_score"] = None
            out["diversity"] = []

        try:
            lm = landmark_error(sampler, test_frames, calib.spacing_mm, seed=seed)
            out["landmark"] = lm.to_json_dict()
        except EvalConfigError:
            out["landmark"] = None  # no annotated frames in the test split

        sigmas = [0.0, 0.5, 1.0, 1.5, 2.0]
        hf: dict = {}
        samples = [sampler(p, seed + i) for i, p in enumerate(poses[:20])]
        for s in sigmas:
            hf[str(s)] = float(
                np.median(
                    [
                        hf_energy(gaussian_blur(im, s, calib.spacing_mm), calib.spacing_mm, 4.0)
                        for im in samples
                    ]
                )
            )
        out["hf"] = {"model": hf}
        out["throughput"] = throughput_report(ck.generator, calib, ck.grid_stats)
        Path(report).write_text(json.dumps(out, indent=2))
    except Exception as e:
        _fail(str(e))
    click.echo(f"wrote {report}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
def bench(ckpt):
    """Throughput benchmark for a checkpoint; prints JSON to stdout."""
    from .geometry import Calibration

    try:
        ck = load_checkpoint(ckpt)
        if ck.grid_stats is None:
            raise ValueError("checkpoint lacks grid statistics")
        calib = (
            Calibration.from_json_dict(ck.train_config["calibration"])
            if "calibration" in ck.train_config
            else default_calibration(ck.generator.spec.out_dims)
        )
        rep = throughput_report(ck.generator, calib, ck.grid_stats)
        rep["backend"] = backend.backend_name()
    except Exception as e:
        _fail(str(e))
    click.echo(json.dumps(rep, indent=2))


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--port", default=8080, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--phantom", "phantom_path", default=None, type=click.Path(exists=True),
              help="phantom npz enabling the /render_gt debug endpoint")
def serve(ckpt, port, host, phantom_path):
    """Serve the checkpoint over HTTP + WebSocket."""
    from .server import serve as run_serve

    try:
        ph = load_phantom(phantom_path) if phantom_path else None
        run_serve(ckpt, port=port, host=host, phantom=ph)
    except Exception as e:
        _fail(str(e))


if __name__ == "__main__":
    main()
