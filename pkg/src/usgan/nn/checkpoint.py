"""Checkpoint container: parameter npz plus a sidecar spec JSON.

``CKPT.npz`` holds every parameter and batch-norm statistic of the saved
networks; ``CKPT.json`` records the architecture specs, grid statistics,
training configuration and step. Loading rebuilds the networks from the
sidecar and fails loudly on any spec or shape mismatch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import GridStats
from .networks import Discriminator, Generator
from .specs import DiscriminatorSpec, GeneratorSpec, SpecError


def spec_hash(sidecar: dict) -> str:
    blob = json.dumps(
        {k: sidecar[k] for k in ("generator_spec", "discriminator_spec") if sidecar.get(k)},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    generator: Generator
    discriminator: Discriminator | None
    grid_stats: GridStats | None
    train_config: dict
    step: int

    @property
    def hash(self) -> str:
        return spec_hash(self._sidecar())

    def _sidecar(self) -> dict:
        return {
            "generator_spec": self.generator.spec.to_json_dict(),
            "discriminator_spec": (
                self.discriminator.spec.to_json_dict() if self.discriminator else None
            ),
            "grid_stats": self.grid_stats.to_json_dict() if self.grid_stats else None,
            "train_config": self.train_config,
            "step": self.step,
            "generator_seed": self.generator.seed,
            "discriminator_seed": self.discriminator.seed if self.discriminator else None,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {f"g/{k}": v for k, v in self.generator.state_dict().items()}
        if self.discriminator is not None:
            arrays.update({f"d/{k}": v for k, v in self.discriminator.state_dict().items()})
        np.savez(path.with_suffix(".npz"), **arrays)
        path.with_suffix(".json").write_text(json.dumps(self._sidecar(), indent=2))


def load_checkpoint(path: str | Path, dtype=np.float32) -> Checkpoint:
    path = Path(path)
    json_path = path.with_suffix(".json")
    npz_path = path.with_suffix(".npz")
    for p in (json_path, npz_path):
        if not p.exists():
            raise IOError(f"checkpoint file missing: {p}")
    sidecar = json.loads(json_path.read_text())
    data = np.load(npz_path)

    gspec = GeneratorSpec.from_json_dict(sidecar["generator_spec"])
    gen = Generator(gspec, seed=int(sidecar.get("generator_seed", 0)), dtype=dtype)
    gstate = {k[2:]: data[k] for k in data.files if k.startswith("g/")}
    try:
        gen.load_state_dict(gstate)
    except SpecError as e:
        raise SpecError(f"checkpoint {path}: generator spec mismatch: {e}") from e

    disc = None
    if sidecar.get("discriminator_spec"):
        dspec = DiscriminatorSpec.from_json_dict(sidecar["discriminator_spec"])
        disc = Discriminator(dspec, seed=int(sidecar.get("discriminator_seed", 0)), dtype=dtype)
        dstate = {k[2:]: data[k] for k in data.files if k.startswith("d/")}
        try:
            disc.load_state_dict(dstate)
        except SpecError as e:
            raise SpecError(f"checkpoint {path}: discriminator spec mismatch: {e}") from e

    stats = GridStats.from_json_dict(sidecar["grid_stats"]) if sidecar.get("grid_stats") else None
    return Checkpoint(gen, disc, stats, sidecar.get("train_config", {}), int(sidecar.get("step", 0)))
