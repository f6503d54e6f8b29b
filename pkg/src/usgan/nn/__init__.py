"""Minimal numpy/numba neural-network stack used by the GAN networks."""

from .specs import DiscriminatorSpec, GeneratorSpec, SpecError
from .networks import Discriminator, Generator, build_discriminator, build_generator

__all__ = [
    "DiscriminatorSpec",
    "GeneratorSpec",
    "SpecError",
    "Discriminator",
    "Generator",
    "build_discriminator",
    "build_generator",
]
