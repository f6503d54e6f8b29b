"""Spatially-conditioned GAN simulator for freehand ultrasound.

Subpackages cover rigid-transform geometry and pinhead calibration, a
synthetic speckle phantom, dataset generation and I/O, the generator /
discriminator networks with a numpy+numba compute backend, adversarial and
supervised training loops, an evaluation harness, and a streaming inference
service with its CLI.
"""

__version__ = "0.1.0"
