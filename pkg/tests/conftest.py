import numpy as np
import pytest

from usgan.geometry import Calibration, RigidTransform, quat_from_axis_angle


def random_transform(rng: np.random.Generator, trans_scale: float = 100.0) -> RigidTransform:
    q = rng.normal(size=4)
    return RigidTransform(q, rng.uniform(-trans_scale, trans_scale, size=3))


def random_calibration(rng: np.random.Generator) -> Calibration:
    tf = random_transform(rng, trans_scale=20.0)
    return Calibration(tf, rng.uniform(0.05, 0.5, size=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
