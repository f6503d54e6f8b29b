import numpy as np
import pytest

from usgan.calibration import (
    ConvergenceError,
    ObservabilityError,
    PinheadObservation,
    calibrate_pinhead,
    load_observations,
    save_observations,
    synthesize_pinhead_observations,
)
from usgan.geometry import (
    Calibration,
    GeometryError,
    RigidTransform,
    pose_distance,
    quat_from_axis_angle,
)

DIMS = (160, 120)


def true_calibration():
    tf = RigidTransform(
        quat_from_axis_angle(np.array([0.3, -0.5, 0.8]), 0.4),
        np.array([12.0, -4.0, 30.0]),
    )
    return Calibration(tf, np.array([0.2, 0.2]))


def perturbed_guess(calib, dq_deg=5.0, dt=5.0):
    q = quat_from_axis_angle(np.array([1.0, 0.2, -0.4]), np.radians(dq_deg))
    from usgan.geometry import quat_multiply

    tf = RigidTransform(
        quat_multiply(calib.image_to_probe.q, q),
        calib.image_to_probe.t + np.array([dt, -dt, dt / 2]),
    )
    return Calibration(tf, calib.spacing_mm * 1.15)


PIN = np.array([100.0, -50.0, 200.0])


class TestCalibrateNoiseless:
    def test_exact_recovery(self):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 40, DIMS, noise_px=0.0, seed=7)
        res = calibrate_pinhead(obs, perturbed_guess(calib), PIN + np.array([8.0, -6.0, 4.0]))
        assert res.residual_rms_mm < 1e-6
        d, r = pose_distance(res.calibration.image_to_probe, calib.image_to_probe)
        assert d < 1e-4 and r < 1e-4
        assert np.max(np.abs(res.calibration.spacing_mm - calib.spacing_mm)) < 1e-6
        assert np.max(np.abs(res.pin_mm - PIN)) < 1e-4

    def test_objective_non_increasing(self):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 30, DIMS, noise_px=0.5, seed=3)
        res = calibrate_pinhead(obs, perturbed_guess(calib), PIN + 5.0)
        hist = np.array(res.objective_history)
        assert np.all(np.diff(hist) <= 0)

    def test_deterministic(self):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 30, DIMS, noise_px=0.5, seed=3)
        r1 = calibrate_pinhead(obs, perturbed_guess(calib), PIN + 5.0)
        r2 = calibrate_pinhead(obs, perturbed_guess(calib), PIN + 5.0)
        assert r1.residual_rms_mm == r2.residual_rms_mm
        assert np.array_equal(r1.pin_mm, r2.pin_mm)


class TestCalibrateNoisy:
    def test_monte_carlo_recovery_87_observations(self):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 87, DIMS, noise_px=1.0, seed=11)
        res = calibrate_pinhead(obs, perturbed_guess(calib), PIN + np.array([5.0, 5.0, -5.0]))
        assert np.max(np.abs(res.calibration.spacing_mm / calib.spacing_mm - 1)) < 0.02
        d, r = pose_distance(res.calibration.image_to_probe, calib.image_to_probe)
        assert d < 1.0
        assert r < 1.0
        # injected noise is sigma=1 px at 0.2 mm spacing -> ~0.2 mm per axis;
        # the 3-D residual rms should sit near sqrt(2/3)*0.2 mm
        injected = np.sqrt(2.0 / 3.0) * 1.0 * 0.2
        assert abs(res.residual_rms_mm - injected) / injected < 0.2


class TestCalibrateErrors:
    def test_single_pose_unobservable(self):
        calib = true_calibration()
        base = synthesize_pinhead_observations(calib, PIN, 1, DIMS, seed=5)[0]
        obs = [PinheadObservation(base.probe_pose, (10.0 + i, 20.0 + i)) for i in range(12)]
        with pytest.raises(ObservabilityError):
            calibrate_pinhead(obs, perturbed_guess(calib), PIN)

    def test_too_few_observations(self):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 5, DIMS, seed=5)
        with pytest.raises(GeometryError):
            calibrate_pinhead(obs, perturbed_guess(calib), PIN)

    def test_iteration_cap_raises_with_residual(self):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 30, DIMS, noise_px=1.0, seed=9)
        with pytest.raises(ConvergenceError) as exc:
            calibrate_pinhead(obs, perturbed_guess(calib, dq_deg=40, dt=80), PIN + 50.0, max_iterations=2)
        assert exc.value.residual_rms_mm > 0


class TestObservationCSV:
    def test_round_trip(self, tmp_path):
        calib = true_calibration()
        obs = synthesize_pinhead_observations(calib, PIN, 10, DIMS, noise_px=0.3, seed=2)
        path = tmp_path / "obs.csv"
        save_observations(path, obs)
        loaded = load_observations(path)
        assert len(loaded) == len(obs)
        for a, b in zip(obs, loaded):
            assert np.allclose(a.probe_pose.q, b.probe_pose.q)
            assert np.allclose(a.probe_pose.t, b.probe_pose.t)
            assert a.pixel == pytest.approx(b.pixel)
