"""Pinhead-based spatial calibration of a tracked ultrasound probe.

A fixed pin tip is imaged from many probe poses; its world position is
constant, so the image-to-probe transform, the in-plane pixel spacing and
the pin position can be jointly estimated by nonlinear least squares:

    r_t = probe_pose_t ( image_to_probe (s_x u_t, s_y v_t, 0) ) - pin

11 unknowns (6 transform + 2 spacing + 3 pin), 3 residuals per observation.
Solved with Levenberg-Marquardt on a rotation-vector parametrization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Calibration,
    GeometryError,
    RigidTransform,
    quat_angle_deg,
    quat_conjugate,
    quat_from_axis_angle,
    quat_multiply,
)


class ObservabilityError(GeometryError):
    """The observation geometry cannot constrain all calibration unknowns."""


class ConvergenceError(GeometryError):
    """The solver hit the iteration cap before converging."""

    def __init__(self, msg: str, residual_rms_mm: float):
        super().__init__(msg)
        self.residual_rms_mm = residual_rms_mm


@dataclass(frozen=True)
class PinheadObservation:
    """One tracked image of the fixed pin: probe pose + sub-pixel location."""

    probe_pose: RigidTransform
    pixel: tuple[float, float]


@dataclass
class CalibrationResult:
    calibration: Calibration
    pin_mm: np.ndarray
    residual_rms_mm: float
    iterations: int
    objective_history: list[float] = field(default_factory=list)


def _rotvec_to_quat(r: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(r))
    return quat_from_axis_angle(r, angle)


def _pack(calib: Calibration, pin: np.ndarray) -> np.ndarray:
    q = calib.image_to_probe.q
    w = np.clip(abs(float(q[0])), -1.0, 1.0)
    angle = 2.0 * np.arccos(w)
    v = q[1:] * np.sign(q[0]) if q[0] != 0 else q[1:]
    n = np.linalg.norm(v)
    rvec = (v / n) * angle if n > 1e-12 else np.zeros(3)
    return np.concatenate(
        [rvec, calib.image_to_probe.t, calib.spacing_mm, np.asarray(pin, dtype=np.float64)]
    )


def _unpack(theta: np.ndarray) -> tuple[Calibration, np.ndarray]:
    tf = RigidTransform(_rotvec_to_quat(theta[0:3]), theta[3:6])
    calib = Calibration(tf, np.abs(theta[6:8]))
    return calib, theta[8:11]


def _residuals(theta: np.ndarray, rot_mats: np.ndarray, trans: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Stacked 3N residual vector in mm."""
    from .geometry import quat_to_matrix

    r_img = quat_to_matrix(_rotvec_to_quat(theta[0:3]))
    t_img = theta[3:6]
    sx, sy = theta[6], theta[7]
    pin = theta[8:11]
    p_img = np.stack([sx * px[:, 0], sy * px[:, 1], np.zeros(len(px))], axis=1)  # (N,3)
    p_probe = p_img @ r_img.T + t_img
    p_world = np.einsum("nij,nj->ni", rot_mats, p_probe) + trans
    return (p_world - pin).ravel()


def _jacobian(theta: np.ndarray, rot_mats: np.ndarray, trans: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian; 11 columns, cheap and robust."""
    n = len(theta)
    r0 = _residuals(theta, rot_mats, trans, px)
    jac = np.empty((len(r0), n))
    for i in range(n):
        h = 1e-6 * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        jac[:, i] = (_residuals(tp, rot_mats, trans, px) - _residuals(tm, rot_mats, trans, px)) / (2 * h)
    return jac


def _orientation_diversity(poses: list[RigidTransform]) -> int:
    """Count of mutually distinct orientations (> 1 degree apart)."""
    reps: list[RigidTransform] = []
    for p in poses:
        if all(
            quat_angle_deg(quat_multiply(quat_conjugate(r.q), p.q)) > 1.0 for r in reps
        ):
            reps.append(p)
    return len(reps) + (0 if reps else 1)


def calibrate_pinhead(
    observations: list[PinheadObservation],
    init: Calibration,
    pin_guess: np.ndarray,
    max_iterations: int = 200,
    rel_tol: float = 1e-10,
) -> CalibrationResult:
    """Estimate calibration + pin position by damped Gauss-Newton (LM).

    Damping starts at 1e-3, multiplied by 10 on a rejected step and divided
    by 10 on an accepted one. Deterministic for fixed inputs. Raises
    ObservabilityError when the normal equations are rank deficient (e.g.
    all observations share one probe orientation) and ConvergenceError when
    the iteration cap is reached without meeting the relative tolerance.
    """
    if len(observations) < 8:
        raise GeometryError(f"need >= 8 observations, got {len(observations)}")
    poses = [o.probe_pose for o in observations]
    if _orientation_diversity(poses) < 3:
        raise ObservabilityError(
            "observations span fewer than 3 distinct probe orientations"
        )
    rot_mats = np.array([p.rotation_matrix for p in poses])
    trans = np.array([p.t for p in poses])
    px = np.array([o.pixel for o in observations], dtype=np.float64)

    theta = _pack(init, pin_guess)
    lam = 1e-3
    r = _residuals(theta, rot_mats, trans, px)
    obj = float(r @ r)
    history = [obj]
    n_res = len(r)
    converged = False
    iters = 0

    for iters in range(1, max_iterations + 1):
        jac = _jacobian(theta, rot_mats, trans, px)
        jtj = jac.T @ jac
        # scale-aware observability check on the undamped normal matrix
        sv = np.linalg.svd(jtj, compute_uv=False)
        if sv[-1] < 1e-10 * sv[0]:
            raise ObservabilityError(
                f"rank-deficient normal equations (condition {sv[0] / max(sv[-1], 1e-300):.3g})"
            )
        jtr = jac.T @ r
        accepted = False
        for _ in range(50):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = theta + step
            rc = _residuals(cand, rot_mats, trans, px)
            oc = float(rc @ rc)
            if oc <= obj:
                rel_dec = (obj - oc) / max(obj, 1e-300)
                theta, r = cand, rc
                obj = oc
                history.append(obj)
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                if rel_dec < rel_tol:
                    converged = True
                break
            lam *= 10.0
        if obj < 1e-24:
            converged = True
        if not accepted:
            # even huge damping finds no descent direction: local minimum
            converged = True
        if converged:
            break

    rms = float(np.sqrt(obj / n_res))
    if not converged:
        raise ConvergenceError(
            f"no convergence after {max_iterations} iterations (rms {rms:.4g} mm)", rms
        )
    calib, pin = _unpack(theta)
    return CalibrationResult(calib, pin.copy(), rms, iters, history)


def synthesize_pinhead_observations(
    calib: Calibration,
    pin_mm: np.ndarray,
    n: int,
    dims: tuple[int, int],
    noise_px: float = 0.0,
    seed: int = 0,
) -> list[PinheadObservation]:
    """Generate consistent tracked pin observations from known ground truth.

    Random sub-pixel locations and probe orientations are drawn; the probe
    translation is then solved so the imaged point coincides with the pin.
    Optional isotropic pixel noise perturbs the recorded (u, v).
    """
    rng = np.random.default_rng(seed)
    w, h = dims
    out = []
    for _ in range(n):
        u = rng.uniform(0.1 * w, 0.9 * w)
        v = rng.uniform(0.1 * h, 0.9 * h)
        axis = rng.normal(size=3)
        angle = rng.uniform(0.0, np.pi)
        q = quat_from_axis_angle(axis, angle)
        p_img = np.array([calib.spacing_mm[0] * u, calib.spacing_mm[1] * v, 0.0])
        p_probe = calib.image_to_probe.apply(p_img)
        from .geometry import quat_to_matrix

        t = np.asarray(pin_mm, dtype=np.float64) - quat_to_matrix(q) @ p_probe
        pose = RigidTransform(q, t)
        uo = u + rng.normal(scale=noise_px) if noise_px > 0 else u
        vo = v + rng.normal(scale=noise_px) if noise_px > 0 else v
        out.append(PinheadObservation(pose, (float(uo), float(vo))))
    return out


# ---------------------------------------------------------------------------
# observation CSV I/O
# ---------------------------------------------------------------------------

_OBS_COLS = ["obs_index", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "u", "v"]


def save_observations(path: str | Path, observations: list[PinheadObservation]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_OBS_COLS)
        for i, o in enumerate(observations):
            w.writerow([i, *o.probe_pose.q, *o.probe_pose.t, *o.pixel])


def load_observations(path: str | Path) -> list[PinheadObservation]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(_OBS_COLS) - set(reader.fieldnames or [])
        if missing:
            raise GeometryError(f"observation CSV {path} missing columns: {sorted(missing)}")
        for row in reader:
            pose = RigidTransform(
                np.array([float(row[c]) for c in ("qw", "qx", "qy", "qz")]),
                np.array([float(row[c]) for c in ("tx", "ty", "tz")]),
            )
            out.append(PinheadObservation(pose, (float(row["u"]), float(row["v"]))))
    return out
