"""Discrete differential geometry on sampled end-effector trajectories.

Positions are differentiated with central differences (second-order
one-sided stencils at the boundaries), orientations through the unit
quaternion logarithm. Curvature and torsion follow the classical
velocity/acceleration/jerk formulas with degenerate samples defined to
zero, so every output is finite for finite input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TrajectoryLengthError, ValidationError

# Speeds and cross-product norms below this are treated as degenerate and
# the affected curvature/torsion samples are defined to be zero.
DEGENERACY_EPS = 1e-9

_QUAT_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """End-effector position (m) plus unit orientation quaternion (w, x, y, z).

    The quaternion is renormalized on construction; a zero or non-finite
    quaternion is rejected.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if p.shape != (3,):
            raise ValidationError(f"position must be a 3-vector, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValidationError("position components must be finite")
        q = np.asarray(self.orientation, dtype=float)
        if q.shape != (4,):
            raise ValidationError(f"orientation must be a 4-vector, got shape {q.shape}")
        norm = float(np.linalg.norm(q))
        if not math.isfinite(norm) or norm < 1e-12:
            raise ValidationError("orientation quaternion must be nonzero and finite")
        object.__setattr__(self, "position", _readonly(p.copy()))
        object.__setattr__(self, "orientation", _readonly(q / norm))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled pose sequence with sampling interval dt (s)."""

    poses: tuple[Pose, ...]
    dt: float

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 1:
            raise ValidationError("trajectory must contain at least one pose")
        if not (self.dt > 0.0):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        """Positions stacked as an (N, 3) array."""
        return np.stack([p.position for p in self.poses])

    @property
    def quaternions(self) -> np.ndarray:
        """Orientations stacked as an (N, 4) array, (w, x, y, z) rows."""
        return np.stack([p.orientation for p in self.poses])


@dataclass(frozen=True, eq=False)
class CurveDerivatives:
    """Per-sample velocity (m/s), acceleration (m/s^2) and jerk (m/s^3)."""

    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray


def finite_differences(traj: Trajectory) -> CurveDerivatives:
    """Differentiate positions three times by successive central differences.

    Boundary samples use one-sided stencils of the same (second) order, so
    all three arrays keep the trajectory's sample count. Jerk values within
    three samples of either end carry boundary contamination; tests and
    scores that need clean values should use the interior.
    """
    if len(traj) < 5:
        raise TrajectoryLengthError(
            f"finite differences need at least 5 poses, got {len(traj)}"
        )
    p = traj.positions
    v = np.gradient(p, traj.dt, axis=0, edge_order=2)
    a = np.gradient(v, traj.dt, axis=0, edge_order=2)
    j = np.gradient(a, traj.dt, axis=0, edge_order=2)
    return CurveDerivatives(v, a, j)


def curvature_torsion(derivs: CurveDerivatives) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample curvature (1/m) and torsion (1/m).

    curvature = |v x a| / |v|^3 and torsion = ((v x a) . j) / |v x a|^2.
    Samples whose speed (for curvature) or |v x a| (for torsion) falls
    below DEGENERACY_EPS are defined to be 0: a stationary or straight
    segment bends maximally little, it is not singular.
    """
    v, a, j = derivs.velocity, derivs.acceleration, derivs.jerk
    cross = np.cross(v, a)
    speed = np.linalg.norm(v, axis=1)
    cross_norm = np.linalg.norm(cross, axis=1)

    kappa = np.zeros_like(speed)
    ok = speed >= DEGENERACY_EPS
    np.divide(cross_norm, speed**3, out=kappa, where=ok)

    torsion = np.zeros_like(speed)
    ok = cross_norm >= DEGENERACY_EPS
    np.divide(
        np.einsum("ij,ij->i", cross, j), cross_norm**2, out=torsion, where=ok
    )
    return kappa, torsion


def segment_lengths(traj: Trajectory) -> np.ndarray:
    """Chord lengths |p_{i+1} - p_i|, shape (N-1,)."""
    return np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)


def arc_length(traj: Trajectory) -> float:
    """Total polyline length of the position sequence."""
    return float(segment_lengths(traj).sum())


def _unit_quaternion(q, tol: float = _QUAT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValidationError(f"quaternion must have shape (4,), got {q.shape}")
    norm = float(np.linalg.norm(q))
    if not math.isfinite(norm) or abs(norm - 1.0) > tol:
        raise ValidationError(f"quaternion norm {norm!r} is not 1 within {tol}")
    return q / norm


def quaternion_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b for (w, x, y, z) quaternions."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quaternion_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quaternion_from_rotation_vector(rotvec) -> np.ndarray:
    """Unit quaternion for a rotation of |rotvec| radians about rotvec."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-12:
        # first-order small-angle quaternion, renormalized
        q = np.array([1.0, 0.5 * rotvec[0], 0.5 * rotvec[1], 0.5 * rotvec[2]])
        return q / np.linalg.norm(q)
    axis = rotvec / angle
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quaternion_log_vector(q) -> np.ndarray:
    """Vector part of log(q) for a unit quaternion with w >= 0."""
    w = float(q[0])
    vec = np.asarray(q[1:4], dtype=float)
    s = float(np.linalg.norm(vec))
    if s < 1e-12:
        # atan2(s, w)/s -> 1/w and w -> 1 as s -> 0
        return vec.copy()
    return vec * (math.atan2(s, w) / s)


def geodesic_angle(q_prev, q_curr) -> float:
    """Minimal rotation angle (rad) between two unit-quaternion orientations.

    Computed via rotation matrices as arccos((Tr(R_t R_{t-1}^T) - 1) / 2)
    with the argument clamped to [-1, 1], so it is insensitive to the
    quaternion double cover. Result lies in [0, pi].
    """
    ra = quaternion_to_matrix(_unit_quaternion(q_prev))
    rb = quaternion_to_matrix(_unit_quaternion(q_curr))
    trace = float(np.trace(rb @ ra.T))
    return float(math.acos(min(1.0, max(-1.0, (trace - 1.0) / 2.0))))


def accumulated_rotation(traj: Trajectory) -> float:
    """Sum of geodesic angles over consecutive pose pairs (rad).

    Uses Tr(R_b R_a^T) = 4 (q_a . q_b)^2 - 1 for unit quaternions, which
    makes the per-pair angle arccos(2 (q_a . q_b)^2 - 1), identical to the
    rotation-matrix route in geodesic_angle but vectorized.
    """
    if len(traj) < 2:
        raise TrajectoryLengthError(
            f"accumulated rotation needs at least 2 poses, got {len(traj)}"
        )
    q = traj.quaternions
    dots = np.einsum("ij,ij->i", q[:-1], q[1:])
    return float(np.sum(np.arccos(np.clip(2.0 * dots * dots - 1.0, -1.0, 1.0))))


def _hemisphere_aligned(quats: np.ndarray) -> np.ndarray:
    """Flip signs so consecutive quaternion dot products are nonnegative."""
    dots = np.einsum("ij,ij->i", quats[:-1], quats[1:])
    signs = np.concatenate(([1.0], np.cumprod(np.where(dots < 0.0, -1.0, 1.0))))
    return quats * signs[:, None]


def body_angular_velocities(traj: Trajectory) -> np.ndarray:
    """Body-frame angular velocity (rad/s) per consecutive pair, shape (N-1, 3).

    omega_i = 2 vec(log(q_i^-1 * q_{i+1})) / dt after hemisphere alignment,
    so the double cover cannot inject spurious pi-jumps.
    """
    q = _hemisphere_aligned(traj.quaternions)
    omega = np.empty((len(q) - 1, 3))
    for i in range(len(q) - 1):
        rel = quaternion_multiply(quaternion_conjugate(q[i]), q[i + 1])
        if rel[0] < 0.0:
            rel = -rel
        omega[i] = 2.0 * quaternion_log_vector(rel) / traj.dt
    return omega


def angular_jerk(traj: Trajectory) -> np.ndarray:
    """Second time-derivative of body angular velocity (rad/s^3), shape (N-1, 3).

    Interior samples use the central second difference of omega over dt^2;
    the two boundary samples use the matching second-order one-sided
    four-point stencils.
    """
    if len(traj) < 5:
        raise TrajectoryLengthError(
            f"angular jerk needs at least 5 poses, got {len(traj)}"
        )
    omega = body_angular_velocities(traj)
    dt2 = traj.dt * traj.dt
    zeta = np.empty_like(omega)
    zeta[1:-1] = (omega[2:] - 2.0 * omega[1:-1] + omega[:-2]) / dt2
    zeta[0] = (2.0 * omega[0] - 5.0 * omega[1] + 4.0 * omega[2] - omega[3]) / dt2
    zeta[-1] = (2.0 * omega[-1] - 5.0 * omega[-2] + 4.0 * omega[-3] - omega[-4]) / dt2
    return zeta
