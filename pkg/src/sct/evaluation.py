"""Trajectory quality scores and the composite gate decision.

Three scores, each in [0, 1]:

* efficiency   1 / (1 + w_k * integral of curvature + w_t * integral of |torsion|)
* stability    exp(-decay * accumulated geodesic rotation angle)
* smoothness   exp(-sensitivity * sum of (|jerk|^2 + w_rot |angular jerk|^2) dt)

The composite is their gate-weighted arithmetic mean; a window whose
composite falls below the gate threshold is flagged low quality, which is
what triggers action correction downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TrajectoryLengthError, ValidationError
from .geometry import (
    Trajectory,
    accumulated_rotation,
    angular_jerk,
    curvature_torsion,
    finite_differences,
    segment_lengths,
)

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class EvalParams:
    """Weights and thresholds for the three scores and the gate."""

    curvature_weight: float = 1.0
    torsion_weight: float = 1.0
    stability_decay: float = 1.0
    jerk_sensitivity: float = 0.1
    rotation_weight: float = 1.0
    gate_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    gate_threshold: float = 0.75

    def __post_init__(self):
        for name in (
            "curvature_weight",
            "torsion_weight",
            "stability_decay",
            "jerk_sensitivity",
            "rotation_weight",
        ):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0.0):
                raise ValidationError(f"{name} must be finite and nonnegative, got {value!r}")
        weights = tuple(float(w) for w in self.gate_weights)
        if len(weights) != 3:
            raise ValidationError("gate_weights must have exactly 3 entries")
        if any(w < 0.0 for w in weights):
            raise ValidationError(f"gate_weights must be nonnegative, got {weights}")
        if abs(sum(weights) - 1.0) > _SIMPLEX_TOL:
            raise ValidationError(f"gate_weights must sum to 1, got sum {sum(weights)!r}")
        if not (0.0 <= self.gate_threshold <= 1.0):
            raise ValidationError(f"gate_threshold must lie in [0, 1], got {self.gate_threshold}")
        object.__setattr__(self, "gate_weights", weights)


@dataclass(frozen=True)
class QualityReport:
    """Scores for one evaluated window plus the gate decision."""

    efficiency: float
    stability: float
    smoothness: float
    composite: float
    gate_low_quality: bool

    def to_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "stability": self.stability,
            "smoothness": self.smoothness,
            "composite": self.composite,
            "gate_low_quality": self.gate_low_quality,
        }


def efficiency_score(traj: Trajectory, params: EvalParams) -> float:
    """Score inversely proportional to total curvature plus total |torsion|.

    The integrals are Riemann sums of the per-sample values over chord
    lengths, so a straight line scores exactly 1.
    """
    kappa, torsion = curvature_torsion(finite_differences(traj))
    ds = segment_lengths(traj)
    total_curvature = float(np.sum(kappa[:-1] * ds))
    total_torsion = float(np.sum(np.abs(torsion[:-1]) * ds))
    return 1.0 / (
        1.0
        + params.curvature_weight * total_curvature
        + params.torsion_weight * total_torsion
    )


def stability_score(traj: Trajectory, params: EvalParams) -> float:
    """exp(-decay * accumulated geodesic angle) over consecutive orientations."""
    if len(traj) < 2:
        raise TrajectoryLengthError(
            f"stability score needs at least 2 poses, got {len(traj)}"
        )
    return math.exp(-params.stability_decay * accumulated_rotation(traj))


def smoothness_score(traj: Trajectory, params: EvalParams) -> float:
    """exp(-sensitivity * total squared jerk), translational plus rotational.

    The cost is sum_i |j_i|^2 dt over all position samples plus
    rotation_weight * sum_i |zeta_i|^2 dt over all angular-velocity samples.
    """
    derivs = finite_differences(traj)
    zeta = angular_jerk(traj)
    cost = float(np.sum(derivs.jerk**2) * traj.dt)
    cost += params.rotation_weight * float(np.sum(zeta**2) * traj.dt)
    return math.exp(-params.jerk_sensitivity * cost)


def evaluate(traj: Trajectory, params: EvalParams) -> QualityReport:
    """All three scores, their gate-weighted mean, and the gate decision."""
    eff = efficiency_score(traj, params)
    sta = stability_score(traj, params)
    smo = smoothness_score(traj, params)
    w = params.gate_weights
    composite = w[0] * eff + w[1] * sta + w[2] * smo
    return QualityReport(
        efficiency=eff,
        stability=sta,
        smoothness=smo,
        composite=composite,
        gate_low_quality=composite < params.gate_threshold,
    )
