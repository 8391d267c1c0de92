"""Experience-weighted action perturbation.

Memory entries are weighted by visual similarity with an RBF kernel,
the weighted mean and covariance of their actions estimate the local
success distribution, and the corrected action is

    a_f = clip(a_c + g * (mean - a_c) + sqrt(T) * z1 + z2)

with z1 drawn from N(0, noise_gain * (Q + ridge * I)) through a lower
triangular factor and z2 from N(0, isotropic_scale^2 * I). Draws come
from the counter-based stream in :mod:`sct.rng`, z1 dims 0-6 first, then
z2 dims 0-6, so a seed fully determines the output. An empty or
irrelevant bank (total weight below min_effective_weight) falls back to
the clipped input action: no noise is injected without evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LowConfidenceWeight, NumericError, ValidationError
from .memory import ACTION_DIM, DEFAULT_ACTION_BOUNDS, Action, MemoryEntry, VisualFeature
from .rng import standard_normals

_SYM_TOL = 1e-12


@dataclass(frozen=True)
class PerturbParams:
    """Kernel, gain and noise parameters of the perturbation sampler."""

    gamma: float = 5.0
    gravity_gain: float = 0.5
    noise_gain: float = 1.0
    temperature: float = 1.0
    isotropic_scale: float = 0.02
    ridge: float = 1e-6
    action_bounds: tuple[tuple[float, float], ...] = DEFAULT_ACTION_BOUNDS
    min_effective_weight: float = 1e-6

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.gravity_gain <= 1.0:
            raise ValidationError(f"gravity_gain must lie in [0, 1], got {self.gravity_gain}")
        if self.noise_gain < 0.0:
            raise ValidationError(f"noise_gain must be nonnegative, got {self.noise_gain}")
        if self.temperature < 0.0:
            raise ValidationError(f"temperature must be nonnegative, got {self.temperature}")
        if self.isotropic_scale < 0.0:
            raise ValidationError(
                f"isotropic_scale must be nonnegative, got {self.isotropic_scale}"
            )
        if not self.ridge > 0.0:
            raise ValidationError(f"ridge must be positive, got {self.ridge}")
        if not self.min_effective_weight > 0.0:
            raise ValidationError(
                f"min_effective_weight must be positive, got {self.min_effective_weight}"
            )
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.action_bounds)
        if len(bounds) != ACTION_DIM:
            raise ValidationError(f"action_bounds must have {ACTION_DIM} pairs")
        for i, (lo, hi) in enumerate(bounds):
            if not lo < hi:
                raise ValidationError(f"action_bounds[{i}]: low {lo} must be < high {hi}")
        object.__setattr__(self, "action_bounds", bounds)

    @property
    def lows(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.action_bounds])

    @property
    def highs(self) -> np.ndarray:
        return np.array([hi for _, hi in self.action_bounds])


@dataclass(frozen=True, eq=False)
class LocalMoments:
    """Weighted mean, weighted covariance and total weight of bank actions."""

    mean: np.ndarray
    covariance: np.ndarray
    total_weight: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if mean.shape != (ACTION_DIM,) or cov.shape != (ACTION_DIM, ACTION_DIM):
            raise ValidationError(
                f"moments must be ({ACTION_DIM},) and ({ACTION_DIM},{ACTION_DIM}), "
                f"got {mean.shape} and {cov.shape}"
            )
        if np.abs(cov - cov.T).max() > _SYM_TOL:
            raise ValidationError("covariance must be symmetric within 1e-12")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def rbf_weights_from_arrays(feature: np.ndarray, features: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * squared distance) per row of a stacked feature matrix."""
    if not gamma > 0.0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    if features.ndim != 2 or features.shape[1] != feature.shape[0]:
        raise ValidationError(
            f"feature dimension mismatch: query {feature.shape[0]}, bank {features.shape}"
        )
    diffs = features - feature[None, :]
    return np.exp(-gamma * np.einsum("ij,ij->i", diffs, diffs))


def rbf_weights(v_c: VisualFeature, bank: Sequence[MemoryEntry], gamma: float) -> np.ndarray:
    """Similarity weight in (0, 1] of each bank entry against the query feature."""
    if len(bank) == 0:
        return np.zeros(0)
    features = np.stack([e.feature.values for e in bank])
    return rbf_weights_from_arrays(v_c.values, features, gamma)


def moments_from_arrays(
    weights: np.ndarray, actions: np.ndarray, min_effective_weight: float = 0.0
) -> LocalMoments:
    """Weighted mean and covariance of stacked action rows.

    Raises LowConfidenceWeight when the total weight falls below
    min_effective_weight; callers fall back to the uncorrected action.
    """
    weights = np.asarray(weights, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or actions.shape[1] != ACTION_DIM:
        raise ValidationError(f"actions must be (n, {ACTION_DIM}), got {actions.shape}")
    if weights.shape != (actions.shape[0],):
        raise ValidationError(
            f"got {weights.shape[0] if weights.ndim == 1 else weights.shape} weights "
            f"for {actions.shape[0]} actions"
        )
    if actions.shape[0] == 0:
        raise ValidationError("moment estimation requires a nonempty bank")
    if np.any(weights < 0.0):
        raise ValidationError("weights must be nonnegative")
    total = float(weights.sum())
    if total < min_effective_weight or total <= 0.0:
        raise LowConfidenceWeight(
            f"total weight {total!r} below minimum {min_effective_weight!r}"
        )
    mean = weights @ actions / total
    centered = actions - mean
    cov = (centered.T * weights) @ centered / total
    cov = 0.5 * (cov + cov.T)
    return LocalMoments(mean=mean, covariance=cov, total_weight=total)


def local_moments(
    weights: np.ndarray, bank: Sequence[MemoryEntry], min_effective_weight: float = 0.0
) -> LocalMoments:
    """Weighted mean and covariance of the bank's actions."""
    actions = (
        np.stack([e.action.values for e in bank])
        if len(bank)
        else np.zeros((0, ACTION_DIM))
    )
    return moments_from_arrays(weights, actions, min_effective_weight)


def _regularized_cholesky(cov: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    q_reg = cov + ridge * np.eye(ACTION_DIM)
    try:
        chol = np.linalg.cholesky(q_reg)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"regularized covariance is not positive definite (ridge {ridge!r} "
            "too small for the data scale)"
        ) from exc
    return q_reg, chol


def regularize(cov: np.ndarray, ridge: float) -> np.ndarray:
    """cov + ridge * I, verified to admit a triangular square-root factor."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (ACTION_DIM, ACTION_DIM):
        raise ValidationError(f"covariance must be {ACTION_DIM}x{ACTION_DIM}, got {cov.shape}")
    if np.abs(cov - cov.T).max() > 1e-9:
        raise ValidationError("covariance must be symmetric")
    q_reg, _ = _regularized_cholesky(cov, ridge)
    return q_reg


def clip_action(values: np.ndarray, params: PerturbParams) -> np.ndarray:
    return np.clip(values, params.lows, params.highs)


def perturb_from_moments(
    action: Action,
    moments: LocalMoments,
    params: PerturbParams,
    rng_seed: int,
    clip_output: bool = True,
) -> Action:
    """Deterministic three-term perturbation given precomputed moments.

    clip_output=False skips the final clip (and bound validation); it
    exists so tests can measure the sampler's raw distribution.
    """
    a_c = action.values
    _, chol = _regularized_cholesky(moments.covariance, params.ridge)
    normals = standard_normals(rng_seed, 2 * ACTION_DIM)
    z1 = math.sqrt(params.noise_gain) * (chol @ normals[:ACTION_DIM])
    z2 = params.isotropic_scale * normals[ACTION_DIM:]
    # (1-g)*a_c + g*mean == a_c + g*(mean - a_c), but is exact at g in {0, 1}
    pulled = (1.0 - params.gravity_gain) * a_c + params.gravity_gain * moments.mean
    raw = pulled + math.sqrt(params.temperature) * z1 + z2
    if not clip_output:
        return Action(raw, bounds=((-math.inf, math.inf),) * ACTION_DIM)
    return Action(clip_action(raw, params), bounds=params.action_bounds)


class BankView:
    """Feature/action matrices stacked once for repeated queries.

    The control loop snapshots the memory bank per episode and perturbs
    many actions against it; stacking per call would dominate runtime.
    """

    def __init__(self, bank: Sequence[MemoryEntry]):
        self.size = len(bank)
        if self.size:
            self.features = np.stack([e.feature.values for e in bank])
            self.actions = np.stack([e.action.values for e in bank])
        else:
            self.features = np.zeros((0, 0))
            self.actions = np.zeros((0, ACTION_DIM))

    def perturb(
        self, action: Action, v_c: VisualFeature, params: PerturbParams, rng_seed: int
    ) -> Action:
        if self.size == 0:
            return Action(clip_action(action.values, params), bounds=params.action_bounds)
        # features are unit-norm, so |v - f|^2 = 2 - 2 f.v; one matvec
        # instead of materializing the difference matrix
        sq_dist = np.maximum(0.0, 2.0 - 2.0 * (self.features @ v_c.values))
        weights = np.exp(-params.gamma * sq_dist)
        try:
            moments = moments_from_arrays(weights, self.actions, params.min_effective_weight)
        except LowConfidenceWeight:
            return Action(clip_action(action.values, params), bounds=params.action_bounds)
        return perturb_from_moments(action, moments, params, rng_seed)


def perturb(
    action: Action,
    v_c: VisualFeature,
    bank: Sequence[MemoryEntry],
    params: PerturbParams,
    rng_seed: int,
) -> Action:
    """Correct an action toward the memory bank's local success distribution.

    Falls back to the clipped input when the bank is empty or no entry is
    visually relevant enough to trust.
    """
    if len(bank) == 0:
        return Action(clip_action(action.values, params), bounds=params.action_bounds)
    weights = rbf_weights(v_c, bank, params.gamma)
    try:
        moments = local_moments(weights, bank, params.min_effective_weight)
    except LowConfidenceWeight:
        return Action(clip_action(action.values, params), bounds=params.action_bounds)
    return perturb_from_moments(action, moments, params, rng_seed)
