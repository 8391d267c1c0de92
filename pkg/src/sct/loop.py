"""Evaluate-correct-terminate feedback loop around a policy and environment.

Each step the policy proposes an action from the current observation and
proprioceptive pose. Once the rolling pose window is full it is scored
every half window; while the latest window is gated low quality and
correction is enabled, proposals are replaced by the experience-weighted
perturbation. After executing, the new observation is matched against the
success-image repository and a stop signal ends the episode. Successful
episodes feed their grasp-phase actions and terminal view back into the
memory store, which is what makes the correction loop self-improving.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError
from .evaluation import EvalParams, QualityReport, evaluate
from .geometry import Pose, Trajectory
from .memory import ACTION_DIM, Action, MemoryEntry, MemoryStore, SuccessImage, VisualFeature
from .perturbation import BankView, PerturbParams, clip_action
from .rng import derive_seed
from .termination import SuccessImageIndex, TermDecision, TermParams, preprocess

OUTCOME_SUCCESS = "success"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_ENV_FAILURE = "env_failure"
OUTCOME_STOPPED_EARLY = "stopped_early_incorrect"

_TRACE_SCHEMA = "sct-trace-v1"


class Policy(Protocol):
    """Action proposer abstracting the underlying manipulation model."""

    def propose(self, observation: np.ndarray, pose: Pose) -> Action: ...


@dataclass(frozen=True)
class StepResult:
    """Environment response to one executed action.

    success is the environment's official (settled) task-completion
    signal; goal_reached is the instantaneous goal predicate used to
    grade early stops issued by the termination detector.
    """

    observation: np.ndarray
    pose: Pose
    success: bool
    goal_reached: bool
    grasp_phase: bool


class Environment(Protocol):
    def reset(self) -> tuple[np.ndarray, Pose]: ...

    def step(self, action: Action) -> StepResult: ...


@dataclass(frozen=True)
class LoopConfig:
    """Loop cadence, ablation toggles and the embedded module parameters."""

    eval_window: int = 20
    max_steps: int = 200
    dt: float = 0.1
    correction_enabled: bool = True
    termination_enabled: bool = True
    feature_side: int = 16
    evaluation: EvalParams = field(default_factory=EvalParams)
    perturbation: PerturbParams = field(default_factory=PerturbParams)
    termination: TermParams = field(default_factory=TermParams)

    def __post_init__(self):
        if self.eval_window < 5:
            raise ValidationError(f"eval_window must be at least 5, got {self.eval_window}")
        if self.max_steps < 1:
            raise ValidationError(f"max_steps must be positive, got {self.max_steps}")
        if self.eval_window > self.max_steps:
            raise ValidationError(
                f"eval_window {self.eval_window} must not exceed max_steps {self.max_steps}"
            )
        if not self.dt > 0.0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.feature_side < 2:
            raise ValidationError(f"feature_side must be at least 2, got {self.feature_side}")

    @property
    def feature_dim(self) -> int:
        return self.feature_side * self.feature_side


@dataclass(frozen=True, eq=False)
class StepRecord:
    step: int
    pose: Pose
    observation_digest: str
    proposed: np.ndarray
    executed: np.ndarray
    quality: QualityReport | None
    termination: TermDecision | None


@dataclass(eq=False)
class EpisodeTrace:
    """Per-step records of one episode plus its outcome."""

    episode_id: str
    seed: int
    dt: float
    steps: list[StepRecord] = field(default_factory=list)
    outcome: str = OUTCOME_TIMEOUT

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "kind": "episode",
                    "schema": _TRACE_SCHEMA,
                    "episode_id": self.episode_id,
                    "seed": self.seed,
                    "dt": self.dt,
                },
                sort_keys=True,
            )
        ]
        for rec in self.steps:
            lines.append(
                json.dumps(
                    {
                        "kind": "step",
                        "step": rec.step,
                        "pose": rec.pose.position.tolist() + rec.pose.orientation.tolist(),
                        "obs_digest": rec.observation_digest,
                        "proposed": rec.proposed.tolist(),
                        "executed": rec.executed.tolist(),
                        "quality": rec.quality.to_dict() if rec.quality else None,
                        "termination": rec.termination.to_dict() if rec.termination else None,
                    },
                    sort_keys=True,
                )
            )
        lines.append(
            json.dumps(
                {"kind": "outcome", "outcome": self.outcome, "steps": len(self.steps)},
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"


def observation_digest(observation: np.ndarray) -> str:
    """Short stable digest of an observation's bytes for trace records."""
    arr = np.ascontiguousarray(np.asarray(observation, dtype=float))
    return hashlib.blake2b(arr.tobytes(), digest_size=8).hexdigest()


def featurize(observation, side: int = 16) -> VisualFeature:
    """Mean-centered, unit-norm grayscale downsample of an observation.

    An all-constant image carries no usable signal and maps to the
    reserved first basis vector.
    """
    vec = preprocess(observation, (side, side))
    centered = vec - vec.mean()
    norm = float(np.linalg.norm(centered))
    if norm < 1e-12:
        sentinel = np.zeros(vec.size)
        sentinel[0] = 1.0
        return VisualFeature(sentinel)
    return VisualFeature(centered / norm)


class EnvironmentFault(RuntimeError):
    """Wraps an exception raised by the environment or policy."""


def _call_env(fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise EnvironmentFault(str(exc)) from exc


def run_episode(
    policy: Policy,
    env: Environment,
    store: MemoryStore,
    config: LoopConfig,
    seed: int,
    episode_index: int = 0,
    episode_id: str | None = None,
    record_to_store: bool = True,
) -> EpisodeTrace:
    """Run one episode of the feedback loop; deterministic given the seed.

    Per-step perturbation seeds derive from (seed, episode_index, step).
    The memory bank and image repository are snapshotted once at episode
    start; successful episodes append to the store afterwards unless
    record_to_store is off (read-only replay).
    """
    if episode_id is None:
        episode_id = f"ep{episode_index}-{seed}"
    trace = EpisodeTrace(episode_id=episode_id, seed=seed, dt=config.dt)

    entries_snapshot, images_snapshot = store.snapshot()
    bank = BankView(entries_snapshot)
    matcher = SuccessImageIndex(images_snapshot, config.termination)

    cadence = max(1, math.ceil(config.eval_window / 2))
    window: list[Pose] = []
    latest_report: QualityReport | None = None
    grasp_entries: list[MemoryEntry] = []
    final_observation = None
    outcome = OUTCOME_TIMEOUT

    try:
        observation, pose = _call_env(env.reset)
    except EnvironmentFault:
        trace.outcome = OUTCOME_ENV_FAILURE
        return trace

    for step in range(1, config.max_steps + 1):
        try:
            proposed = _call_env(policy.propose, observation, pose)
        except EnvironmentFault:
            outcome = OUTCOME_ENV_FAILURE
            break

        window.append(pose)
        if len(window) > config.eval_window:
            window.pop(0)

        quality = None
        if len(window) >= config.eval_window and (step - config.eval_window) % cadence == 0:
            quality = evaluate(Trajectory(tuple(window), config.dt), config.evaluation)
            latest_report = quality

        feature = None
        executed_values = clip_action(proposed.values, config.perturbation)
        if config.correction_enabled and latest_report is not None and latest_report.gate_low_quality:
            feature = featurize(observation, config.feature_side)
            corrected = bank.perturb(
                Action(executed_values, bounds=config.perturbation.action_bounds),
                feature,
                config.perturbation,
                derive_seed(seed, episode_index, step),
            )
            executed_values = corrected.values

        try:
            result = _call_env(
                env.step, Action(executed_values, bounds=config.perturbation.action_bounds)
            )
        except EnvironmentFault:
            outcome = OUTCOME_ENV_FAILURE
            break

        decision = None
        if config.termination_enabled and not result.success:
            decision = matcher.decide(result.observation)

        trace.steps.append(
            StepRecord(
                step=step,
                pose=pose,
                observation_digest=observation_digest(observation),
                proposed=proposed.values,
                executed=executed_values,
                quality=quality,
                termination=decision,
            )
        )

        if result.grasp_phase:
            if feature is None:
                feature = featurize(observation, config.feature_side)
            grasp_entries.append(
                MemoryEntry(
                    feature=feature,
                    action=Action(executed_values, bounds=config.perturbation.action_bounds),
                    episode_id=episode_id,
                    step_index=step,
                )
            )

        if result.success:
            outcome = OUTCOME_SUCCESS
            final_observation = result.observation
            break
        if decision is not None and decision.stop:
            outcome = OUTCOME_SUCCESS if result.goal_reached else OUTCOME_STOPPED_EARLY
            final_observation = result.observation
            break

        observation, pose = result.observation, result.pose

    trace.outcome = outcome
    if (
        outcome == OUTCOME_SUCCESS
        and record_to_store
        and grasp_entries
        and final_observation is not None
    ):
        pixels = preprocess(final_observation, config.termination.resolution).reshape(
            config.termination.resolution[1], config.termination.resolution[0]
        )
        store.record_success(grasp_entries, SuccessImage(pixels=pixels, episode_id=episode_id))
    return trace


def config_fingerprint(config: LoopConfig) -> str:
    """Short stable hash of every effective loop parameter."""
    payload = {
        "eval_window": config.eval_window,
        "max_steps": config.max_steps,
        "dt": config.dt,
        "correction_enabled": config.correction_enabled,
        "termination_enabled": config.termination_enabled,
        "feature_side": config.feature_side,
        "evaluation": {
            "curvature_weight": config.evaluation.curvature_weight,
            "torsion_weight": config.evaluation.torsion_weight,
            "stability_decay": config.evaluation.stability_decay,
            "jerk_sensitivity": config.evaluation.jerk_sensitivity,
            "rotation_weight": config.evaluation.rotation_weight,
            "gate_weights": list(config.evaluation.gate_weights),
            "gate_threshold": config.evaluation.gate_threshold,
        },
        "perturbation": {
            "gamma": config.perturbation.gamma,
            "gravity_gain": config.perturbation.gravity_gain,
            "noise_gain": config.perturbation.noise_gain,
            "temperature": config.perturbation.temperature,
            "isotropic_scale": config.perturbation.isotropic_scale,
            "ridge": config.perturbation.ridge,
            "action_bounds": [list(b) for b in config.perturbation.action_bounds],
            "min_effective_weight": config.perturbation.min_effective_weight,
        },
        "termination": {
            "match_threshold": config.termination.match_threshold,
            "resolution": list(config.termination.resolution),
        },
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=6).hexdigest()


@dataclass
class TaskStats:
    """Aggregated outcomes of one task's episodes within a campaign."""

    task: str
    episodes: int = 0
    successes: int = 0
    timeouts: int = 0
    env_failures: int = 0
    stopped_early: int = 0
    steps_to_success: list[int] = field(default_factory=list)
    windows_evaluated: int = 0
    windows_gated: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    @property
    def timeout_rate(self) -> float:
        return self.timeouts / self.episodes if self.episodes else 0.0

    @property
    def mean_steps(self) -> float:
        if not self.steps_to_success:
            return float("nan")
        return sum(self.steps_to_success) / len(self.steps_to_success)

    @property
    def activation_rate(self) -> float:
        return self.windows_gated / self.windows_evaluated if self.windows_evaluated else 0.0


@dataclass
class CampaignReport:
    """Per-task statistics plus the fingerprint of the configuration used."""

    config_hash: str
    tasks: list[TaskStats]

    CSV_SCHEMA = "sct-campaign-v1"

    def to_csv(self) -> str:
        lines = [
            f"# schema: {self.CSV_SCHEMA}",
            "task,config_hash,episodes,success_rate,timeout_rate,mean_steps,activation_rate",
        ]
        for t in self.tasks:
            lines.append(
                f"{t.task},{self.config_hash},{t.episodes},{t.success_rate:.4f},"
                f"{t.timeout_rate:.4f},{t.mean_steps:.4f},{t.activation_rate:.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_summary(self) -> dict:
        episodes = sum(t.episodes for t in self.tasks)
        successes = sum(t.successes for t in self.tasks)
        timeouts = sum(t.timeouts for t in self.tasks)
        evaluated = sum(t.windows_evaluated for t in self.tasks)
        gated = sum(t.windows_gated for t in self.tasks)
        return {
            "config_hash": self.config_hash,
            "episodes": episodes,
            "success_rate": round(successes / episodes, 4) if episodes else 0.0,
            "timeout_rate": round(timeouts / episodes, 4) if episodes else 0.0,
            "activation_rate": round(gated / evaluated, 4) if evaluated else 0.0,
            "env_failures": sum(t.env_failures for t in self.tasks),
            "tasks": {
                t.task: {
                    "episodes": t.episodes,
                    "success_rate": round(t.success_rate, 4),
                    "timeout_rate": round(t.timeout_rate, 4),
                    "mean_steps": None if not t.steps_to_success else round(t.mean_steps, 4),
                    "activation_rate": round(t.activation_rate, 4),
                }
                for t in self.tasks
            },
        }


def _tally(stats: TaskStats, trace: EpisodeTrace) -> None:
    stats.episodes += 1
    if trace.outcome == OUTCOME_SUCCESS:
        stats.successes += 1
        stats.steps_to_success.append(len(trace.steps))
    elif trace.outcome == OUTCOME_TIMEOUT:
        stats.timeouts += 1
    elif trace.outcome == OUTCOME_ENV_FAILURE:
        stats.env_failures += 1
    elif trace.outcome == OUTCOME_STOPPED_EARLY:
        stats.stopped_early += 1
    for rec in trace.steps:
        if rec.quality is not None:
            stats.windows_evaluated += 1
            if rec.quality.gate_low_quality:
                stats.windows_gated += 1


_WORKER_STATE: dict = {}


def _parallel_init(config: LoopConfig, entries, images, image_shape):
    store = MemoryStore(
        feature_dim=config.feature_dim,
        image_shape=image_shape,
        entry_capacity=max(1, len(entries)),
        image_capacity=max(1, len(images)),
    )
    if entries or images:
        # rebuild the frozen snapshot inside the worker
        store._entries.extend(entries)
        store._images.extend(images)
    _WORKER_STATE["config"] = config
    _WORKER_STATE["store"] = store


def _parallel_episode(payload):
    from .sim import SimEnvironment, make_task

    task_id, seed, episode_index = payload
    world, policy = make_task(task_id, seed)
    trace = run_episode(
        policy,
        SimEnvironment(world),
        _WORKER_STATE["store"],
        _WORKER_STATE["config"],
        seed=seed,
        episode_index=episode_index,
        episode_id=f"{task_id}:{seed}",
        record_to_store=False,
    )
    return trace


def run_campaign(
    tasks: Sequence[str],
    config: LoopConfig,
    n_episodes: int,
    base_seed: int,
    store: MemoryStore | None = None,
    freeze_store: bool = False,
    keep_traces: bool = False,
    parallel: int = 1,
) -> tuple[CampaignReport, list[EpisodeTrace]]:
    """Run seeded episodes for every task against a shared memory store.

    Episode seeds are base_seed + i for i in range(n_episodes), identical
    across tasks and across configurations so that sweeps and ablations
    compare like against like. The store stays warm across episodes
    within the campaign; freeze_store switches to read-only replay, the
    only mode in which parallel > 1 is allowed (warm-memory semantics are
    order dependent).
    """
    from .sim import SimEnvironment, make_task

    if n_episodes < 1:
        raise ValidationError(f"n_episodes must be at least 1, got {n_episodes}")
    if parallel < 1:
        raise ValidationError(f"parallel must be at least 1, got {parallel}")
    if parallel > 1 and not freeze_store:
        raise ValidationError("parallel campaigns require a frozen (read-only) memory store")
    if store is None:
        store = MemoryStore(
            feature_dim=config.feature_dim,
            image_shape=(config.termination.resolution[1], config.termination.resolution[0]),
        )
    if store.feature_dim != config.feature_dim:
        raise ValidationError(
            f"store feature length {store.feature_dim} does not match the configured "
            f"featurizer ({config.feature_dim})"
        )

    report = CampaignReport(config_hash=config_fingerprint(config), tasks=[])
    traces: list[EpisodeTrace] = []

    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        entries, images = store.snapshot()
        payloads = [
            (task_id, base_seed + i, task_idx * n_episodes + i)
            for task_idx, task_id in enumerate(tasks)
            for i in range(n_episodes)
        ]
        with ProcessPoolExecutor(
            max_workers=parallel,
            initializer=_parallel_init,
            initargs=(config, entries, images, store.image_shape),
        ) as pool:
            results = list(pool.map(_parallel_episode, payloads))
        for task_idx, task_id in enumerate(tasks):
            stats = TaskStats(task=task_id)
            for i in range(n_episodes):
                trace = results[task_idx * n_episodes + i]
                _tally(stats, trace)
                if keep_traces:
                    traces.append(trace)
            report.tasks.append(stats)
        return report, traces

    for task_idx, task_id in enumerate(tasks):
        stats = TaskStats(task=task_id)
        for i in range(n_episodes):
            seed = base_seed + i
            world, policy = make_task(task_id, seed)
            trace = run_episode(
                policy,
                SimEnvironment(world),
                store,
                config,
                seed=seed,
                episode_index=task_idx * n_episodes + i,
                episode_id=f"{task_id}:{seed}",
                record_to_store=not freeze_store,
            )
            _tally(stats, trace)
            if keep_traces:
                traces.append(trace)
        report.tasks.append(stats)
    return report, traces
