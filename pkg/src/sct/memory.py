"""Episodic memory of successful experience.

Two bounded FIFO banks: (visual feature, action) pairs recorded during the
grasp phase of successful episodes, and terminal success images used for
termination matching. Persistence is a line-delimited JSON file with a
one-line header recording the dimensions.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import InitVar, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

ACTION_DIM = 7
DEFAULT_FEATURE_DIM = 256
DEFAULT_IMAGE_SHAPE = (64, 64)
DEFAULT_ENTRY_CAPACITY = 10_000
DEFAULT_IMAGE_CAPACITY = 500

DEFAULT_ACTION_BOUNDS = tuple((-1.0, 1.0) for _ in range(ACTION_DIM))

_FORMAT_VERSION = 1
_UNIT_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VisualFeature:
    """Fixed-length unit-norm feature vector; the all-zero vector is rejected.

    Inputs already unit within 1e-9 are kept bit-for-bit so persistence
    round trips exactly.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError(f"feature must be a nonempty 1-D vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature values must be finite")
        norm = float(np.linalg.norm(v))
        if norm < 1e-12:
            raise ValidationError("the all-zero feature vector is rejected")
        if abs(norm - 1.0) > _UNIT_TOL:
            v = v / norm
        else:
            v = v.copy()
        object.__setattr__(self, "values", _readonly(v))

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class Action:
    """7-vector control: 3 translation deltas, 3 rotation deltas, 1 gripper.

    Components must lie within the configured per-dimension bounds
    (default [-1, 1]).
    """

    values: np.ndarray
    bounds: InitVar = None

    def __post_init__(self, bounds):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (ACTION_DIM,):
            raise ValidationError(f"action must have shape ({ACTION_DIM},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("action components must be finite")
        bounds = DEFAULT_ACTION_BOUNDS if bounds is None else tuple(bounds)
        for i, (lo, hi) in enumerate(bounds):
            if not (lo <= v[i] <= hi):
                raise ValidationError(
                    f"action[{i}] = {v[i]!r} outside bounds [{lo}, {hi}]"
                )
        object.__setattr__(self, "values", _readonly(v.copy()))


@dataclass(frozen=True, eq=False)
class MemoryEntry:
    """One recorded state-action pair from a successful episode."""

    feature: VisualFeature
    action: Action
    episode_id: str
    step_index: int

    def __post_init__(self):
        if not isinstance(self.step_index, int) or self.step_index < 0:
            raise ValidationError(f"step_index must be a nonnegative int, got {self.step_index!r}")


@dataclass(frozen=True, eq=False)
class SuccessImage:
    """Grayscale terminal observation of a successful episode, values in [0, 1]."""

    pixels: np.ndarray
    episode_id: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError(f"pixels must be a 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValidationError("pixel intensities must be finite")
        if px.min() < -1e-9 or px.max() > 1.0 + 1e-9:
            raise ValidationError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _readonly(px.copy()))


class MemoryStore:
    """Bounded episodic store with single-writer / multi-reader semantics.

    record_success appends a batch atomically; snapshot returns an
    immutable view that never exposes a partially applied batch. When a
    bank exceeds its capacity the oldest records are evicted first.
    """

    def __init__(
        self,
        feature_dim: int = DEFAULT_FEATURE_DIM,
        image_shape: tuple[int, int] = DEFAULT_IMAGE_SHAPE,
        entry_capacity: int = DEFAULT_ENTRY_CAPACITY,
        image_capacity: int = DEFAULT_IMAGE_CAPACITY,
    ):
        if feature_dim <= 0 or entry_capacity <= 0 or image_capacity <= 0:
            raise ValidationError("dimensions and capacities must be positive")
        self.feature_dim = int(feature_dim)
        self.image_shape = (int(image_shape[0]), int(image_shape[1]))
        self.entry_capacity = int(entry_capacity)
        self.image_capacity = int(image_capacity)
        self._entries: deque[MemoryEntry] = deque(maxlen=self.entry_capacity)
        self._images: deque[SuccessImage] = deque(maxlen=self.image_capacity)
        self._lock = threading.Lock()

    @property
    def sizes(self) -> tuple[int, int]:
        with self._lock:
            return len(self._entries), len(self._images)

    def record_success(self, entries, terminal: SuccessImage) -> None:
        """Append a batch of entries plus the terminal image atomically."""
        entries = tuple(entries)
        if not entries:
            raise ValidationError("record_success requires at least one entry")
        for e in entries:
            if not isinstance(e, MemoryEntry):
                raise ValidationError(f"expected MemoryEntry, got {type(e).__name__}")
            if e.feature.dim != self.feature_dim:
                raise ValidationError(
                    f"feature length {e.feature.dim} does not match configured {self.feature_dim}"
                )
        if not isinstance(terminal, SuccessImage):
            raise ValidationError(f"expected SuccessImage, got {type(terminal).__name__}")
        if terminal.pixels.shape != self.image_shape:
            raise ValidationError(
                f"image shape {terminal.pixels.shape} does not match configured {self.image_shape}"
            )
        with self._lock:
            self._entries.extend(entries)
            self._images.append(terminal)

    def snapshot(self) -> tuple[tuple[MemoryEntry, ...], tuple[SuccessImage, ...]]:
        """Consistent point-in-time view: (entries, images) in insertion order."""
        with self._lock:
            return tuple(self._entries), tuple(self._images)

    def save(self, path) -> None:
        """Write the store to the line-delimited record format."""
        entries, images = self.snapshot()
        lines = [
            json.dumps(
                {
                    "kind": "header",
                    "version": _FORMAT_VERSION,
                    "feature_dim": self.feature_dim,
                    "action_dim": ACTION_DIM,
                    "image_shape": list(self.image_shape),
                },
                sort_keys=True,
            )
        ]
        for e in entries:
            lines.append(
                json.dumps(
                    {
                        "kind": "entry",
                        "episode_id": e.episode_id,
                        "step_index": e.step_index,
                        "feature": e.feature.values.tolist(),
                        "action": e.action.values.tolist(),
                    },
                    sort_keys=True,
                )
            )
        for img in images:
            lines.append(
                json.dumps(
                    {
                        "kind": "image",
                        "episode_id": img.episode_id,
                        "pixels": img.pixels.ravel().tolist(),
                    },
                    sort_keys=True,
                )
            )
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(
        cls,
        path,
        feature_dim: int = DEFAULT_FEATURE_DIM,
        image_shape: tuple[int, int] = DEFAULT_IMAGE_SHAPE,
        entry_capacity: int = DEFAULT_ENTRY_CAPACITY,
        image_capacity: int = DEFAULT_IMAGE_CAPACITY,
    ) -> "MemoryStore":
        """Read a store file; dimensions must match the configured ones."""
        store = cls(feature_dim, image_shape, entry_capacity, image_capacity)
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines:
            return store
        header_seen = False
        for lineno, raw in enumerate(lines, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(record, dict) or "kind" not in record:
                raise ParseError("record is not an object with a 'kind' field", lineno)
            kind = record["kind"]
            if not header_seen:
                if kind != "header":
                    raise ParseError(f"expected header record, got kind {kind!r}", lineno)
                header_seen = True
                header_dim = record.get("feature_dim")
                if header_dim != store.feature_dim:
                    raise ConfigError(
                        f"file feature length {header_dim} does not match configured "
                        f"{store.feature_dim}"
                    )
                if record.get("action_dim") != ACTION_DIM:
                    raise ConfigError(
                        f"file action length {record.get('action_dim')} does not match "
                        f"configured {ACTION_DIM}"
                    )
                header_shape = tuple(record.get("image_shape", ()))
                if header_shape != store.image_shape:
                    raise ConfigError(
                        f"file image resolution {header_shape} does not match configured "
                        f"{store.image_shape}"
                    )
                continue
            try:
                if kind == "entry":
                    feature = np.asarray(record["feature"], dtype=float)
                    if feature.shape != (store.feature_dim,):
                        raise ParseError(
                            f"entry feature length {feature.size} != header {store.feature_dim}",
                            lineno,
                        )
                    entry = MemoryEntry(
                        feature=VisualFeature(feature),
                        action=Action(np.asarray(record["action"], dtype=float)),
                        episode_id=str(record["episode_id"]),
                        step_index=int(record["step_index"]),
                    )
                    store._entries.append(entry)
                elif kind == "image":
                    pixels = np.asarray(record["pixels"], dtype=float)
                    expected = store.image_shape[0] * store.image_shape[1]
                    if pixels.size != expected:
                        raise ParseError(
                            f"image pixel count {pixels.size} != header {expected}", lineno
                        )
                    store._images.append(
                        SuccessImage(
                            pixels=pixels.reshape(store.image_shape),
                            episode_id=str(record["episode_id"]),
                        )
                    )
                else:
                    raise ParseError(f"unknown record kind {kind!r}", lineno)
            except ParseError:
                raise
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ParseError(f"invalid {kind} record ({exc})", lineno) from exc
        return store
