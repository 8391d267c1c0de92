"""Non-parametric task-completion detection.

The current camera view is preprocessed to a fixed grayscale canvas and
compared against every stored success image with the Pearson correlation
r, mapped to a similarity S = (r + 1) / 2 in [0, 1]. A stop signal is
issued when the best match reaches the termination threshold. Pearson is
invariant to positive affine intensity changes, which is what makes the
match robust to brightness and contrast drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .memory import SuccessImage

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class TermParams:
    """Stop threshold and the (width, height) of the comparison canvas."""

    match_threshold: float = 0.95
    resolution: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ValidationError(
                f"match_threshold must lie in [0, 1], got {self.match_threshold}"
            )
        res = (int(self.resolution[0]), int(self.resolution[1]))
        if res[0] <= 0 or res[1] <= 0:
            raise ValidationError(f"resolution must be positive, got {res}")
        object.__setattr__(self, "resolution", res)


@dataclass(frozen=True)
class TermDecision:
    """Best similarity against the repository and the resulting stop signal."""

    s_max: float
    best_match: int | None
    stop: bool

    def to_dict(self) -> dict:
        return {"s_max": self.s_max, "best_match": self.best_match, "stop": self.stop}


@lru_cache(maxsize=32)
def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging n_in cells into n_out equal intervals."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    m = np.zeros((n_out, n_in))
    for r in range(n_out):
        lo, hi = edges[r], edges[r + 1]
        first = int(np.floor(lo))
        last = min(int(np.ceil(hi)), n_in)
        for i in range(first, last):
            m[r, i] = min(hi, i + 1.0) - max(lo, float(i))
        m[r] /= hi - lo
    m.setflags(write=False)
    return m


def resize_area(image: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Resample a 2-D image to (height, width) by exact area averaging."""
    width, height = resolution
    rows = _overlap_matrix(image.shape[0], height)
    cols = _overlap_matrix(image.shape[1], width)
    return rows @ image @ cols.T


def preprocess(image, resolution: tuple[int, int] = (64, 64)) -> np.ndarray:
    """Grayscale, resize by area averaging, flatten row-major.

    Accepts a 2-D grayscale array or an (H, W, 3) RGB array; integer
    dtypes are rescaled from [0, 255] to [0, 1]. RGB is converted with
    the 0.299 / 0.587 / 0.114 luma weights.
    """
    img = np.asarray(image)
    if img.size == 0:
        raise ValidationError("image must be nonempty")
    if np.issubdtype(img.dtype, np.integer):
        img = img.astype(float) / 255.0
    else:
        img = img.astype(float)
    if img.ndim == 3 and img.shape[2] == 3:
        img = img @ _LUMA
    elif img.ndim != 2:
        raise ValidationError(f"expected HxW or HxWx3 image, got shape {img.shape}")
    return resize_area(img, resolution).ravel()


def pearson_similarity(x, y) -> float:
    """S = (r + 1) / 2 for the Pearson correlation r of two equal-length vectors.

    Population statistics; r clamped to [-1, 1] against float drift.
    Zero-variance convention: both vectors constant and equal gives 1,
    any other constant case gives 0.5, so a blank camera neither forces
    nor forbids termination.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValidationError(f"vectors must be 1-D with equal length, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValidationError(f"vectors must have at least 2 elements, got {x.size}")
    x_const = x.max() == x.min()
    y_const = y.max() == y.min()
    if x_const and y_const:
        return 1.0 if x[0] == y[0] else 0.5
    if x_const or y_const:
        return 0.5
    if np.array_equal(x, y):
        return 1.0
    cx = x - x.mean()
    cy = y - y.mean()
    r = float(cx @ cy / np.sqrt((cx @ cx) * (cy @ cy)))
    r = min(1.0, max(-1.0, r))
    return 0.5 * (r + 1.0)


class SuccessImageIndex:
    """Standardized repository rows for fast repeated matching.

    Building the index once per repository snapshot turns each decision
    into a single matrix-vector product.
    """

    def __init__(self, repository: Sequence[SuccessImage], params: TermParams):
        self.params = params
        self.size = len(repository)
        pixel_count = params.resolution[0] * params.resolution[1]
        rows = np.zeros((self.size, pixel_count))
        raw = np.zeros((self.size, pixel_count))
        self._const = np.zeros(self.size, dtype=bool)
        self._const_value = np.zeros(self.size)
        for i, img in enumerate(repository):
            flat = img.pixels.ravel()
            if flat.size != pixel_count:
                raise ValidationError(
                    f"stored image {i} has {flat.size} pixels, expected {pixel_count} "
                    f"for resolution {params.resolution}"
                )
            raw[i] = flat
            if flat.max() == flat.min():
                self._const[i] = True
                self._const_value[i] = flat[0]
            else:
                centered = flat - flat.mean()
                rows[i] = centered / np.linalg.norm(centered)
        self._rows = rows
        self._raw = raw

    def decide(self, current) -> TermDecision:
        if self.size == 0:
            return TermDecision(s_max=0.0, best_match=None, stop=False)
        x = preprocess(current, self.params.resolution)
        if x.max() == x.min():
            scores = np.where(
                self._const, np.where(self._const_value == x[0], 1.0, 0.5), 0.5
            )
        else:
            cx = x - x.mean()
            unit = cx / np.linalg.norm(cx)
            r = np.clip(self._rows @ unit, -1.0, 1.0)
            scores = 0.5 * (r + 1.0)
            scores[self._const] = 0.5
            # bitwise-identical images score exactly 1, not 1 minus an ulp
            for i in np.flatnonzero(scores >= 1.0 - 1e-9):
                if np.array_equal(self._raw[i], x):
                    scores[i] = 1.0
        best = int(np.argmax(scores))  # argmax takes the lowest index on ties
        s_max = float(scores[best])
        return TermDecision(
            s_max=s_max, best_match=best, stop=s_max >= self.params.match_threshold
        )


def decide(current, repository: Sequence[SuccessImage], params: TermParams) -> TermDecision:
    """Best-match similarity of the current view against the repository.

    Empty repository: s_max = 0 and no stop. Ties break toward the lowest
    repository index.
    """
    return SuccessImageIndex(repository, params).decide(current)
