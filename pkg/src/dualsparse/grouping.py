"""Nonlocal self-similarity grouping of patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualsparse.errors import ContractError, DimensionError
from dualsparse.patches import PatchMatrix

METRICS = ("euclidean", "ppb")


@dataclass
class GroupingConfig:
    """Parameters of group formation.

    ``window`` is the edge of the square search region centred on the
    reference patch; a candidate must lie fully inside it.
    """

    gamma: int = 90
    window: int = 39
    metric: str = "euclidean"
    looks: float = 1.0
    ref_stride: int = 4

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")
        if self.ref_stride < 1:
            raise ValueError(f"ref_stride must be >= 1, got {self.ref_stride}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass
class Group:
    reference_index: int
    member_indices: np.ndarray
    similarities: np.ndarray
    shortfall: int = 0

    @property
    def size(self) -> int:
        return self.member_indices.size


def _pair(x_i, x_j) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x_i, dtype=np.float64).ravel()
    b = np.asarray(x_j, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DimensionError(f"patch lengths differ: {a.size} vs {b.size}")
    return a, b


def euclidean_similarity(x_i, x_j) -> float:
    """Squared Euclidean distance; 0 for identical patches."""
    a, b = _pair(x_i, x_j)
    d = a - b
    return float(d @ d)


def _log_cosh_terms(delta: np.ndarray) -> np.ndarray:
    # log(exp(d/2) + exp(-d/2)) without overflow
    a = np.abs(delta)
    return 0.5 * a + np.log1p(np.exp(-a))


def ppb_similarity(x_i, x_j, looks: float = 1.0) -> float:
    """Speckle similarity of two log-intensity patches.

    Equals ``(2L-1) * sum_k log(sqrt(y_i/y_j) + sqrt(y_j/y_i))`` with
    ``y = exp(x)``, evaluated directly on the log differences.
    """
    a, b = _pair(x_i, x_j)
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ContractError("ppb similarity needs finite log-domain patches")
    return float((2 * looks - 1) * _log_cosh_terms(a - b).sum())


def similarities(ref: np.ndarray, candidates: np.ndarray, cfg: GroupingConfig) -> np.ndarray:
    """Vectorized metric between one reference column and many candidate columns."""
    diff = candidates - ref[:, None]
    if cfg.metric == "euclidean":
        return np.einsum("ij,ij->j", diff, diff)
    if not np.all(np.isfinite(diff)):
        raise ContractError("ppb similarity needs finite log-domain patches")
    return (2 * cfg.looks - 1) * _log_cosh_terms(diff).sum(axis=0)


class PatchIndex:
    """Lookup from patch origin to column, for window queries."""

    def __init__(self, patches: PatchMatrix):
        self.patches = patches
        h, w = patches.image_shape
        self.grid = np.full((h, w), -1, dtype=np.intp)
        self.grid[patches.origins[:, 0], patches.origins[:, 1]] = np.arange(patches.count)

    def window(self, ref: int, half: int) -> np.ndarray:
        r, c = self.patches.origins[ref]
        block = self.grid[max(0, r - half) : r + half + 1, max(0, c - half) : c + half + 1]
        ids = block[block >= 0]
        return np.sort(ids)


def reference_indices(patches: PatchMatrix, ref_stride: int) -> np.ndarray:
    """Columns whose origins sit on a coarser grid (last row/column always included)."""
    rows = np.unique(patches.origins[:, 0])
    cols = np.unique(patches.origins[:, 1])
    rsel = np.union1d(rows[::ref_stride], rows[-1:])
    csel = np.union1d(cols[::ref_stride], cols[-1:])
    keep = np.isin(patches.origins[:, 0], rsel) & np.isin(patches.origins[:, 1], csel)
    return np.flatnonzero(keep)


def form_group(patches: PatchMatrix, ref: int, cfg: GroupingConfig, index: PatchIndex | None = None) -> Group:
    """Reference patch plus its ``gamma - 1`` most similar in-window patches.

    Members are ordered by ascending similarity with ties broken by ascending
    column index; the reference always comes first. If the window holds fewer
    than ``gamma`` patches the whole window is returned and the missing count
    is stored in ``shortfall``.
    """
    if not 0 <= ref < patches.count:
        raise IndexError(f"reference index {ref} outside [0, {patches.count})")
    if cfg.window < patches.patch_edge:
        raise ValueError(f"window {cfg.window} smaller than patch edge {patches.patch_edge}")
    index = index or PatchIndex(patches)
    half = (cfg.window - patches.patch_edge) // 2
    cand = index.window(ref, half)
    cand = cand[cand != ref]
    X = patches.data
    scores = similarities(X[:, ref], X[:, cand], cfg)
    order = np.lexsort((cand, scores))[: cfg.gamma - 1]
    self_score = similarities(X[:, ref], X[:, [ref]], cfg)
    members = np.concatenate([[ref], cand[order]]).astype(np.intp)
    sims = np.concatenate([self_score, scores[order]])
    return Group(int(ref), members, sims, shortfall=max(0, cfg.gamma - members.size))
