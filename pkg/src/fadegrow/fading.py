"""Structured idempotent fading matrices.

A fading matrix ``E`` decides where a preferred item goes when it is
replaced during forward fading.  Every matrix here is a sum of rank-1
blocks with disjoint supports::

    E = sum_i p_i s_i^T / (s_i^T p_i)

where ``s_i`` is the 0/1 indicator of cluster ``i`` and ``p_i`` a
nonnegative target living exactly on that cluster.  A single cluster
spanning all indices is the usual rank-1 case ``E = p 1^T / (1^T p)``.

Internally both kinds share one representation: a cluster label per
index (``-1`` when uncovered) and the normalized target value of each
index inside its own cluster.  That is enough to apply ``E`` to a vector
in O(M), read any row or column in O(M), and never build the dense
``M x M`` array outside of the ``debug_dense`` oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    IncompleteCoverage,
    InvalidTarget,
    OverlappingSupports,
    SupportMismatch,
)

RANK1 = "rank1"
RANKR = "rankr"

DENSE_LIMIT = 256


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NonPreferenceState:
    """Nonnegative target distribution the fading process converges to.

    ``weights`` is stored unnormalized; the normalized vector is derived
    lazily from the cached total.  When ``has_virtual_item`` is set, the
    last index is the learnable general hard negative item.
    """

    weights: np.ndarray
    has_virtual_item: bool = False
    total: float = field(init=False)

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise InvalidTarget("weights must be a non-empty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidTarget("weights must be finite and nonnegative")
        total = float(w.sum())
        if total <= 0:
            raise InvalidTarget("weights are all zero")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "total", total)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def n_items(self) -> int:
        """Number of real (non-virtual) items."""
        return self.size - 1 if self.has_virtual_item else self.size

    @property
    def normalized(self) -> np.ndarray:
        return self.weights / self.total

    @classmethod
    def uniform(cls, n_items: int) -> "NonPreferenceState":
        return cls(np.ones(n_items))

    @classmethod
    def virtual_item(cls, n_items: int) -> "NonPreferenceState":
        w = np.zeros(n_items + 1)
        w[-1] = 1.0
        return cls(w, has_virtual_item=True)

    @classmethod
    def hybrid(cls, n_items: int, lam: float) -> "NonPreferenceState":
        if not 0.0 < lam < 1.0:
            raise InvalidTarget(f"hybrid coefficient must lie in (0, 1), got {lam}")
        w = np.full(n_items + 1, lam / n_items)
        w[-1] = 1.0 - lam
        return cls(w, has_virtual_item=True)

    @classmethod
    def from_logits(cls, theta, has_virtual_item: bool = False) -> "NonPreferenceState":
        theta = np.asarray(theta, dtype=np.float64)
        z = np.exp(theta - theta.max())
        return cls(z / z.sum(), has_virtual_item=has_virtual_item)


@dataclass(frozen=True, eq=False)
class FadingMatrix:
    """Structured representation of an idempotent fading matrix.

    Use :func:`build_rank1` or :func:`build_rankr` rather than the
    constructor.
    """

    kind: str
    corpus_size: int
    labels: np.ndarray
    own: np.ndarray
    rank: int
    rank1_target: NonPreferenceState | None = None
    _order: np.ndarray = field(default=None, repr=False)
    _starts: np.ndarray = field(default=None, repr=False)

    @property
    def covers_all(self) -> bool:
        return bool(np.all(self.labels >= 0))

    @property
    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.rank)]


def _make(kind, labels, own, rank, rank1_target=None) -> FadingMatrix:
    labels = np.asarray(labels, dtype=np.int64)
    labels.flags.writeable = False
    covered = np.flatnonzero(labels >= 0)
    order = covered[np.argsort(labels[covered], kind="stable")]
    starts = np.flatnonzero(np.r_[True, np.diff(labels[order]) != 0]) if order.size else order
    order.flags.writeable = False
    return FadingMatrix(kind, labels.size, labels, _frozen(own), rank, rank1_target, order, starts)


def build_rank1(target) -> FadingMatrix:
    """``E = p 1^T / (1^T p)``: every column is the normalized target."""
    if not isinstance(target, NonPreferenceState):
        target = NonPreferenceState(np.asarray(target, dtype=np.float64))
    return _make(RANK1, np.zeros(target.size, dtype=np.int64), target.normalized, 1, target)


def build_rankr(clusters: Sequence[Sequence[int]], targets: Sequence) -> FadingMatrix:
    """Sum of disjoint-support rank-1 idempotents, one per cluster.

    Each target must be strictly positive exactly on its cluster.
    Indices belonging to no cluster give zero columns; such matrices are
    idempotent but not column-stochastic, and the process module refuses
    them.
    """
    if len(clusters) == 0 or len(clusters) != len(targets):
        raise DimensionError("need one target per cluster and at least one cluster")
    targets = [np.asarray(t, dtype=np.float64) for t in targets]
    m = targets[0].size
    if any(t.ndim != 1 or t.size != m for t in targets):
        raise DimensionError("all targets must be vectors of the same length")

    labels = np.full(m, -1, dtype=np.int64)
    own = np.zeros(m)
    for c, (idx, t) in enumerate(zip(clusters, targets)):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            raise SupportMismatch(f"cluster {c} is empty")
        if np.any((idx < 0) | (idx >= m)):
            raise DimensionError(f"cluster {c} has indices outside [0, {m})")
        if np.unique(idx).size != idx.size or np.any(labels[idx] >= 0):
            raise OverlappingSupports(f"cluster {c} overlaps an earlier cluster")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise SupportMismatch(f"target {c} must be finite and nonnegative")
        inside = np.zeros(m, dtype=bool)
        inside[idx] = True
        if np.any(t[~inside] != 0):
            raise SupportMismatch(f"target {c} has mass outside its cluster")
        if np.any(t[inside] <= 0):
            raise SupportMismatch(f"target {c} vanishes somewhere on its cluster")
        labels[idx] = c
        own[idx] = t[idx] / t[idx].sum()
    return _make(RANKR, labels, own, len(clusters))


def _check_len(E: FadingMatrix, v: np.ndarray):
    if v.shape[-1] != E.corpus_size:
        raise DimensionError(f"expected trailing length {E.corpus_size}, got {v.shape[-1]}")


def cluster_sums(E: FadingMatrix, v) -> np.ndarray:
    """Per-cluster partial sums ``s_i^T v`` along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    _check_len(E, v)
    if E.kind == RANK1:
        return v.sum(axis=-1, keepdims=True)
    return np.add.reduceat(v[..., E._order], E._starts, axis=-1)


def apply(E: FadingMatrix, v) -> np.ndarray:
    """``E @ v`` in O(M + r); batches along leading axes are allowed."""
    v = np.asarray(v, dtype=np.float64)
    sums = cluster_sums(E, v)
    if E.kind == RANK1:
        return E.own * sums
    out = np.zeros_like(v)
    cov = E._order
    out[..., cov] = E.own[cov] * sums[..., E.labels[cov]]
    return out


def column(E: FadingMatrix, j: int) -> np.ndarray:
    """Column ``j`` of the implied dense matrix."""
    if not 0 <= j < E.corpus_size:
        raise DimensionError(f"column index {j} outside [0, {E.corpus_size})")
    c = E.labels[j]
    if c < 0:
        return np.zeros(E.corpus_size)
    return np.where(E.labels == c, E.own, 0.0)


def row(E: FadingMatrix, i: int) -> np.ndarray:
    """Row ``i`` of the implied dense matrix: ``E[i, y]`` for every ``y``."""
    if not 0 <= i < E.corpus_size:
        raise DimensionError(f"row index {i} outside [0, {E.corpus_size})")
    c = E.labels[i]
    if c < 0:
        return np.zeros(E.corpus_size)
    return np.where(E.labels == c, E.own[i], 0.0)


def rows(E: FadingMatrix, idx) -> np.ndarray:
    """Stacked rows for an integer array of indices, shape ``(len(idx), M)``."""
    idx = np.asarray(idx, dtype=np.int64)
    if np.any((idx < 0) | (idx >= E.corpus_size)):
        raise DimensionError("row index out of range")
    lab = E.labels[idx]
    same = (E.labels[None, :] == lab[:, None]) & (lab[:, None] >= 0)
    return np.where(same, E.own[idx][:, None], 0.0)


def entry(E: FadingMatrix, i: int, j: int) -> float:
    """``E[i, j]`` without building anything."""
    if not (0 <= i < E.corpus_size and 0 <= j < E.corpus_size):
        raise DimensionError("index out of range")
    c = E.labels[j]
    return float(E.own[i]) if c >= 0 and E.labels[i] == c else 0.0


def require_full_coverage(E: FadingMatrix) -> FadingMatrix:
    if not E.covers_all:
        missing = np.flatnonzero(E.labels < 0)
        raise IncompleteCoverage(
            f"{missing.size} indices belong to no cluster; zero columns break column sums"
        )
    return E


def debug_dense(E: FadingMatrix) -> np.ndarray:
    """Materialize ``E`` densely.  Verification only, gated to M <= 256."""
    if E.corpus_size > DENSE_LIMIT:
        raise DimensionError(f"dense oracle limited to M <= {DENSE_LIMIT}")
    same = (E.labels[:, None] == E.labels[None, :]) & (E.labels[None, :] >= 0)
    return np.where(same, E.own[:, None], 0.0)
