"""Interaction datasets, synthetic corpora and all-rank metrics.

Dataset files are UTF-8 text.  The first line is ``N=<corpus size>``;
every following non-blank line holds space-separated 0-based item
indices, oldest first, with the target as the last token.  Only the last
10 history items are kept.  Sequences are split 8:1:1 in file order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, RangeError
from .scorenet import HISTORY_LEN, pad_histories

TRAIN, VALID, TEST = "train", "valid", "test"


@dataclass(frozen=True)
class InteractionDataset:
    n_items: int
    histories: tuple
    targets: np.ndarray
    splits: dict

    def __len__(self):
        return len(self.histories)

    def split(self, name: str) -> "SplitView":
        if name not in self.splits:
            raise DataError(f"unknown split {name!r}")
        idx = self.splits[name]
        return SplitView(self, idx)


@dataclass(frozen=True)
class SplitView:
    data: InteractionDataset
    indices: np.ndarray

    def __len__(self):
        return int(self.indices.size)

    @property
    def targets(self) -> np.ndarray:
        return self.data.targets[self.indices]

    def padded(self, length: int = HISTORY_LEN) -> np.ndarray:
        return pad_histories([self.data.histories[i] for i in self.indices], length)


def split_sizes(n: int) -> tuple[int, int, int]:
    n_hold = int(round(0.1 * n))
    return n - 2 * n_hold, n_hold, n_hold


def make_dataset(n_items: int, sequences: Sequence[Sequence[int]]) -> InteractionDataset:
    """Build a dataset from full sequences (history followed by target)."""
    if n_items < 1:
        raise DataError("corpus size must be positive")
    hist, targets = [], []
    for i, seq in enumerate(sequences):
        seq = [int(x) for x in seq]
        if len(seq) < 2:
            raise DataError(f"sequence {i} needs a history and a target")
        if min(seq) < 0 or max(seq) >= n_items:
            raise RangeError(f"sequence {i} has an item outside [0, {n_items})")
        hist.append(tuple(seq[:-1][-HISTORY_LEN:]))
        targets.append(seq[-1])
    n_tr, n_va, _ = split_sizes(len(hist))
    order = np.arange(len(hist))
    splits = {TRAIN: order[:n_tr], VALID: order[n_tr:n_tr + n_va], TEST: order[n_tr + n_va:]}
    return InteractionDataset(n_items, tuple(hist), np.asarray(targets, dtype=np.int64), splits)


def load(path) -> InteractionDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip().startswith("N="):
        raise ParseError("expected header N=<corpus size>", line=1)
    try:
        n = int(lines[0].strip()[2:])
    except ValueError:
        raise ParseError("corpus size is not an integer", line=1) from None
    if n < 1:
        raise ParseError("corpus size must be positive", line=1)
    seqs = []
    for ln, text in enumerate(lines[1:], start=2):
        toks = text.split()
        if not toks:
            continue
        try:
            seq = [int(t) for t in toks]
        except ValueError:
            raise ParseError(f"non-integer token in {text!r}", line=ln) from None
        if len(seq) < 2:
            raise ParseError("need at least a history item and a target", line=ln)
        if min(seq) < 0 or max(seq) >= n:
            raise RangeError(f"line {ln}: item outside [0, {n})")
        seqs.append(seq)
    return make_dataset(n, seqs)


def save(data: InteractionDataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"N={data.n_items}\n")
        for h, t in zip(data.histories, data.targets):
            fh.write(" ".join(str(x) for x in (*h, int(t))) + "\n")


def synth_cycle(n_items: int, count: int, noise: float, rng) -> InteractionDataset:
    """Step-one progressions modulo ``n_items`` whose next item is predictable.

    Each history starts at a random item and has length 4 to 10.  The
    target is ``(last + 1) mod N``, or a uniform random item with
    probability ``noise``.
    """
    if n_items < 3:
        raise ConfigError("synthetic corpus needs at least 3 items")
    if not 0.0 <= noise < 1.0:
        raise ConfigError("noise must lie in [0, 1)")
    starts = rng.integers(0, n_items, size=count)
    lengths = rng.integers(4, 11, size=count)
    flip = rng.random(count) < noise
    rand = rng.integers(0, n_items, size=count)
    seqs = []
    for s, ln, f, r in zip(starts, lengths, flip, rand):
        h = [(int(s) + j) % n_items for j in range(ln)]
        seqs.append(h + [int(r) if f else (h[-1] + 1) % n_items])
    return make_dataset(n_items, seqs)


# -- metrics ------------------------------------------------------------------


def _check_k(k):
    if k < 1:
        raise ConfigError("cutoff K must be at least 1")


def hr_at_k(rank: int, k: int) -> int:
    _check_k(k)
    if rank < 1:
        raise ConfigError("rank is 1-based")
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    _check_k(k)
    if rank < 1:
        raise ConfigError("rank is 1-based")
    return float(1.0 / np.log2(rank + 1)) if rank <= k else 0.0


def target_ranks(scores, targets) -> np.ndarray:
    """1-based rank of each target among all columns, ties by ascending id."""
    scores = np.asarray(scores)
    targets = np.asarray(targets, dtype=np.int64)
    ts = scores[np.arange(targets.size), targets][:, None]
    ids = np.arange(scores.shape[1])[None, :]
    ahead = (scores > ts) | ((scores == ts) & (ids < targets[:, None]))
    return 1 + ahead.sum(axis=1)


@dataclass(frozen=True)
class Metrics:
    ks: tuple
    hr: dict
    ndcg: dict
    n_users: int
    clamp_rate: float = 0.0

    def combined(self, ks=(5, 10)) -> float:
        return float(sum(self.hr[k] + self.ndcg[k] for k in ks))

    def to_csv(self) -> str:
        lines = ["K,HR,NDCG"]
        lines += [f"{k},{self.hr[k]:.6f},{self.ndcg[k]:.6f}" for k in self.ks]
        return "\n".join(lines) + "\n"


def metrics_from_ranks(ranks, ks) -> Metrics:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise DataError("no users to evaluate")
    ks = tuple(int(k) for k in ks)
    for k in ks:
        _check_k(k)
    hr = {k: float(np.mean(ranks <= k)) for k in ks}
    gain = 1.0 / np.log2(ranks + 1.0)
    nd = {k: float(np.mean(np.where(ranks <= k, gain, 0.0))) for k in ks}
    return Metrics(ks, hr, nd, int(ranks.size))


Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def evaluate(scorer: Scorer, split: SplitView, ks=(1, 5, 10, 20)) -> Metrics:
    """All-rank HR/NDCG for a split.

    ``scorer(histories, user_ids)`` returns an ``(B, N)`` array of item
    scores (higher is better) for padded histories.  Users are scored in
    ascending id order and averaged in that order.
    """
    if len(split) == 0:
        raise DataError("cannot evaluate an empty split")
    order = np.sort(split.indices)
    view = SplitView(split.data, order)
    scores = np.asarray(scorer(view.padded(), order))
    if scores.shape != (len(order), split.data.n_items):
        raise DataError(f"scorer returned shape {scores.shape}")
    return metrics_from_ranks(target_ranks(scores, view.targets), ks)
