"""Score-entropy training with non-preference dropout and early stopping.

Per example: draw a grid step ``t`` uniformly from ``1..T``, replace the
user by the non-preference user with probability ``p``, fade the target
into ``x_t`` and score the closed-form loss.  Batches are averaged and
fed to Adam.  After each epoch the validation split is grown with the
sampler and training keeps the parameters with the best
HR@5 + HR@10 + NDCG@5 + NDCG@10.

Randomness: the epoch shuffle comes from ``default_rng([seed, 0, epoch])``
and each batch draws from ``default_rng([seed, 1, epoch, batch])`` in the
main thread, so worker threads never touch a generator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fading, process, sampler
from . import losses as L
from . import scorenet as sn
from .errors import DataError, NumericalError
from .evaldata import TRAIN, VALID, InteractionDataset, Metrics, SplitView, evaluate
from .schedule import Schedule

log = logging.getLogger(__name__)

DIVERGENCE = 1e6
LOG_COLUMNS = ("epoch", "train_loss", "val_HR@5", "val_NDCG@5", "val_HR@10", "val_NDCG@10", "clamp_rate")


@dataclass(frozen=True)
class TrainConfig:
    setting: L.Setting = field(default_factory=L.Setting)
    schedule: Schedule = field(default_factory=Schedule)
    nonpref_prob: float = 0.1
    batch_size: int = 256
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    eval_ks: tuple = (1, 5, 10, 20)
    d: int = 64
    n_blocks: int = 1
    precision: int = 64
    include_beta: bool = True
    sampler: sampler.SamplerConfig = field(default_factory=sampler.SamplerConfig)
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.nonpref_prob <= 1.0:
            raise DataError("nonpref_prob must lie in [0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DataError("batch_size, max_epochs and patience must be positive")

    def net_config(self, n_items: int) -> sn.NetConfig:
        return sn.NetConfig(n_items=n_items, d=self.d, num_steps=self.schedule.num_steps,
                            has_virtual_item=self.setting.has_virtual_item,
                            n_blocks=self.n_blocks, precision=self.precision)


@dataclass
class TrainResult:
    field: sn.ScoreField
    log: list
    best_epoch: int
    step_losses: list
    nonpref_fraction: float

    def log_csv(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        for row in self.log:
            lines.append(",".join([str(row[0])] + [f"{v:.8f}" for v in row[1:]]))
        return "\n".join(lines) + "\n"


def fading_matrix(field_: sn.ScoreField, setting: L.Setting):
    pT = setting.target(field_.config.n_items, field_.params["theta"])
    return pT, fading.build_rank1(pT)


def model_scorer(field_: sn.ScoreField, cfg: sampler.SamplerConfig, schedule: Schedule,
                 setting: L.Setting, threads: int = 1, stats: dict | None = None) -> Callable:
    """Scorer for :func:`fadegrow.evaldata.evaluate` backed by the sampler."""
    pT, E = fading_matrix(field_, setting)

    def scorer(hist, user_ids):
        g = sampler.generate_batch(field_, hist, user_ids, cfg, schedule, pT.normalized, E, threads)
        if stats is not None:
            stats["clamped"] = stats.get("clamped", 0) + g.clamped
            stats["entries"] = stats.get("entries", 0) + g.rows * E.corpus_size
        return g.probs[:, : field_.config.n_items]

    return scorer


def evaluate_model(field_: sn.ScoreField, split: SplitView, cfg: sampler.SamplerConfig, schedule: Schedule,
                   setting: L.Setting, ks=(1, 5, 10, 20), threads: int = 1) -> Metrics:
    stats = {}
    m = evaluate(model_scorer(field_, cfg, schedule, setting, threads, stats), split, ks)
    rate = stats["clamped"] / stats["entries"] if stats.get("entries") else 0.0
    return Metrics(m.ks, m.hr, m.ndcg, m.n_users, rate)


def make_batch(data: InteractionDataset, idx: np.ndarray, field_: sn.ScoreField, cfg: TrainConfig, rng) -> sn.Batch:
    """Draw timesteps, dropout and faded states for the examples ``idx``."""
    b = idx.size
    x0 = data.targets[idx]
    t = rng.integers(1, cfg.schedule.num_steps + 1, size=b)
    drop = rng.random(b) < cfg.nonpref_prob
    _, E = fading_matrix(field_, cfg.setting)
    x_t = process.sample_forward_batch(x0, cfg.schedule.alpha_at(t), E, rng)
    hist = sn.pad_histories([data.histories[i] for i in idx], field_.config.history_len)
    return sn.Batch(hist, drop, x0, t, x_t)


def train(data: InteractionDataset, cfg: TrainConfig, on_epoch: Callable | None = None) -> TrainResult:
    train_idx = data.splits[TRAIN]
    if train_idx.size == 0:
        raise DataError("training split is empty")
    valid = data.split(VALID)
    loss_cfg = sn.LossConfig(cfg.setting, cfg.schedule, cfg.include_beta)
    field_ = sn.init(cfg.net_config(data.n_items), np.random.default_rng([cfg.seed, 2]))
    state = sn.AdamState()

    best, best_score, best_epoch, waited = field_.copy(), -np.inf, 0, 0
    rows, step_losses = [], []
    dropped = seen = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = np.random.default_rng([cfg.seed, 0, epoch]).permutation(train_idx)
        total = 0.0
        for j, lo in enumerate(range(0, perm.size, cfg.batch_size)):
            rng = np.random.default_rng([cfg.seed, 1, epoch, j])
            batch = make_batch(data, perm[lo:lo + cfg.batch_size], field_, cfg, rng)
            loss, grads = sn.gradients(field_, batch, loss_cfg, cfg.threads)
            if not np.isfinite(loss) or loss > DIVERGENCE:
                raise NumericalError(f"training diverged at epoch {epoch} (loss {loss})")
            field_, state = sn.adam_step(field_, grads, cfg.lr, state)
            step_losses.append(loss)
            total += loss * len(batch)
            dropped += int(batch.nonpref.sum())
            seen += len(batch)
        train_loss = total / perm.size

        if len(valid):
            m = evaluate_model(field_, valid, cfg.sampler, cfg.schedule, cfg.setting,
                               sorted(set(cfg.eval_ks) | {5, 10}), cfg.threads)
            score, clamp = m.combined(), m.clamp_rate
            row = (epoch, train_loss, m.hr[5], m.ndcg[5], m.hr[10], m.ndcg[10], clamp)
        else:
            m, score = None, -train_loss
            row = (epoch, train_loss, 0.0, 0.0, 0.0, 0.0, 0.0)
        rows.append(row)
        log.info("epoch %d loss %.5f val HR@5 %.4f NDCG@5 %.4f", epoch, train_loss, row[2], row[3])
        if on_epoch is not None:
            on_epoch(epoch, row, m)
        if score > best_score:
            best, best_score, best_epoch, waited = field_.copy(), score, epoch, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    return TrainResult(best, rows, best_epoch, step_losses, dropped / max(seen, 1))
