"""The learnable preference-ratio field ``s(x_t, t, u)``.

Parameters live in a flat ``dict`` of numpy arrays so that the optimizer,
the checkpoint writer and the finite-difference checks can all iterate
over them uniformly.  Layout:

* ``item_emb`` ``(M, d)``: item embeddings, shared by the input and the
  output layer (row ``N`` is the virtual item when enabled).
* ``time_emb`` ``(T+1, d)``: one learned row per grid step.
* ``phi`` ``(d,)``: the non-preference user.
* ``b{i}.*``: pre-norm causal self-attention blocks with rotary position
  mixing and a GELU feed-forward layer.
* ``lnf_g``, ``lnf_b``: final layer norm on the last position.
* ``A1, c1, A2, c2``: two-layer GELU head mapping ``3d -> d``.
* ``theta`` ``(M,)``: adaptive non-preference logits.

Scores are ``<item_emb[y], h>`` with ``h`` the head output, and the entry
at ``x_t`` is pinned to zero.  Backpropagation is written out by hand.
"""

from __future__ import annotations

import io
import json
import threading
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import softmax

from . import losses as L
from .errors import ConfigError, DimensionError, EmptyHistory, NumericalError
from .schedule import Schedule

HISTORY_LEN = 10
CHECKPOINT_VERSION = "fadegrow-checkpoint-1"
LN_EPS = 1e-5
MICROBATCH = 64
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class NetConfig:
    n_items: int
    d: int = 64
    num_steps: int = 20
    has_virtual_item: bool = False
    n_blocks: int = 1
    history_len: int = HISTORY_LEN
    precision: int = 64

    def __post_init__(self):
        if self.n_items < 1 or self.d < 2 or self.num_steps < 1 or self.n_blocks < 0:
            raise ConfigError("n_items, d and num_steps must be positive")
        if self.d % 2:
            raise ConfigError("rotary position mixing needs an even width d")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")

    @property
    def corpus_size(self) -> int:
        return self.n_items + 1 if self.has_virtual_item else self.n_items

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


@dataclass
class ScoreField:
    config: NetConfig
    params: dict

    @property
    def dtype(self):
        return self.config.dtype

    def copy(self) -> "ScoreField":
        return ScoreField(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class UserContext:
    history: tuple = ()
    is_nonpref: bool = False


# Rows pushed through the sequence encoder; lets callers confirm that
# non-preference rows never touch histories.
class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self.encoder_rows = 0

    def add(self, n: int):
        with self._lock:
            self.encoder_rows += n

    def reset(self):
        with self._lock:
            self.encoder_rows = 0


instrumentation = _Counter()


# -- init ---------------------------------------------------------------------


def _uniform(rng, fan_in, shape):
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


def init(config: NetConfig, rng) -> ScoreField:
    d, m = config.d, config.corpus_size
    p = {
        "item_emb": rng.normal(0.0, 0.02, size=(m, d)),
        "time_emb": rng.normal(0.0, 0.02, size=(config.num_steps + 1, d)),
        "phi": rng.normal(0.0, 0.02, size=d),
    }
    for i in range(config.n_blocks):
        p[f"b{i}.ln1_g"] = np.ones(d)
        p[f"b{i}.ln1_b"] = np.zeros(d)
        for w in ("Wq", "Wk", "Wv", "Wo"):
            p[f"b{i}.{w}"] = _uniform(rng, d, (d, d))
        p[f"b{i}.ln2_g"] = np.ones(d)
        p[f"b{i}.ln2_b"] = np.zeros(d)
        p[f"b{i}.W1"] = _uniform(rng, d, (d, d))
        p[f"b{i}.f1"] = np.zeros(d)
        p[f"b{i}.W2"] = _uniform(rng, d, (d, d))
        p[f"b{i}.f2"] = np.zeros(d)
    p["lnf_g"] = np.ones(d)
    p["lnf_b"] = np.zeros(d)
    p["A1"] = _uniform(rng, 3 * d, (3 * d, d))
    p["c1"] = np.zeros(d)
    p["A2"] = _uniform(rng, d, (d, d))
    p["c2"] = np.zeros(d)
    p["theta"] = np.zeros(m)
    return ScoreField(config, {k: v.astype(config.dtype) for k, v in p.items()})


# -- building blocks ----------------------------------------------------------


def _ln(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * g + b, (xh, inv, g)


def _ln_back(dy, cache):
    xh, inv, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xh).sum(red)
    db = dy.sum(red)
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _rope_tables(length, d, dtype):
    freq = 10000.0 ** (-np.arange(0, d, 2) / d)
    ang = np.arange(length)[:, None] * freq[None, :]
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _rotate(x, cos, sin, sign=1.0):
    xe, xo = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = xe * cos - sign * xo * sin
    out[..., 1::2] = sign * xe * sin + xo * cos
    return out


# -- encoder ------------------------------------------------------------------


def pad_histories(histories: Sequence[Sequence[int]], length: int = HISTORY_LEN) -> np.ndarray:
    """Left-pad (and left-truncate) histories to ``length`` with ``-1``."""
    out = np.full((len(histories), length), -1, dtype=np.int64)
    for i, h in enumerate(histories):
        h = list(h)[-length:]
        if h:
            out[i, length - len(h):] = h
    return out


def _encode(field: ScoreField, hist: np.ndarray):
    """Encode padded histories ``(B, L)``; returns ``(B, d)`` and a cache."""
    p, cfg = field.params, field.config
    dt = field.dtype
    b, length = hist.shape
    d = cfg.d
    mask = hist >= 0
    if b and not np.all(mask[:, -1]):
        raise EmptyHistory("every encoded history needs at least one item")
    instrumentation.add(b)
    x = np.where(mask[..., None], p["item_emb"][np.maximum(hist, 0)], 0.0).astype(dt)
    cos, sin = _rope_tables(length, d, dt)
    causal = np.tril(np.ones((length, length), dtype=bool))
    allowed = causal[None] & mask[:, None, :]
    allowed |= np.eye(length, dtype=bool)[None]
    scale = 1.0 / np.sqrt(d)
    caches = []
    for i in range(cfg.n_blocks):
        pre = f"b{i}."
        h, ln1 = _ln(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
        q_raw, k_raw, v = h @ p[pre + "Wq"], h @ p[pre + "Wk"], h @ p[pre + "Wv"]
        q, k = _rotate(q_raw, cos, sin), _rotate(k_raw, cos, sin)
        s = np.where(allowed, q @ k.transpose(0, 2, 1) * scale, -np.inf)
        a = softmax(s, axis=-1)
        o = a @ v
        x1 = x + o @ p[pre + "Wo"]
        h2, ln2 = _ln(x1, p[pre + "ln2_g"], p[pre + "ln2_b"])
        z = h2 @ p[pre + "W1"] + p[pre + "f1"]
        g, tz = _gelu(z)
        x2 = x1 + g @ p[pre + "W2"] + p[pre + "f2"]
        caches.append((x, h, ln1, q, k, v, a, o, x1, h2, ln2, z, g, tz))
        x = x2
    u, lnf = _ln(x[:, -1], p["lnf_g"], p["lnf_b"])
    return u, (hist, mask, cos, sin, caches, lnf)


def _encode_back(field: ScoreField, du, cache, grads):
    p, cfg = field.params, field.config
    hist, mask, cos, sin, caches, lnf = cache
    b, length = hist.shape
    scale = 1.0 / np.sqrt(cfg.d)
    dlast, dg, db = _ln_back(du, lnf)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db
    dx = np.zeros((b, length, cfg.d), dtype=du.dtype)
    dx[:, -1] = dlast
    for i in reversed(range(cfg.n_blocks)):
        pre = f"b{i}."
        x, h, ln1, q, k, v, a, o, x1, h2, ln2, z, g, tz = caches[i]
        # feed-forward
        grads[pre + "f2"] += dx.sum((0, 1))
        grads[pre + "W2"] += np.einsum("bld,ble->de", g, dx)
        dz = _gelu_back(dx @ p[pre + "W2"].T, z, tz)
        grads[pre + "f1"] += dz.sum((0, 1))
        grads[pre + "W1"] += np.einsum("bld,ble->de", h2, dz)
        dh2, dg2, db2 = _ln_back(dz @ p[pre + "W1"].T, ln2)
        grads[pre + "ln2_g"] += dg2
        grads[pre + "ln2_b"] += db2
        dx1 = dx + dh2
        # attention
        grads[pre + "Wo"] += np.einsum("bld,ble->de", o, dx1)
        do = dx1 @ p[pre + "Wo"].T
        da = do @ v.transpose(0, 2, 1)
        dv = a.transpose(0, 2, 1) @ do
        ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
        dq = _rotate(ds @ k, cos, sin, sign=-1.0)
        dk = _rotate(ds.transpose(0, 2, 1) @ q, cos, sin, sign=-1.0)
        grads[pre + "Wq"] += np.einsum("bld,ble->de", h, dq)
        grads[pre + "Wk"] += np.einsum("bld,ble->de", h, dk)
        grads[pre + "Wv"] += np.einsum("bld,ble->de", h, dv)
        dh = dq @ p[pre + "Wq"].T + dk @ p[pre + "Wk"].T + dv @ p[pre + "Wv"].T
        dxa, dg1, db1 = _ln_back(dh, ln1)
        grads[pre + "ln1_g"] += dg1
        grads[pre + "ln1_b"] += db1
        dx = dx1 + dxa
    rows = hist[mask]
    np.add.at(grads["item_emb"], rows, dx[mask])


def encode_users(field: ScoreField, hist: np.ndarray, nonpref) -> np.ndarray:
    """User vectors for padded histories; ``phi`` on non-preference rows."""
    u, _ = _users_forward(field, np.asarray(hist, dtype=np.int64), np.asarray(nonpref, dtype=bool))
    return u


def _users_forward(field, hist, nonpref):
    b = hist.shape[0]
    u = np.empty((b, field.config.d), dtype=field.dtype)
    u[nonpref] = field.params["phi"]
    live = ~nonpref
    enc, cache = _encode(field, hist[live]) if live.any() else (None, None)
    if enc is not None:
        u[live] = enc
    return u, cache


def encode_user(field: ScoreField, ctx: UserContext) -> np.ndarray:
    if ctx.is_nonpref:
        return field.params["phi"].copy()
    if len(ctx.history) == 0:
        raise EmptyHistory("user has no history")
    _check_items(field, ctx.history, allow_virtual=False)
    hist = pad_histories([ctx.history], field.config.history_len)
    return _encode(field, hist)[0][0]


def _check_items(field, idx, allow_virtual=True):
    idx = np.asarray(idx)
    hi = field.config.corpus_size if allow_virtual else field.config.n_items
    if idx.size and (idx.min() < 0 or idx.max() >= hi):
        raise DimensionError(f"item index outside [0, {hi})")


# -- head ---------------------------------------------------------------------


def _head(field: ScoreField, x_t, t_index, u):
    p = field.params
    zin = np.concatenate([p["item_emb"][x_t], p["time_emb"][t_index], u], axis=1)
    z1 = zin @ p["A1"] + p["c1"]
    g, t1 = _gelu(z1)
    h = g @ p["A2"] + p["c2"]
    s = h @ p["item_emb"].T
    s[np.arange(s.shape[0]), x_t] = 0.0
    return s, (zin, z1, g, t1, h)


def _head_back(field: ScoreField, x_t, t_index, gs, cache, grads):
    p = field.params
    d = field.config.d
    zin, z1, g, t1, h = cache
    grads["item_emb"] += gs.T @ h
    dh = gs @ p["item_emb"]
    grads["c2"] += dh.sum(0)
    grads["A2"] += g.T @ dh
    dz1 = _gelu_back(dh @ p["A2"].T, z1, t1)
    grads["c1"] += dz1.sum(0)
    grads["A1"] += zin.T @ dz1
    dzin = dz1 @ p["A1"].T
    np.add.at(grads["item_emb"], x_t, dzin[:, :d])
    np.add.at(grads["time_emb"], t_index, dzin[:, d:2 * d])
    return dzin[:, 2 * d:]


def score_batch(field: ScoreField, x_t, t_index, u) -> np.ndarray:
    """Scores ``(B, M)`` for precomputed user vectors ``u``."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=np.int64))
    t_index = np.broadcast_to(np.asarray(t_index, dtype=np.int64), x_t.shape)
    return _head(field, x_t, t_index, np.asarray(u, dtype=field.dtype))[0]


def score(field: ScoreField, x_t: int, t_index: int, ctx: UserContext) -> np.ndarray:
    if not 0 <= x_t < field.config.corpus_size:
        raise DimensionError(f"x_t={x_t} outside [0, {field.config.corpus_size})")
    if not 0 <= t_index <= field.config.num_steps:
        raise DimensionError(f"t_index={t_index} outside [0, {field.config.num_steps}]")
    u = encode_user(field, ctx)
    return score_batch(field, [x_t], [t_index], u[None])[0]


# -- loss and gradients -------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    """A batch of training tuples; ``hist`` is left-padded with ``-1``."""

    hist: np.ndarray
    nonpref: np.ndarray
    x0: np.ndarray
    t_index: np.ndarray
    x_t: np.ndarray

    def __len__(self):
        return int(self.x0.size)

    def take(self, sl) -> "Batch":
        return Batch(self.hist[sl], self.nonpref[sl], self.x0[sl], self.t_index[sl], self.x_t[sl])


@dataclass(frozen=True)
class LossConfig:
    setting: L.Setting = field(default_factory=L.Setting)
    schedule: Schedule = field(default_factory=Schedule)
    include_beta: bool = True


def target_distribution(field: ScoreField, setting: L.Setting) -> np.ndarray:
    """Normalized non-preference state (depends on ``theta`` when adaptive)."""
    return setting.target(field.config.n_items, field.params["theta"]).normalized


def _check_setting(field, setting):
    if setting.corpus_size(field.config.n_items) != field.config.corpus_size:
        raise ConfigError(f"{setting.kind} setting needs corpus size {setting.corpus_size(field.config.n_items)}")


def _chunk_grad(field: ScoreField, batch: Batch, cfg: LossConfig, pbar):
    """Summed (not averaged) loss and gradients over one chunk."""
    grads = {k: np.zeros_like(v) for k, v in field.params.items()}
    u, enc_cache = _users_forward(field, batch.hist, batch.nonpref)
    s, head_cache = _head(field, batch.x_t, batch.t_index, u)
    sched = cfg.schedule
    alpha = sched.alpha_at(batch.t_index)
    beta = sched.beta(batch.t_index / sched.num_steps) if cfg.include_beta else np.ones(len(batch))
    adaptive = cfg.setting.kind == L.ADAPTIVE
    try:
        res = L.batch_loss(batch.x0, batch.x_t, s.astype(np.float64), alpha, beta, pbar, want_mu_grad=adaptive)
    except NumericalError as e:
        raise NumericalError(str(e), index=e.index) from None
    gs = res.grad_scores.astype(field.dtype)
    du = _head_back(field, batch.x_t, batch.t_index, gs, head_cache, grads)
    if batch.nonpref.any():
        grads["phi"] += du[batch.nonpref].sum(0)
    if enc_cache is not None:
        _encode_back(field, du[~batch.nonpref], enc_cache, grads)
    if adaptive:
        grads["theta"] += L.softmax_backward(pbar, res.grad_mu.sum(0)).astype(field.dtype)
    return res.losses, grads


def gradients(field: ScoreField, batch: Batch, cfg: LossConfig, threads: int = 1):
    """Mean loss over the batch and its exact gradient for every parameter.

    The batch is cut into fixed-size chunks regardless of ``threads`` and
    the chunk results are summed in chunk order, so the output does not
    depend on the worker count.
    """
    n = len(batch)
    if n == 0:
        raise ConfigError("empty batch")
    _check_setting(field, cfg.setting)
    _check_items(field, batch.x_t)
    _check_items(field, batch.x0, allow_virtual=False)
    pbar = target_distribution(field, cfg.setting)
    chunks = [batch.take(slice(i, i + MICROBATCH)) for i in range(0, n, MICROBATCH)]
    work = lambda c: _chunk_grad(field, c, cfg, pbar)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    losses = np.concatenate([pl for pl, _ in parts])
    grads = {k: np.zeros_like(v) for k, v in field.params.items()}
    for _, g in parts:
        for k in grads:
            grads[k] += g[k]
    for k in grads:
        grads[k] /= n
    return float(losses.sum() / n), grads


def loss_value(field: ScoreField, batch: Batch, cfg: LossConfig) -> float:
    """Mean loss only; used by finite-difference checks."""
    return gradients(field, batch, cfg)[0]


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(field_: ScoreField, grads: dict, lr: float, state: AdamState):
    """One Adam update without weight decay; returns the new field and state."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {k}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    new = {}
    for k, w in field_.params.items():
        g = grads[k]
        m = b1 * state.m.get(k, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        upd = w - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new[k] = upd.astype(w.dtype)
        if not np.all(np.isfinite(new[k])):
            raise NumericalError(f"parameter {k} became non-finite")
    return ScoreField(field_.config, new), state


# -- checkpoints --------------------------------------------------------------


def save(field_: ScoreField, path, extra: dict | None = None):
    """Write an ``.npz`` container with every tensor plus the config.

    Entries carry a fixed timestamp so identical parameters give
    byte-identical files.
    """
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(field_.config), "extra": extra or {}}
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    arrays.update({f"p:{k}": v for k, v in sorted(field_.params.items())})
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load(path):
    """Read a checkpoint written by :func:`save`; returns ``(field, extra)``."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
        params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p:")}
    return ScoreField(NetConfig(**meta["config"]), params), meta["extra"]
