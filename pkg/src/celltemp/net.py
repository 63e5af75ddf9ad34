"""LSTM regressor with hand-written backpropagation through time.

Architecture: one LSTM layer over the window, the final hidden state goes
through ``fc1`` (tanh, the high-level feature layer) and ``fc2`` (scalar).
The scalar is mapped to degrees by a fixed affine head; optionally the raw
surface temperature of the window's last step is added (``skip``), so the
trainable layers only model the core-surface difference.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, DomainError, StaleCacheError

BLOCKS = {"lstm": ("wx", "wh", "b"), "fc1": ("w1", "b1"), "fc2": ("w2", "b2")}
CHECKPOINT_VERSION = 1
N_INPUTS = 4
SURFACE_COLUMN = 2


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class NetParams:
    weights: dict
    trainable: dict = field(default_factory=lambda: {b: True for b in BLOCKS})
    head: dict = field(default_factory=lambda: {"shift": 0.0, "scale": 1.0, "skip": 0.0, "skip_mean": 0.0, "skip_std": 1.0})
    norm_hash: str = ""

    def __post_init__(self):
        if set(self.trainable) != set(BLOCKS):
            raise DomainError("freeze mask must cover exactly lstm, fc1 and fc2")

    @property
    def hidden(self):
        return self.weights["wh"].shape[0]

    @property
    def n_features(self):
        return self.weights["w1"].shape[1]

    def copy(self):
        return NetParams(
            {k: v.copy() for k, v in self.weights.items()},
            dict(self.trainable),
            dict(self.head),
            self.norm_hash,
        )

    def with_trainable(self, blocks):
        out = self.copy()
        out.trainable = {b: b in blocks for b in BLOCKS}
        return out

    def trainable_names(self):
        return [n for b, names in BLOCKS.items() if self.trainable[b] for n in names]

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.weights[name]).tobytes())
        return h.hexdigest()[:16]


def init_params(hidden=32, features=16, seed=0, n_inputs=N_INPUTS, head=None, norm_hash=""):
    """Xavier-uniform weights, zero biases except forget gate bias = 1."""
    rng = np.random.default_rng(seed)

    def xavier(fan_in, fan_out, shape):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, shape)

    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    weights = {
        "wx": xavier(n_inputs, hidden, (n_inputs, 4 * hidden)),
        "wh": xavier(hidden, hidden, (hidden, 4 * hidden)),
        "b": b,
        "w1": xavier(hidden, features, (hidden, features)),
        "b1": np.zeros(features),
        "w2": xavier(features, 1, (features, 1)),
        "b2": np.zeros(1),
    }
    p = NetParams(weights, norm_hash=norm_hash)
    if head:
        p.head.update(head)
    return p


@dataclass(eq=False)
class Cache:
    x: np.ndarray
    gates: np.ndarray
    c: np.ndarray
    tc: np.ndarray
    h: np.ndarray
    feat: np.ndarray
    params: NetParams
    digest: str
    used: bool = False


def forward(x, params: NetParams, keep_cache=True):
    """Run a batch ``x`` of shape (B, W, 4) (or a single (W, 4) window).

    Returns ``(pred, features, cache)``; ``pred`` is in degrees Celsius.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    wt = params.weights
    if x.ndim != 3 or x.shape[2] != wt["wx"].shape[0]:
        raise DomainError(f"expected windows of shape (B, W, {wt['wx'].shape[0]}), got {x.shape}")
    bsz, steps, _ = x.shape
    H = params.hidden
    xw = x @ wt["wx"] + wt["b"]
    h = np.zeros((bsz, H))
    c = np.zeros((bsz, H))
    if keep_cache:
        gates = np.empty((bsz, steps, 4 * H))
        cs = np.empty((bsz, steps + 1, H))
        tcs = np.empty((bsz, steps, H))
        hs = np.empty((bsz, steps + 1, H))
        cs[:, 0] = 0.0
        hs[:, 0] = 0.0
    wh = wt["wh"]
    for t in range(steps):
        z = xw[:, t] + h @ wh
        g = np.empty_like(z)
        g[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        g[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        g[:, 3 * H :] = sigmoid(z[:, 3 * H :])
        c = g[:, H : 2 * H] * c + g[:, :H] * g[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = g[:, 3 * H :] * tc
        if keep_cache:
            gates[:, t] = g
            cs[:, t + 1] = c
            tcs[:, t] = tc
            hs[:, t + 1] = h
    feat = np.tanh(h @ wt["w1"] + wt["b1"])
    y = (feat @ wt["w2"])[:, 0] + wt["b2"][0]
    hd = params.head
    pred = hd["shift"] + hd["scale"] * y
    if hd["skip"]:
        pred = pred + hd["skip"] * (hd["skip_mean"] + hd["skip_std"] * x[:, -1, SURFACE_COLUMN])
    cache = Cache(x, gates, cs, tcs, hs, feat, params, params.digest()) if keep_cache else None
    if single:
        return float(pred[0]), feat[0], cache
    return pred, feat, cache


def predict(x, params, batch_size=512):
    preds, feats = [], []
    for i in range(0, x.shape[0], batch_size):
        p, f, _ = forward(x[i : i + batch_size], params, keep_cache=False)
        preds.append(p)
        feats.append(f)
    return np.concatenate(preds), np.concatenate(feats)


def backward(cache: Cache, loss_grad, feat_grad=None):
    """Gradients of a loss w.r.t. every weight.

    ``loss_grad`` is dL/dpred per sample (for ``mean(0.5 (pred - y)^2)``
    that is ``(pred - y) / B``). ``feat_grad`` adds dL/dfeatures from
    auxiliary losses on the fc1 output. Frozen blocks get zero gradients.
    """
    if cache.used:
        raise StaleCacheError("cache was already consumed by a backward pass")
    params = cache.params
    if params.digest() != cache.digest:
        raise StaleCacheError("weights changed since the forward pass")
    cache.used = True
    wt = params.weights
    grads = {k: np.zeros_like(v) for k, v in wt.items()}
    dpred = np.atleast_1d(np.asarray(loss_grad, dtype=float))
    feat = cache.feat
    h_last = cache.h[:, -1]

    dy = params.head["scale"] * dpred
    dfeat = dy[:, None] * wt["w2"][:, 0][None, :]
    if feat_grad is not None:
        dfeat = dfeat + np.atleast_2d(feat_grad)
    if params.trainable["fc2"]:
        grads["w2"] = feat.T @ dy[:, None]
        grads["b2"] = np.array([dy.sum()])
    da1 = dfeat * (1.0 - feat**2)
    if params.trainable["fc1"]:
        grads["w1"] = h_last.T @ da1
        grads["b1"] = da1.sum(axis=0)
    if not params.trainable["lstm"]:
        return grads

    H = params.hidden
    bsz, steps, n_in = cache.x.shape
    dh = da1 @ wt["w1"].T
    dc_next = np.zeros((bsz, H))
    dz_all = np.empty((bsz, steps, 4 * H))
    wh = wt["wh"]
    for t in range(steps - 1, -1, -1):
        g = cache.gates[:, t]
        i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        tc = cache.tc[:, t]
        dc = dh * o * (1.0 - tc**2) + dc_next
        dz = dz_all[:, t]
        dz[:, :H] = dc * gg * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cache.c[:, t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - gg**2)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh = dz @ wh.T
    hprev = cache.h[:, :-1].reshape(-1, H)
    flat = dz_all.reshape(-1, 4 * H)
    grads["wh"] = hprev.T @ flat
    grads["wx"] = cache.x.reshape(-1, n_in).T @ flat
    grads["b"] = flat.sum(axis=0)
    return grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    validation_fraction: float = 0.1
    final_lr_fraction: float = 1.0  # cosine decay to this fraction of the lr

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1:
            raise DomainError("epochs and batch_size must be positive")
        if min(self.learning_rate, self.eps, self.clip_norm) <= 0:
            raise DomainError("learning_rate, eps and clip_norm must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DomainError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetParams):
        z = {k: np.zeros_like(v) for k, v in params.weights.items()}
        return cls(z, {k: np.zeros_like(v) for k, v in params.weights.items()})


def clip_gradients(grads, names, clip_norm):
    norm = math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names))
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: (g * scale if k in names else g) for k, g in grads.items()}, norm
    return grads, norm


def adam_step(params: NetParams, grads, state: AdamState, config: TrainConfig):
    """One Adam update on the trainable blocks; returns ``(params', state')``."""
    names = params.trainable_names()
    grads, _ = clip_gradients(grads, names, config.clip_norm)
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_w = dict(params.weights)
    m, v = dict(state.m), dict(state.v)
    for n in names:
        g = grads[n]
        m[n] = b1 * state.m[n] + (1.0 - b1) * g
        v[n] = b2 * state.v[n] + (1.0 - b2) * g * g
        mhat = m[n] / (1.0 - b1**t)
        vhat = v[n] / (1.0 - b2**t)
        new_w[n] = params.weights[n] - config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)
    out = NetParams(new_w, dict(params.trainable), dict(params.head), params.norm_hash)
    return out, AdamState(m, v, t)


def split_by_scenario(dataset, fraction, seed):
    """Indices of (train, validation) windows; whole scenarios go to one side."""
    ids = sorted(set(dataset.scenario_ids[i] for i in np.unique(dataset.seg_index)))
    n_val = int(round(fraction * len(ids))) if len(ids) > 1 else 0
    if fraction > 0 and len(ids) > 1:
        n_val = max(n_val, 1)
    rng = np.random.default_rng(seed)
    val_ids = set(rng.permutation(ids)[:n_val].tolist())
    seg_is_val = np.array([sid in val_ids for sid in dataset.scenario_ids])
    is_val = seg_is_val[dataset.seg_index]
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def mse(params, dataset, idx=None, batch_size=512):
    idx = np.arange(len(dataset)) if idx is None else idx
    if idx.size == 0:
        return float("nan")
    total = 0.0
    for i in range(0, idx.size, batch_size):
        part = idx[i : i + batch_size]
        pred, _, _ = forward(dataset.features(part), params, keep_cache=False)
        total += float(np.sum((pred - dataset.labels[part]) ** 2))
    return total / idx.size


def epoch_lr(config: TrainConfig, epoch):
    if config.epochs == 1 or config.final_lr_fraction == 1.0:
        return config.learning_rate
    frac = epoch / (config.epochs - 1)
    lo = config.final_lr_fraction
    return config.learning_rate * (lo + (1.0 - lo) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def train_supervised(dataset, config: TrainConfig, params: NetParams | None = None, log=None):
    """Minibatch training on ``0.5 (pred - label)^2``.

    Returns ``(params, history)`` where history holds per-epoch mean train
    MSE (over the epoch's minibatches) and validation MSE.
    """
    if len(dataset) == 0 or dataset.labels is None:
        raise DomainError("training needs a nonempty labelled dataset")
    if params is None:
        labels = dataset.labels
        params = init_params(seed=config.seed, head={"shift": float(labels.mean()), "scale": float(labels.std() or 1.0)})
    params = params.copy()
    params.norm_hash = dataset.norm_hash
    train_idx, val_idx = split_by_scenario(dataset, config.validation_fraction, config.seed)
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(params)
    history = {"epoch": [], "train_mse": [], "val_mse": []}
    for epoch in range(config.epochs):
        step_cfg = dataclasses.replace(config, learning_rate=epoch_lr(config, epoch))
        order = rng.permutation(train_idx)
        sq, count = 0.0, 0
        for i in range(0, order.size, config.batch_size):
            part = order[i : i + config.batch_size]
            x = dataset.features(part)
            pred, _, cache = forward(x, params)
            err = pred - dataset.labels[part]
            loss = float(np.sum(err**2))
            if not math.isfinite(loss):
                raise DivergenceError("non-finite training loss", epoch)
            sq += loss
            count += part.size
            grads = backward(cache, err / part.size)
            params, state = adam_step(params, grads, state, step_cfg)
        val = mse(params, dataset, val_idx)
        history["epoch"].append(epoch)
        history["train_mse"].append(sq / count)
        history["val_mse"].append(val)
        if log:
            log(f"epoch {epoch}: train_mse={sq / count:.6g} val_mse={val:.6g}")
    return params, history


def save_checkpoint(path, params: NetParams, norm=None):
    meta = {
        "format": "celltemp-lstm",
        "version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in params.weights.items()},
        "trainable": params.trainable,
        "head": params.head,
        "norm_hash": params.norm_hash,
        "norm": None if norm is None else norm.to_dict(),
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **params.weights)
    data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path):
    """Returns ``(params, norm_dict_or_None)``."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != "celltemp-lstm" or meta.get("version") != CHECKPOINT_VERSION:
            raise DomainError(f"{path}: unsupported checkpoint format")
        weights = {k: z[k].copy() for k in meta["shapes"]}
    for k, shape in meta["shapes"].items():
        if list(weights[k].shape) != shape:
            raise DomainError(f"{path}: shape mismatch for {k}")
    params = NetParams(weights, meta["trainable"], meta["head"], meta["norm_hash"])
    return params, meta["norm"]


def final_hidden(x, params: NetParams, batch_size=512):
    """Final LSTM hidden states for a batch of windows, chunked."""
    wt = params.weights
    H = params.hidden
    out = []
    for i in range(0, x.shape[0], batch_size):
        xb = x[i : i + batch_size]
        xw = xb @ wt["wx"] + wt["b"]
        h = np.zeros((xb.shape[0], H))
        c = np.zeros_like(h)
        for t in range(xb.shape[1]):
            z = xw[:, t] + h @ wt["wh"]
            i_g = sigmoid(z[:, :H])
            f_g = sigmoid(z[:, H : 2 * H])
            g_g = np.tanh(z[:, 2 * H : 3 * H])
            o_g = sigmoid(z[:, 3 * H :])
            c = f_g * c + i_g * g_g
            h = o_g * np.tanh(c)
        out.append(h)
    return np.concatenate(out) if out else np.zeros((0, H))


def head_forward(h_last, x_last, params: NetParams):
    """fc1/fc2 and the output head on precomputed final hidden states.

    ``x_last`` is the (B, 4) normalised input at the window's last step. The
    returned cache only supports backward passes with the LSTM frozen.
    """
    wt = params.weights
    feat = np.tanh(h_last @ wt["w1"] + wt["b1"])
    y = (feat @ wt["w2"])[:, 0] + wt["b2"][0]
    hd = params.head
    pred = hd["shift"] + hd["scale"] * y
    if hd["skip"]:
        pred = pred + hd["skip"] * (hd["skip_mean"] + hd["skip_std"] * x_last[:, SURFACE_COLUMN])
    cache = Cache(x_last[:, None, :], None, None, None, h_last[:, None, :], feat, params, params.digest())
    return pred, feat, cache
