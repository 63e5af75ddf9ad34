"""Unsupervised domain adaptation of a pre-trained estimator.

Pseudo-labels come from the PA thermal model with source parameters run
on the target's current and coolant temperature. The LSTM block stays
frozen; fc1/fc2 are fine-tuned on reliable pseudo-labels while MMD and
CORAL pull the fc1 features of both domains together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .electrical import heat_generation
from .errors import AdaptationStarvedError, DivergenceError, DomainError
from .net import AdamState, NetParams, TrainConfig, adam_step, backward, final_hidden, head_forward
from .sim import CellParams, Measurements, TimeSeries
from .thermal import ThermalStatePA, derive_pa_coefficients, pa_step


@dataclass(frozen=True)
class AdaptConfig:
    lambda_mmd: float = 1.0
    lambda_coral: float = 1.0
    bandwidths: tuple | None = None  # absolute; None -> median heuristic
    bandwidth_factors: tuple = (0.5, 1.0, 2.0)
    tau_reliable: float = 1.0
    anchor_surface: bool = False
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    labeled_fraction: float = 0.0
    tunable: tuple = ("fc1", "fc2")
    max_source_windows: int = 1024
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lambda_mmd < 0 or self.lambda_coral < 0:
            raise DomainError("loss weights must be nonnegative")
        if self.tau_reliable <= 0:
            raise DomainError("tau_reliable must be positive")
        if self.bandwidths is not None and min(self.bandwidths) <= 0:
            raise DomainError("bandwidths must be positive")
        if not 0.0 <= self.labeled_fraction <= 1.0:
            raise DomainError("labeled_fraction must lie in [0, 1]")
        if "lstm" in self.tunable:
            raise DomainError("the LSTM block is always frozen during adaptation")


@dataclass(eq=False)
class PseudoLabelSet:
    t_core: np.ndarray
    t_surf_model: np.ndarray
    mask: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.t_core.size == self.mask.size == self.t_surf_model.size):
            raise DomainError("pseudo-label arrays must be aligned")


def pseudo_labels(target: Measurements, source: CellParams, t0=None, dt=None, anchor_surface=False) -> PseudoLabelSet:
    """Run the source-parameterised PA model over the target's inputs.

    Heat comes from the source circuit driven by the measured current; the
    target's core temperature (if any) is never read. ``anchor_surface``
    shifts the model profile by the measured-minus-model surface offset, so
    the labels keep only the model's core-surface difference.
    """
    n = len(target)
    if dt is None:
        dt = float(target.t[1] - target.t[0]) if n > 1 else 1.0
    q = heat_generation(target.current, dt, source.electrical)
    ss = derive_pa_coefficients(source.thermal)
    state = ThermalStatePA(float(target.t_fluid[0] if t0 is None else t0), 0.0)
    t_core = np.empty(n)
    t_surf = np.empty(n)
    for k in range(n):
        state, t_surf[k], t_core[k] = pa_step(state, q[k], target.t_fluid[k], dt, ss)
    if anchor_surface:
        t_core = t_core + (np.asarray(target.t_surf, dtype=float) - t_surf)
        t_surf = np.asarray(target.t_surf, dtype=float).copy()
    prov = {
        "thermal": source.thermal.__dict__.copy(),
        "electrical_r0": source.electrical.r0,
        "electrical_r1": source.electrical.r1,
        "anchor_surface": bool(anchor_surface),
    }
    return PseudoLabelSet(t_core, t_surf, np.ones(n, dtype=bool), prov)


def select_reliable(pseudo: PseudoLabelSet, measured_ts, tau):
    measured_ts = np.asarray(measured_ts, dtype=float)
    if measured_ts.size != pseudo.t_surf_model.size:
        raise DomainError("measured surface temperature is not aligned with the pseudo-labels")
    return np.abs(pseudo.t_surf_model - measured_ts) <= tau


def _sqdist(a, b):
    # differences rather than the expanded form: exact symmetry, no cancellation
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def _as2d(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def mmd2(x, y, bandwidths, biased=None, return_grad=False):
    """Multi-kernel squared MMD with Gaussian kernels, clamped at zero.

    The unbiased estimate drops the diagonal of the within-set kernel
    matrices. ``biased=None`` picks the unbiased form unless a set has a
    single sample, where only the biased (V-statistic) form exists.
    """
    x, y = _as2d(x), _as2d(y)
    if len(x) == 0 or len(y) == 0:
        raise DomainError("mmd2 needs nonempty sample sets")
    if biased is None:
        biased = min(len(x), len(y)) < 2
    n, m = len(x), len(y)
    dxx, dyy, dxy = _sqdist(x, x), _sqdist(y, y), _sqdist(x, y)
    val = 0.0
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    nb = len(bandwidths)
    for s in bandwidths:
        c = 1.0 / (2.0 * s * s)
        kxx, kyy, kxy = np.exp(-c * dxx), np.exp(-c * dyy), np.exp(-c * dxy)
        if biased:
            wxx, wyy = 1.0 / (n * n), 1.0 / (m * m)
        else:
            np.fill_diagonal(kxx, 0.0)
            np.fill_diagonal(kyy, 0.0)
            wxx, wyy = 1.0 / (n * (n - 1)), 1.0 / (m * (m - 1))
        wxy = 1.0 / (n * m)
        # fsum is exactly rounded, so swapping x and y gives the same value
        sxx, syy, sxy = (math.fsum(k.ravel()) for k in (kxx, kyy, kxy))
        val += (wxx * sxx + wyy * syy - 2.0 * wxy * sxy) / nb
        if return_grad:
            # d k(u, v) / du = -2c (u - v) k(u, v)
            axx = kxx * wxx * 2.0  # symmetric pairs
            gx += (-2.0 * c) * (axx.sum(1)[:, None] * x - axx @ x) / nb
            gx -= (-2.0 * c) * 2.0 * wxy * (kxy.sum(1)[:, None] * x - kxy @ y) / nb
            ayy = kyy * wyy * 2.0
            gy += (-2.0 * c) * (ayy.sum(1)[:, None] * y - ayy @ y) / nb
            gy -= (-2.0 * c) * 2.0 * wxy * (kxy.sum(0)[:, None] * y - kxy.T @ x) / nb
    if val <= 0.0:
        val, gx, gy = 0.0, np.zeros_like(x), np.zeros_like(y)
    val = float(val)
    if return_grad:
        return val, gx, gy
    return val


def _cov(x):
    xc = x - x.mean(axis=0)
    return xc, xc.T @ xc / len(x) + 1e-6 * np.eye(x.shape[1])


def coral(x, y, return_grad=False):
    """Squared Frobenius distance of feature covariances over ``4 F^2``.

    Covariances are normalised by the sample count (so duplicating a set
    leaves its covariance unchanged) and regularised by ``1e-6 I``.
    """
    x, y = _as2d(x), _as2d(y)
    if len(x) < 2 or len(y) < 2:
        raise DomainError("coral needs at least two samples per set")
    F = x.shape[1]
    xc, cx = _cov(x)
    yc, cy = _cov(y)
    diff = cx - cy
    val = float(np.sum(diff * diff) / (4.0 * F * F))
    if not return_grad:
        return val
    g = diff / (2.0 * F * F)
    return val, 2.0 / len(x) * xc @ g, -2.0 / len(y) * yc @ g


def median_bandwidths(features, factors=(0.5, 1.0, 2.0), max_points=512, seed=0):
    f = _as2d(features)
    if len(f) > max_points:
        f = f[np.random.default_rng(seed).choice(len(f), max_points, replace=False)]
    d = np.sqrt(_sqdist(f, f)[np.triu_indices(len(f), 1)])
    med = float(np.median(d)) if d.size else 1.0
    med = med if med > 0 else 1.0
    return tuple(med * k for k in factors)


def pca_project(features, k=3):
    """Project onto the top ``k`` principal axes.

    Returns ``(projection, explained_ratio, components, mean)``. When the data
    has rank below ``k`` only the available components are returned.
    """
    f = _as2d(features)
    if len(f) < k:
        raise DomainError(f"pca_project needs at least {k} samples")
    mean = f.mean(axis=0)
    xc = f - mean
    cov = xc.T @ xc / max(len(f) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    total = vals.sum()
    tol = max(total, 1e-300) * 1e-12
    keep = min(k, int(np.sum(vals > tol))) if total > 0 else 0
    comps = vecs[:, :keep]
    for j in range(keep):
        # sign convention: largest-magnitude loading positive
        if comps[np.argmax(np.abs(comps[:, j])), j] < 0:
            comps[:, j] = -comps[:, j]
    ratios = vals[:keep] / total if total > 0 else np.zeros(0)
    return xc @ comps, ratios, comps, mean


@dataclass(eq=False)
class _Domain:
    hidden: np.ndarray
    last: np.ndarray


def encode(windows, params, idx=None):
    """Final hidden states and last-step inputs of ``windows``."""
    x = windows.features(idx)
    return _Domain(final_hidden(x, params), x[:, -1, :].copy())


_source_memo = {}


def _encode_source(source_windows, params, config):
    key = (id(source_windows), len(source_windows), params.digest(), config.seed, config.max_source_windows)
    if key not in _source_memo:
        _source_memo.clear()
        _source_memo[key] = encode(source_windows, params, _source_subset(source_windows, config))
    return _source_memo[key]


def _alignment_metrics(params, src, tgt, bandwidths, n=512):
    _, fs, _ = head_forward(src.hidden[:n], src.last[:n], params)
    _, ft, _ = head_forward(tgt.hidden[:n], tgt.last[:n], params)
    return mmd2(fs, ft, bandwidths), coral(fs, ft), fs, ft


def _merge(g1, g2):
    return {k: g1[k] + g2[k] for k in g1}


def _fine_tune(pretrained, src, tgt, labels, label_mask, config: AdaptConfig):
    params = pretrained.with_trainable(config.tunable)
    labeled = np.flatnonzero(label_mask)
    if labeled.size == 0:
        raise AdaptationStarvedError("no reliable target windows to adapt on")
    rng = np.random.default_rng(config.seed)
    if config.bandwidths is None:
        _, fs, _ = head_forward(src.hidden, src.last, params)
        _, ft, _ = head_forward(tgt.hidden, tgt.last, params)
        bandwidths = median_bandwidths(np.vstack([fs, ft]), config.bandwidth_factors, seed=config.seed)
    else:
        bandwidths = tuple(config.bandwidths)
    tcfg = TrainConfig(epochs=1, batch_size=config.batch_size, learning_rate=config.learning_rate, clip_norm=config.clip_norm)
    state = AdamState.zeros_like(params)
    history = {"epoch": [], "mse": [], "mmd": [], "coral": []}

    def record(epoch):
        pred, _, _ = head_forward(tgt.hidden[labeled], tgt.last[labeled], params)
        m, c, _, _ = _alignment_metrics(params, src, tgt, bandwidths)
        history["epoch"].append(epoch)
        history["mse"].append(float(np.mean((pred - labels[labeled]) ** 2)))
        history["mmd"].append(m)
        history["coral"].append(c)

    record(0)
    bs = config.batch_size
    align = config.lambda_mmd > 0 or config.lambda_coral > 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(labeled)
        for i in range(0, order.size, bs):
            part = order[i : i + bs]
            pred, ft, cache_t = head_forward(tgt.hidden[part], tgt.last[part], params)
            dpred = (pred - labels[part]) / part.size
            feat_grad_t = None
            if align:
                s_idx = rng.choice(len(src.hidden), size=max(part.size, 2), replace=len(src.hidden) < max(part.size, 2))
                t_idx = rng.choice(len(tgt.hidden), size=max(part.size, 2), replace=len(tgt.hidden) < max(part.size, 2))
                _, fs, cache_s = head_forward(src.hidden[s_idx], src.last[s_idx], params)
                _, fa, cache_a = head_forward(tgt.hidden[t_idx], tgt.last[t_idx], params)
                _, gms, gmt = mmd2(fs, fa, bandwidths, return_grad=True)
                _, gcs, gct = coral(fs, fa, return_grad=True)
                grads = backward(cache_t, dpred)
                gs = backward(cache_s, np.zeros(len(s_idx)), config.lambda_mmd * gms + config.lambda_coral * gcs)
                ga = backward(cache_a, np.zeros(len(t_idx)), config.lambda_mmd * gmt + config.lambda_coral * gct)
                grads = _merge(_merge(grads, gs), ga)
            else:
                grads = backward(cache_t, dpred, feat_grad_t)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError("non-finite adaptation gradient", epoch)
            params, state = adam_step(params, grads, state, tcfg)
        record(epoch)
        if not math.isfinite(history["mse"][-1]):
            raise DivergenceError("non-finite adaptation loss", epoch)
    history["bandwidths"] = list(bandwidths)
    return params, history


def _check_hashes(pretrained, *batches):
    for b in batches:
        if b.norm_hash != pretrained.norm_hash:
            raise DomainError(
                f"window NormStats hash {b.norm_hash} does not match checkpoint {pretrained.norm_hash}"
            )


def _source_subset(source_windows, config):
    n = len(source_windows)
    if n > config.max_source_windows:
        idx = np.sort(np.random.default_rng(config.seed).choice(n, config.max_source_windows, replace=False))
    else:
        idx = np.arange(n)
    return idx


def domain_adapt(pretrained: NetParams, source_windows, target_windows, pseudo: PseudoLabelSet, config: AdaptConfig):
    """Pseudo-label fine-tuning plus MMD/CORAL alignment of fc1 features.

    ``target_windows`` must come from unlabelled measurements. Only windows
    whose last step is marked reliable in ``pseudo.mask`` contribute to the
    regression term.
    """
    if target_windows.labels is not None:
        raise TypeError("domain_adapt takes unlabelled target windows; strip the core temperature first")
    _check_hashes(pretrained, source_windows, target_windows)
    ends = target_windows.ends
    if ends.max() >= pseudo.t_core.size:
        raise DomainError("pseudo-labels are shorter than the target windows")
    labels = pseudo.t_core[ends]
    mask = pseudo.mask[ends]
    if not mask.any():
        raise AdaptationStarvedError("no reliable target windows to adapt on")
    src = _encode_source(source_windows, pretrained, config)
    tgt = encode(target_windows, pretrained)
    return _fine_tune(pretrained, src, tgt, labels, mask, config)


def labeled_cutoff(n_steps, fraction):
    """Index of the first unlabelled step when the first ``fraction`` is labelled."""
    return int(math.floor(fraction * n_steps))


def adapt_with_labels(pretrained, target: TimeSeries, labeled_fraction, config: AdaptConfig, source_windows, norm, stride=10):
    """Fine-tune on true labels from the first ``labeled_fraction`` of the cycle.

    Windows ending inside the labelled prefix carry labels; every target
    window takes part in feature alignment. Returns adapted params.
    """
    from .datagen import windowize

    if not 0.0 < labeled_fraction <= 1.0:
        raise DomainError("labeled_fraction must lie in (0, 1]; use domain_adapt for 0")
    if not target.labeled:
        raise DomainError("adapt_with_labels needs a labelled target series")
    cutoff = labeled_cutoff(len(target), labeled_fraction)
    windows = windowize(target.measurements(), source_windows.length, stride, norm)
    _check_hashes(pretrained, source_windows, windows)
    ends = windows.ends
    labels = target.t_core[ends]
    mask = ends < cutoff
    if not mask.any():
        raise AdaptationStarvedError("labelled prefix is shorter than one window")
    src = _encode_source(source_windows, pretrained, config)
    tgt = encode(windows, pretrained)
    params, _ = _fine_tune(pretrained, src, tgt, labels, mask, config)
    return params
