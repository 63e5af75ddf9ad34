"""Source-domain data generation: profiles, scenario sweeps and windows."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SimulationError
from .sim import CellParams, CurrentProfile, Measurements, TimeSeries, simulate

PROFILE_KINDS = ("pulse_train", "random_walk", "scaled_replay", "rest")
PERTURBABLE = ("h", "c_p", "k_t", "r0", "r1")


def _charge_guard(samples, dt, capacity_ah, soc0, soc_lo, soc_hi):
    """Flip segments that would drive the coulomb-counted SOC out of range."""
    if capacity_ah is None:
        return samples
    out = samples.copy()
    soc = soc0
    scale = dt / (3600.0 * capacity_ah)
    for i, cur in enumerate(out):
        nxt = soc - cur * scale
        if nxt < soc_lo or nxt > soc_hi:
            out[i] = -cur
            nxt = soc - out[i] * scale
            if nxt < soc_lo or nxt > soc_hi:
                out[i] = 0.0
                nxt = soc
        soc = nxt
    return out


def gen_profile(
    kind,
    max_current,
    duration,
    seed=0,
    dt=1.0,
    replay_path=None,
    capacity_ah=None,
    soc0=0.8,
    soc_range=(0.1, 0.95),
) -> CurrentProfile:
    """Generate a current profile of ``duration`` seconds.

    ``pulse_train`` draws piecewise-constant segments of 1-60 s with
    amplitudes uniform in [-max, max], biased toward discharge.
    ``random_walk`` is a clipped AR(1) process. ``scaled_replay`` reads the
    ``current_a`` column of ``replay_path`` and rescales it so that its peak
    magnitude equals ``max_current``. ``rest`` is all zeros.

    When ``capacity_ah`` is given, samples that would push the SOC outside
    ``soc_range`` (starting from ``soc0``) are sign-flipped or zeroed.
    """
    if kind not in PROFILE_KINDS:
        raise DomainError(f"unknown profile kind {kind!r}")
    if max_current <= 0:
        raise DomainError("max_current must be positive")
    n = int(round(duration / dt))
    rng = np.random.default_rng(seed)

    if kind == "pulse_train":
        samples = np.empty(n)
        i = 0
        while i < n:
            seg = int(rng.integers(1, 61))
            amp = rng.uniform(0.0, max_current)
            if rng.random() < 0.4:
                amp = -amp
            if rng.random() < 0.15:
                amp = 0.0
            samples[i : i + seg] = amp
            i += seg
    elif kind == "random_walk":
        phi = 0.98
        scale = max_current * 0.12
        samples = np.empty(n)
        x = 0.0
        noise = rng.normal(0.0, scale, n)
        for i in range(n):
            x = phi * x + noise[i] + 0.002 * max_current
            x = min(max(x, -max_current), max_current)
            samples[i] = x
    elif kind == "rest":
        samples = np.zeros(n)
    else:
        if replay_path is None:
            raise DomainError("scaled_replay needs replay_path")
        raw = _read_current_column(replay_path)
        if raw.size == 0:
            raise DomainError(f"replay file {replay_path} has no samples")
        peak = np.max(np.abs(raw))
        if peak == 0:
            raise DomainError(f"replay file {replay_path} is all zeros")
        samples = raw * (max_current / peak)

    samples = _charge_guard(samples, dt, capacity_ah, soc0, *soc_range)
    samples = np.clip(samples, -max_current, max_current)
    return CurrentProfile(samples, dt=dt, max_abs=max_current)


def _read_current_column(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "current_a" not in reader.fieldnames:
            raise DomainError(f"{path}: missing current_a column")
        out = []
        for row in reader:
            try:
                out.append(float(row["current_a"]))
            except (TypeError, ValueError):
                raise DomainError(f"{path}:{reader.line_num}: bad current_a value {row['current_a']!r}") from None
        return np.array(out)


@dataclass(frozen=True)
class ProfileSpec:
    kind: str
    seed: int = 0
    max_current: float = 10.0
    duration: float = 3600.0
    replay_path: str | None = None

    @property
    def profile_id(self):
        return f"{self.kind}-{self.seed}"

    def build(self, capacity_ah=None, soc0=0.8, dt=1.0) -> CurrentProfile:
        return gen_profile(
            self.kind,
            self.max_current,
            self.duration,
            self.seed,
            dt=dt,
            replay_path=self.replay_path,
            capacity_ah=capacity_ah,
            soc0=soc0,
        )


@dataclass(frozen=True)
class ScenarioSpec:
    profile: ProfileSpec
    coolant_temp: float = 25.0
    epsilons: tuple = ()  # sorted (name, eps) pairs
    backend: str = "pa"
    seed: int = 0

    def __post_init__(self):
        eps = self.epsilons.items() if isinstance(self.epsilons, dict) else self.epsilons
        eps = tuple(sorted((str(k), float(v)) for k, v in eps))
        for name, value in eps:
            if name not in PERTURBABLE:
                raise DomainError(f"cannot perturb {name!r}")
            if not -0.9 <= value <= 0.9:
                raise DomainError(f"epsilon for {name} outside [-0.9, 0.9]")
        object.__setattr__(self, "epsilons", eps)

    @property
    def scenario_id(self):
        eps = ",".join(f"{k}{v:+.2f}" for k, v in self.epsilons if v != 0.0) or "nominal"
        return f"{self.profile.profile_id}|Tf{self.coolant_temp:+.1f}|{eps}|{self.backend}"


@dataclass(frozen=True)
class SimSettings:
    soc0: float = 0.8
    dt: float = 1.0
    fom_nodes: int = 201
    noise: object = None  # NoiseSpec or None


def simulate_scenario(spec: ScenarioSpec, nominal: CellParams, settings=SimSettings()) -> TimeSeries:
    cell = nominal.perturbed(dict(spec.epsilons))
    profile = spec.profile.build(nominal.electrical.capacity, settings.soc0, settings.dt)
    noise = settings.noise
    if noise is not None:
        noise = dataclasses.replace(noise, seed=noise.seed + spec.seed)
    try:
        return simulate(
            profile,
            cell,
            soc0=settings.soc0,
            t_f=spec.coolant_temp,
            backend=spec.backend,
            noise=noise,
            n_nodes=settings.fom_nodes,
        )
    except SimulationError as err:
        err.scenario = spec.scenario_id
        raise


@dataclass(frozen=True)
class NormStats:
    mean: tuple
    std: tuple
    label_mean: float
    label_std: float

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(x) for x in self.mean))
        object.__setattr__(self, "std", tuple(float(x) for x in self.std))
        if any(s <= 0 for s in self.std) or self.label_std <= 0:
            raise DomainError("NormStats standard deviations must be positive")

    def to_dict(self):
        return {
            "mean": list(self.mean),
            "std": list(self.std),
            "label_mean": self.label_mean,
            "label_std": self.label_std,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]), float(d["label_mean"]), float(d["label_std"]))

    @property
    def content_hash(self):
        blob = json.dumps({k: repr(v) for k, v in self.to_dict().items()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def normalize(self, features):
        return (features - np.asarray(self.mean)) / np.asarray(self.std)

    @classmethod
    def from_series(cls, series, std_floor=1e-6):
        feats = np.concatenate([s.feature_matrix() for s in series])
        labels = np.concatenate([s.t_core for s in series])
        std = np.maximum(feats.std(axis=0), std_floor)
        return cls(tuple(feats.mean(axis=0)), tuple(std), float(labels.mean()), float(max(labels.std(), std_floor)))


def _run(args):
    spec, nominal, settings = args
    return simulate_scenario(spec, nominal, settings)


def build_dataset(scenarios, nominal: CellParams, settings=SimSettings(), std_floor=1e-6, workers=1):
    """Simulate every scenario and compute feature statistics over the lot.

    Returns ``(series, norm)`` with ``series`` ordered like ``scenarios``.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise DomainError("no scenarios given")
    jobs = [(s, nominal, settings) for s in scenarios]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            series = list(pool.map(_run, jobs))
    else:
        series = [_run(j) for j in jobs]
    return series, NormStats.from_series(series, std_floor)


def sweep(profiles, coolant_temps=(25.0,), epsilons=None, backend="pa"):
    """Cartesian grid of scenarios.

    ``epsilons`` maps a parameter name to the values to sweep.
    """
    epsilons = epsilons or {}
    names = sorted(epsilons)
    grids = np.array(np.meshgrid(*[epsilons[n] for n in names], indexing="ij")).reshape(len(names), -1).T if names else [()]
    out = []
    for prof in profiles:
        for tf in coolant_temps:
            for combo in grids:
                eps = tuple(zip(names, (float(v) for v in combo)))
                out.append(ScenarioSpec(prof, float(tf), eps, backend))
    return out


@dataclass(eq=False)
class WindowBatch:
    """Fixed-length windows over one or more normalised series.

    Features are gathered lazily from the per-series arrays. ``labels`` is
    ``None`` for windows cut from unlabelled measurements.
    """

    segments: list
    seg_index: np.ndarray
    starts: np.ndarray
    length: int
    norm_hash: str
    labels: np.ndarray | None = None
    scenario_ids: list = field(default_factory=list)

    def __len__(self):
        return self.starts.size

    @property
    def ends(self):
        return self.starts + self.length - 1

    def features(self, idx=None):
        if idx is None:
            idx = np.arange(len(self))
        idx = np.asarray(idx)
        out = np.empty((idx.size, self.length, 4))
        for j, i in enumerate(idx):
            s = self.starts[i]
            out[j] = self.segments[self.seg_index[i]][s : s + self.length]
        return out

    def scenario_of(self, i):
        return self.scenario_ids[self.seg_index[i]]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return WindowBatch(
            self.segments,
            self.seg_index[idx],
            self.starts[idx],
            self.length,
            self.norm_hash,
            None if self.labels is None else self.labels[idx],
            self.scenario_ids,
        )

    def with_labels(self, labels):
        return WindowBatch(
            self.segments, self.seg_index, self.starts, self.length, self.norm_hash,
            np.asarray(labels, dtype=float), self.scenario_ids,
        )

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        if not batches:
            raise DomainError("nothing to concatenate")
        hashes = {b.norm_hash for b in batches}
        lengths = {b.length for b in batches}
        if len(hashes) != 1 or len(lengths) != 1:
            raise DomainError("cannot mix windows with different lengths or NormStats")
        segments, seg_index, starts, labels, ids = [], [], [], [], []
        labeled = all(b.labels is not None for b in batches)
        for b in batches:
            seg_index.append(b.seg_index + len(segments))
            segments.extend(b.segments)
            ids.extend(b.scenario_ids)
            starts.append(b.starts)
            if labeled:
                labels.append(b.labels)
        return cls(
            segments,
            np.concatenate(seg_index),
            np.concatenate(starts),
            batches[0].length,
            batches[0].norm_hash,
            np.concatenate(labels) if labeled else None,
            ids,
        )


def windowize(series: Measurements, w, stride, norm: NormStats, scenario_id="series") -> WindowBatch:
    """Cut ``series`` into windows of ``w`` steps, every ``stride`` steps.

    Labels (when the series carries them) are the raw core temperatures at
    each window's last step.
    """
    n = len(series)
    if w < 1 or stride < 1:
        raise DomainError("window length and stride must be positive")
    if n < w:
        raise DomainError(f"series of length {n} is shorter than window {w}")
    starts = np.arange(0, n - w + 1, stride)
    seg = norm.normalize(series.feature_matrix())
    labels = series.t_core[starts + w - 1].copy() if series.labeled else None
    return WindowBatch([seg], np.zeros(starts.size, dtype=int), starts, w, norm.content_hash, labels, [scenario_id])
