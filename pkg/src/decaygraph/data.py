"""Dataset model, file formats, splitting and synthetic generation.

File formats (comma separated, newline terminated, no quoting):

* observations: header ``patient_id,time,variable,value``, time in hours
  as a decimal, variable referenced by name.
* labels: header ``patient_id,label``, label a non-negative class index.
* splits (optional): header ``patient_id,split`` with split one of
  train/val/test.

An episode is one patient's record: strictly increasing unique
timestamps, a value/mask matrix over the variable list, and the
per-observation elapsed-interval matrix used by the decay mechanism.
All observations sharing a patient timestamp merge into one time step.
Duplicate (patient, time, variable) rows resolve last-wins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .rng import SplitMix64


class ParseError(ValueError):
    """A data file line could not be parsed."""


class SchemaError(ValueError):
    """Input refers to variables outside the declared schema."""


class CompletenessError(ValueError):
    """A required record (e.g. a label) is missing."""


class DataValidationError(ValueError):
    """Loaded data violates a dataset invariant."""


class SizingError(ValueError):
    """Too few patients for the requested partition."""


class SyntheticConfigError(ValueError):
    """Invalid synthetic generator configuration."""


@dataclass
class Observation:
    patient_id: str
    time: float
    variable_index: int
    value: float


@dataclass
class Episode:
    patient_id: str
    times: np.ndarray     # (T,) strictly increasing
    values: np.ndarray    # (T, V), zero where unobserved
    mask: np.ndarray      # (T, V) in {0, 1}
    delta_t: np.ndarray   # (T, V), zero where unobserved
    label: int

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def variable_counts(self) -> np.ndarray:
        """Observation count per variable over the whole episode."""
        return self.mask.sum(axis=0)


@dataclass
class Dataset:
    variables: list[str]
    episodes: list[Episode]
    t_max: float
    n_classes: int
    norm_means: np.ndarray | None = None
    norm_stds: np.ndarray | None = None

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    def __len__(self) -> int:
        return len(self.episodes)


@dataclass
class DatasetSplits:
    train: Dataset
    val: Dataset
    test: Dataset

    def assignment(self) -> list[tuple[str, str]]:
        rows = [(ep.patient_id, name)
                for name, ds in (("train", self.train), ("val", self.val), ("test", self.test))
                for ep in ds.episodes]
        return sorted(rows)


# -- elapsed intervals ---------------------------------------------------

def delta_t_from_times(times: np.ndarray, t_max: float) -> np.ndarray:
    """Per-observation elapsed interval for one variable's timestamps.

    With both neighbours the interval is the mean of the two gaps; with
    one neighbour it is that gap; an isolated observation falls back to
    half the horizon.
    """
    times = np.asarray(times, dtype=np.float64)
    n = len(times)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        has_prev = i > 0
        has_next = i < n - 1
        if has_prev and has_next:
            out[i] = 0.5 * ((times[i] - times[i - 1]) + (times[i + 1] - times[i]))
        elif has_prev:
            out[i] = times[i] - times[i - 1]
        elif has_next:
            out[i] = times[i + 1] - times[i]
        else:
            out[i] = t_max / 2.0
    return out


def compute_delta_t(episode: Episode, variable: int, t_max: float) -> np.ndarray:
    """Elapsed intervals for one variable of one episode, in step order."""
    obs_steps = np.flatnonzero(episode.mask[:, variable])
    return delta_t_from_times(episode.times[obs_steps], t_max)


def _fill_delta_t(times: np.ndarray, mask: np.ndarray, t_max: float) -> np.ndarray:
    delta = np.zeros_like(mask, dtype=np.float64)
    for v in range(mask.shape[1]):
        obs_steps = np.flatnonzero(mask[:, v])
        if len(obs_steps):
            delta[obs_steps, v] = delta_t_from_times(times[obs_steps], t_max)
    return delta


# -- loading -------------------------------------------------------------

def _read_rows(path: str, expected_header: str) -> list[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != expected_header:
        raise ParseError(f"{path}:1: expected header {expected_header!r}, "
                         f"got {lines[0] if lines else ''!r}")
    n_fields = expected_header.count(",") + 1
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        fields = line.split(",")
        if len(fields) != n_fields:
            raise ParseError(f"{path}:{lineno}: expected {n_fields} fields, "
                             f"got {len(fields)}")
        rows.append((lineno, fields))
    return rows


def _parse_float(path: str, lineno: int, text: str, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: {what} {text!r} is not a number") from None
    if not np.isfinite(value):
        raise ParseError(f"{path}:{lineno}: {what} must be finite, got {text!r}")
    return value


def load_labels(path: str) -> dict[str, int]:
    labels: dict[str, int] = {}
    for lineno, (pid, text) in _read_rows(path, "patient_id,label"):
        try:
            label = int(text)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: label {text!r} is not an integer") from None
        if label < 0:
            raise ParseError(f"{path}:{lineno}: label must be non-negative, got {label}")
        labels[pid] = label
    return labels


def load_split_manifest(path: str) -> dict[str, str]:
    manifest: dict[str, str] = {}
    for lineno, (pid, name) in _read_rows(path, "patient_id,split"):
        if name not in ("train", "val", "test"):
            raise ParseError(f"{path}:{lineno}: split must be train/val/test, got {name!r}")
        manifest[pid] = name
    return manifest


def load_dataset(observations_path: str, labels_path: str,
                 t_max: float | None = None,
                 variables: list[str] | None = None) -> Dataset:
    """Assemble per-patient episodes from observation and label files.

    When ``variables`` is given, observations naming anything outside it
    are a schema error; otherwise the variable list is the sorted set of
    names seen in the file. When ``t_max`` is omitted it defaults to the
    largest timestamp in the file (half of it is the elapsed-interval
    fallback for isolated observations).
    """
    rows = _read_rows(observations_path, "patient_id,time,variable,value")
    labels = load_labels(labels_path)

    if variables is None:
        names = sorted({fields[2] for _, fields in rows})
    else:
        names = list(variables)
    var_index = {name: i for i, name in enumerate(names)}

    observations: list[Observation] = []
    for lineno, (pid, time_text, var_name, value_text) in rows:
        time = _parse_float(observations_path, lineno, time_text, "time")
        if time < 0:
            raise ParseError(f"{observations_path}:{lineno}: time must be "
                             f"non-negative, got {time}")
        value = _parse_float(observations_path, lineno, value_text, "value")
        if var_name not in var_index:
            raise SchemaError(f"{observations_path}:{lineno}: unknown variable "
                              f"{var_name!r}")
        observations.append(Observation(pid, time, var_index[var_name], value))

    # patient -> time -> {variable index: value}; file order keeps the
    # last duplicate row authoritative
    per_patient: dict[str, dict[float, dict[int, float]]] = {}
    max_time = 0.0
    for obs in observations:
        per_patient.setdefault(obs.patient_id, {}).setdefault(
            obs.time, {})[obs.variable_index] = obs.value
        max_time = max(max_time, obs.time)

    if t_max is None:
        t_max = max_time if per_patient else 1.0
    if t_max <= 0:
        raise DataValidationError(f"t_max must be positive, got {t_max}")

    episodes = []
    n_classes = 2
    for pid in sorted(per_patient):
        if pid not in labels:
            raise CompletenessError(f"no label for patient {pid!r}")
        by_time = per_patient[pid]
        times = np.asarray(sorted(by_time), dtype=np.float64)
        if times[-1] > t_max:
            raise DataValidationError(f"patient {pid!r} observed at t={times[-1]} "
                                      f"beyond t_max={t_max}")
        values = np.zeros((len(times), len(names)), dtype=np.float64)
        mask = np.zeros((len(times), len(names)), dtype=np.float64)
        for step, t in enumerate(times):
            for v, x in by_time[t].items():
                values[step, v] = x
                mask[step, v] = 1.0
        delta = _fill_delta_t(times, mask, t_max)
        label = labels[pid]
        n_classes = max(n_classes, label + 1)
        episodes.append(Episode(pid, times, values, mask, delta, label))
    return Dataset(variables=names, episodes=episodes, t_max=float(t_max),
                   n_classes=n_classes)


# -- normalization -------------------------------------------------------

def training_stats(train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable mean and std over observed entries of the training split.

    Variables never observed in training keep the identity transform;
    near-constant variables fall back to unit std.
    """
    v_count = train.n_variables
    means = np.zeros(v_count)
    stds = np.ones(v_count)
    for v in range(v_count):
        observed = [ep.values[ep.mask[:, v] == 1.0, v] for ep in train.episodes]
        observed = [o for o in observed if len(o)]
        if not observed:
            continue
        pooled = np.concatenate(observed)
        means[v] = pooled.mean()
        std = pooled.std()
        stds[v] = std if std >= 1e-8 else 1.0
    return means, stds


def apply_normalization(dataset: Dataset, means: np.ndarray, stds: np.ndarray) -> Dataset:
    episodes = []
    for ep in dataset.episodes:
        values = (ep.values - means[None, :]) / stds[None, :] * ep.mask
        episodes.append(replace(ep, values=values))
    return replace(dataset, episodes=episodes, norm_means=means.copy(),
                   norm_stds=stds.copy())


def denormalize(dataset: Dataset) -> Dataset:
    if dataset.norm_means is None or dataset.norm_stds is None:
        raise DataValidationError("dataset carries no normalization stats")
    episodes = []
    for ep in dataset.episodes:
        values = (ep.values * dataset.norm_stds[None, :] + dataset.norm_means[None, :]) * ep.mask
        episodes.append(replace(ep, values=values))
    return replace(dataset, episodes=episodes, norm_means=None, norm_stds=None)


def normalize_splits(splits: DatasetSplits) -> DatasetSplits:
    """Z-score every split with statistics computed on training only."""
    means, stds = training_stats(splits.train)
    return DatasetSplits(
        train=apply_normalization(splits.train, means, stds),
        val=apply_normalization(splits.val, means, stds),
        test=apply_normalization(splits.test, means, stds),
    )


# -- splitting -----------------------------------------------------------

def split_dataset(dataset: Dataset, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> DatasetSplits:
    """Seeded patient-level partition into train/val/test."""
    if any(r <= 0 for r in ratios):
        raise SizingError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SizingError(f"split ratios must sum to 1, got {sum(ratios)}")
    episodes = sorted(dataset.episodes, key=lambda ep: ep.patient_id)
    rng = SplitMix64(seed).fork("split")
    rng.shuffle(episodes)
    n = len(episodes)
    cut1 = int(np.floor(n * ratios[0]))
    cut2 = int(np.floor(n * (ratios[0] + ratios[1])))
    parts = (episodes[:cut1], episodes[cut1:cut2], episodes[cut2:])
    for name, part in zip(("train", "val", "test"), parts):
        if not part:
            raise SizingError(f"{n} patients leave the {name} split empty "
                              f"at ratios {ratios}")
    return DatasetSplits(*(replace(dataset, episodes=sorted(p, key=lambda e: e.patient_id))
                           for p in parts))


def split_by_manifest(dataset: Dataset, manifest: dict[str, str]) -> DatasetSplits:
    buckets: dict[str, list[Episode]] = {"train": [], "val": [], "test": []}
    for ep in dataset.episodes:
        if ep.patient_id not in manifest:
            raise CompletenessError(f"patient {ep.patient_id!r} missing from splits manifest")
        buckets[manifest[ep.patient_id]].append(ep)
    return DatasetSplits(*(replace(dataset, episodes=buckets[k])
                           for k in ("train", "val", "test")))


def leave_variables_out(splits: DatasetSplits, rate: float,
                        seed: int = 0) -> tuple[DatasetSplits, list[str]]:
    """Hide a seeded selection of floor(rate * V) variables from val/test.

    Hidden variables lose every observation (mask zeroed, values and
    intervals dropped) in the validation and test splits; training
    episodes are untouched. Returns the new splits and the hidden
    variable names. A rate too small to hide anything warns and returns
    the input unchanged.
    """
    if not 0.0 < rate < 1.0:
        raise DataValidationError(f"leave-out rate must be in (0, 1), got {rate}")
    v_count = splits.train.n_variables
    k = int(np.floor(rate * v_count))
    if k == 0:
        warnings.warn(f"leave-out rate {rate} hides no variable at V={v_count}",
                      stacklevel=2)
        return splits, []
    order = list(range(v_count))
    rng = SplitMix64(seed).fork("leave_variables_out")
    rng.shuffle(order)
    hidden = sorted(order[:k])

    def mask_dataset(ds: Dataset) -> Dataset:
        episodes = []
        for ep in ds.episodes:
            mask = ep.mask.copy()
            values = ep.values.copy()
            delta = ep.delta_t.copy()
            mask[:, hidden] = 0.0
            values[:, hidden] = 0.0
            delta[:, hidden] = 0.0
            episodes.append(replace(ep, values=values, mask=mask, delta_t=delta))
        return replace(ds, episodes=episodes)

    new_splits = DatasetSplits(train=splits.train, val=mask_dataset(splits.val),
                               test=mask_dataset(splits.test))
    return new_splits, [splits.train.variables[i] for i in hidden]


# -- synthetic generation --------------------------------------------------

@dataclass
class SyntheticConfig:
    """Mean-reverting latent paths observed at Poisson times.

    Each variable follows an Ornstein-Uhlenbeck process with its own
    reversion rate, so the lag autocorrelation of variable v is
    exp(-decay_rate[v] * lag). Labels come from a deterministic logistic
    rule over per-variable summary features.
    """
    n_variables: int
    n_episodes: int
    decay_rates: list[float]
    means: list[float] | None = None
    noise_scales: list[float] | None = None
    obs_per_episode: float = 20.0     # expected observations per variable
    missing_prob: float = 0.0
    horizon: float = 48.0
    label_coeffs: list | None = None  # (V,) binary or (C, V) multi-class
    label_bias: float | list = 0.0
    label_summary: str = "mean"       # mean | last | decay_mean
    n_classes: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.n_variables < 1:
            raise SyntheticConfigError(f"n_variables must be >= 1, got {self.n_variables}")
        if self.n_episodes < 1:
            raise SyntheticConfigError(f"n_episodes must be >= 1, got {self.n_episodes}")
        if len(self.decay_rates) != self.n_variables:
            raise SyntheticConfigError("decay_rates length must equal n_variables")
        if any(r <= 0 for r in self.decay_rates):
            raise SyntheticConfigError("decay rates must be positive")
        if not 0.0 <= self.missing_prob < 1.0:
            raise SyntheticConfigError(f"missing_prob must be in [0, 1), got {self.missing_prob}")
        if self.horizon <= 0:
            raise SyntheticConfigError(f"horizon must be positive, got {self.horizon}")
        if self.obs_per_episode <= 0:
            raise SyntheticConfigError("obs_per_episode must be positive")
        if self.label_summary not in ("mean", "last", "decay_mean"):
            raise SyntheticConfigError(f"unknown label summary {self.label_summary!r}")
        if self.n_classes < 2:
            raise SyntheticConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        coeffs = np.asarray(self.effective_coeffs(), dtype=np.float64)
        if self.n_classes == 2:
            if coeffs.shape != (self.n_variables,):
                raise SyntheticConfigError(f"binary label_coeffs must have shape "
                                           f"({self.n_variables},), got {coeffs.shape}")
        elif coeffs.shape != (self.n_classes, self.n_variables):
            raise SyntheticConfigError(f"multi-class label_coeffs must have shape "
                                       f"({self.n_classes}, {self.n_variables})")

    def effective_coeffs(self):
        if self.label_coeffs is not None:
            return self.label_coeffs
        return [1.0] * self.n_variables

    def effective_means(self) -> np.ndarray:
        if self.means is None:
            return np.zeros(self.n_variables)
        return np.asarray(self.means, dtype=np.float64)

    def effective_noise(self) -> np.ndarray:
        if self.noise_scales is None:
            return np.ones(self.n_variables)
        return np.asarray(self.noise_scales, dtype=np.float64)


def ou_stationary_draw(mu: float, sigma: float, rate: float, rng: SplitMix64) -> float:
    return rng.normal(mu, sigma / np.sqrt(2.0 * rate))


def ou_step(x: float, dt: float, mu: float, sigma: float, rate: float,
            rng: SplitMix64) -> float:
    """Exact mean-reverting transition over an arbitrary gap."""
    decay = np.exp(-rate * dt)
    std = sigma * np.sqrt((1.0 - decay * decay) / (2.0 * rate))
    return mu + (x - mu) * decay + std * rng.normal()


def poisson_process_times(rate: float, horizon: float, rng: SplitMix64) -> list[float]:
    times = []
    t = rng.exponential(rate)
    while t < horizon:
        times.append(t)
        t += rng.exponential(rate)
    return times


def _summary_features(cfg: SyntheticConfig,
                      observed: list[list[tuple[float, float]]]) -> np.ndarray:
    feats = np.zeros(cfg.n_variables)
    for v, obs in enumerate(observed):
        if not obs:
            continue
        if cfg.label_summary == "mean":
            feats[v] = float(np.mean([x for _, x in obs]))
        elif cfg.label_summary == "last":
            feats[v] = obs[-1][1]
        else:  # decay_mean: recent observations dominate at the variable's own rate
            rate = cfg.decay_rates[v]
            weights = np.array([np.exp(-rate * (cfg.horizon - t)) for t, _ in obs])
            values = np.array([x for _, x in obs])
            feats[v] = float((weights * values).sum() / weights.sum())
    return feats


def _label_from_features(cfg: SyntheticConfig, feats: np.ndarray) -> int:
    coeffs = np.asarray(cfg.effective_coeffs(), dtype=np.float64)
    if cfg.n_classes == 2:
        score = float(coeffs @ feats) + float(np.asarray(cfg.label_bias).reshape(-1)[0])
        return 1 if score > 0 else 0
    bias = np.asarray(cfg.label_bias, dtype=np.float64)
    if bias.ndim == 0:
        bias = np.full(cfg.n_classes, float(bias))
    return int(np.argmax(coeffs @ feats + bias))


def synthesize(config: SyntheticConfig) -> Dataset:
    """Fully seeded synthetic dataset; bit-reproducible for a fixed seed."""
    config.validate()
    root = SplitMix64(config.seed)
    mus = config.effective_means()
    sigmas = config.effective_noise()
    obs_rate = config.obs_per_episode / config.horizon

    episodes = []
    for e in range(config.n_episodes):
        ep_rng = root.fork(f"episode:{e}")
        observed: list[list[tuple[float, float]]] = []
        for v in range(config.n_variables):
            v_rng = ep_rng.fork(f"variable:{v}")
            times = poisson_process_times(obs_rate, config.horizon, v_rng)
            rate = config.decay_rates[v]
            kept: list[tuple[float, float]] = []
            x = ou_stationary_draw(mus[v], sigmas[v], rate, v_rng)
            prev_t = None
            for t in times:
                if prev_t is not None:
                    x = ou_step(x, t - prev_t, mus[v], sigmas[v], rate, v_rng)
                prev_t = t
                if v_rng.uniform() >= config.missing_prob:
                    kept.append((t, x))
            observed.append(kept)

        label = _label_from_features(config, _summary_features(config, observed))
        by_time: dict[float, dict[int, float]] = {}
        for v, obs in enumerate(observed):
            for t, x in obs:
                by_time.setdefault(t, {})[v] = x
        times_arr = np.asarray(sorted(by_time), dtype=np.float64)
        values = np.zeros((len(times_arr), config.n_variables))
        mask = np.zeros_like(values)
        for step, t in enumerate(times_arr):
            for v, x in by_time[t].items():
                values[step, v] = x
                mask[step, v] = 1.0
        delta = _fill_delta_t(times_arr, mask, config.horizon)
        episodes.append(Episode(f"synth{e:05d}", times_arr, values, mask, delta, label))

    return Dataset(variables=[f"var{v}" for v in range(config.n_variables)],
                   episodes=episodes, t_max=config.horizon, n_classes=config.n_classes)


# -- writers ---------------------------------------------------------------

def write_observations_csv(dataset: Dataset, path: str) -> None:
    lines = ["patient_id,time,variable,value"]
    for ep in dataset.episodes:
        for step, t in enumerate(ep.times):
            for v in np.flatnonzero(ep.mask[step]):
                lines.append(f"{ep.patient_id},{float(t)!r},{dataset.variables[v]},"
                             f"{float(ep.values[step, v])!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_labels_csv(dataset: Dataset, path: str) -> None:
    lines = ["patient_id,label"]
    for ep in dataset.episodes:
        lines.append(f"{ep.patient_id},{ep.label}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_splits_csv(assignment: Iterable[tuple[str, str]], path: str) -> None:
    lines = ["patient_id,split"]
    for pid, name in assignment:
        lines.append(f"{pid},{name}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
