"""Synthetic Gaussian trial datasets and missing-data scenario injection.

Two scenarios are modeled: electrode popping (whole channels silent for an
entire trial) and eye blinking (a group of channels excised over short time
windows). Injections only flip mask bits to False; stored values are never
altered, so the complete data remain available to baselines. All generation
is seeded and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .covariance import Trial
from .errors import (
    EmptyTrialError,
    InvalidScenarioError,
    NumericInputError,
    ShapeError,
)
from .spd import SPDMatrix, _spd_values, _sym

ELECTRODE_POPPING = "electrode_popping"
EYE_BLINKING = "eye_blinking"
SCENARIO_KINDS = (ELECTRODE_POPPING, EYE_BLINKING)

# Sub-stream tags for deriving independent RNG streams from one seed.
_COV_STREAM = 101
_AFFECT_STREAM = 202


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative missing-data scenario.

    For electrode popping, ``popped_channels`` lists the channels silenced on
    affected trials. For eye blinking, ``blink_groups`` and ``blink_windows``
    pair channel groups with half-open sample intervals. ``affected_ratio``
    is the fraction of trials hit; the affected subset is a seeded uniform
    draw and is nested across increasing ratios.
    """

    kind: str
    affected_ratio: float
    seed: int
    popped_channels: tuple[int, ...] | None = None
    blink_groups: tuple[tuple[int, ...], ...] | None = None
    blink_windows: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InvalidScenarioError(f"unknown scenario kind {self.kind!r}")
        if not 0.0 <= self.affected_ratio <= 1.0:
            raise InvalidScenarioError(f"affected_ratio must be in [0, 1], got {self.affected_ratio}")
        if self.kind == ELECTRODE_POPPING:
            if not self.popped_channels:
                raise InvalidScenarioError("electrode popping needs popped_channels")
            object.__setattr__(self, "popped_channels", tuple(int(c) for c in self.popped_channels))
        else:
            if not self.blink_groups or not self.blink_windows:
                raise InvalidScenarioError("eye blinking needs blink_groups and blink_windows")
            groups = tuple(tuple(int(c) for c in g) for g in self.blink_groups)
            windows = tuple((int(a), int(b)) for a, b in self.blink_windows)
            if len(groups) != len(windows):
                raise InvalidScenarioError("groups and windows must pair up one to one")
            if any(len(g) == 0 for g in groups):
                raise InvalidScenarioError("every blink group must be non-empty")
            if any(a >= b or a < 0 for a, b in windows):
                raise InvalidScenarioError("windows must be non-empty half-open intervals [start, stop)")
            object.__setattr__(self, "blink_groups", groups)
            object.__setattr__(self, "blink_windows", windows)

    def with_ratio(self, ratio: float) -> "ScenarioSpec":
        return replace(self, affected_ratio=float(ratio))

    def to_manifest(self) -> dict:
        record = {"kind": self.kind, "affected_ratio": self.affected_ratio, "seed": self.seed}
        if self.kind == ELECTRODE_POPPING:
            record["popped_channels"] = list(self.popped_channels)
        else:
            record["blink_groups"] = [list(g) for g in self.blink_groups]
            record["blink_windows"] = [list(w) for w in self.blink_windows]
        return record

    @classmethod
    def from_manifest(cls, record: dict) -> "ScenarioSpec":
        kwargs = dict(
            kind=record["kind"],
            affected_ratio=record["affected_ratio"],
            seed=record["seed"],
        )
        if record["kind"] == ELECTRODE_POPPING:
            kwargs["popped_channels"] = tuple(record["popped_channels"])
        else:
            kwargs["blink_groups"] = tuple(tuple(g) for g in record["blink_groups"])
            kwargs["blink_windows"] = tuple(tuple(w) for w in record["blink_windows"])
        return cls(**kwargs)


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and difficulty of a synthetic multiclass Gaussian dataset.

    Class covariances share one spectrum and differ by random rotations whose
    magnitude is set by ``separation`` (0 makes all classes identical).
    Explicit ``class_covariances`` override the generated ones.
    """

    p: int
    n: int
    n_classes: int
    trials_per_class: tuple[int, ...] | int
    separation: float = 0.5
    covariance_seed: int = 0
    sampling_rate_hz: float = 128.0
    class_covariances: tuple[SPDMatrix, ...] | None = None

    def __post_init__(self):
        if self.p < 2 or self.n < 2 or self.n_classes < 2:
            raise ShapeError("need p >= 2, n >= 2 and at least two classes")
        counts = self.trials_per_class
        if isinstance(counts, int):
            counts = (counts,) * self.n_classes
        counts = tuple(int(c) for c in counts)
        if len(counts) != self.n_classes or any(c < 1 for c in counts):
            raise ShapeError("trials_per_class must give a positive count per class")
        object.__setattr__(self, "trials_per_class", counts)
        if self.class_covariances is not None:
            covs = tuple(self.class_covariances)
            if len(covs) != self.n_classes or any(c.dim != self.p for c in covs):
                raise ShapeError("need one p-dimensional covariance per class")
            object.__setattr__(self, "class_covariances", covs)

    @property
    def n_trials(self) -> int:
        return sum(self.trials_per_class)


@dataclass
class LabeledDataset:
    """Trials with class labels and channel metadata."""

    trials: list[Trial]
    labels: np.ndarray
    channel_names: tuple[str, ...]
    sampling_rate_hz: float
    scenario: ScenarioSpec | None = None
    seeds: dict | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.trials) != self.labels.size or not self.trials:
            raise ShapeError("one label per trial is required")
        shapes = {(t.n_channels, t.n_samples) for t in self.trials}
        if len(shapes) != 1:
            raise ShapeError(f"trials must share one shape, got {sorted(shapes)}")
        if len(self.channel_names) != self.trials[0].n_channels:
            raise ShapeError("one channel name per channel is required")

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def p(self) -> int:
        return self.trials[0].n_channels

    @property
    def n(self) -> int:
        return self.trials[0].n_samples

    @property
    def n_classes(self) -> int:
        return int(np.unique(self.labels).size)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(
            trials=[self.trials[i] for i in idx],
            labels=self.labels[idx],
            channel_names=self.channel_names,
            sampling_rate_hz=self.sampling_rate_hz,
            scenario=self.scenario,
            seeds=self.seeds,
        )


def sample_gaussian_trial(sigma, n: int, seed) -> Trial:
    """Fully observed trial of ``n`` independent zero-mean Gaussian columns."""
    s = _spd_values(sigma)
    if n < 1:
        raise ShapeError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(s)
    return Trial.complete(chol @ rng.standard_normal((s.shape[0], n)))


def inject_electrode_popping(trial: Trial, channels) -> Trial:
    """Mask whole channels of a trial as unobserved; values stay untouched."""
    ch = sorted({int(c) for c in channels})
    p = trial.n_channels
    if any(c < 0 or c >= p for c in ch):
        raise ShapeError(f"channels must lie in [0, {p}), got {ch}")
    if len(ch) >= p:
        raise EmptyTrialError("cannot pop every channel of a trial")
    if not ch:
        return trial
    observed = trial.observed.copy()
    observed[ch, :] = False
    return Trial(trial.values, observed)


def inject_eye_blinking(trial: Trial, groups, windows) -> Trial:
    """Mask channel-group x time-window blocks as unobserved.

    Rejects any pairing that would leave a sample column fully unobserved.
    """
    groups = [sorted({int(c) for c in g}) for g in groups]
    windows = [(int(a), int(b)) for a, b in windows]
    if len(groups) != len(windows):
        raise InvalidScenarioError("groups and windows must pair up one to one")
    p, n = trial.n_channels, trial.n_samples
    for g in groups:
        if not g or any(c < 0 or c >= p for c in g):
            raise InvalidScenarioError(f"groups must be non-empty subsets of [0, {p})")
    for a, b in windows:
        if a < 0 or b > n or a >= b:
            raise InvalidScenarioError(f"window [{a}, {b}) must lie within [0, {n})")
    if not groups:
        return trial
    observed = trial.observed.copy()
    for g, (a, b) in zip(groups, windows):
        observed[np.ix_(g, range(a, b))] = False
    bad = np.flatnonzero(~observed.any(axis=0))
    if bad.size:
        raise InvalidScenarioError(
            f"configuration leaves sample column {int(bad[0])} fully unobserved"
        )
    return Trial(trial.values, observed)


def inject_mcar(trial: Trial, rate: float, seed) -> Trial:
    """Drop entries uniformly at random, keeping at least one entry per column."""
    if not 0.0 <= rate < 1.0:
        raise NumericInputError(f"rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    observed = trial.observed & (rng.random(trial.observed.shape) >= rate)
    for j in np.flatnonzero(~observed.any(axis=0)):
        candidates = np.flatnonzero(trial.observed[:, j])
        observed[rng.choice(candidates), j] = True
    return Trial(trial.values, observed)


def _apply_to_trial(trial, scenario):
    if scenario.kind == ELECTRODE_POPPING:
        return inject_electrode_popping(trial, scenario.popped_channels)
    return inject_eye_blinking(trial, scenario.blink_groups, scenario.blink_windows)


def apply_scenario(dataset: LabeledDataset, scenario: ScenarioSpec) -> LabeledDataset:
    """Inject a scenario into ``round(affected_ratio * n_trials)`` trials.

    The affected subset comes from one seeded permutation, so subsets are
    nested as the ratio grows and curves over a ratio sweep stay comparable.
    """
    n_affected = int(round(scenario.affected_ratio * dataset.n_trials))
    order = np.random.default_rng(
        np.random.SeedSequence((scenario.seed, _AFFECT_STREAM))
    ).permutation(dataset.n_trials)
    affected = set(order[:n_affected].tolist())
    trials = [
        _apply_to_trial(t, scenario) if i in affected else t
        for i, t in enumerate(dataset.trials)
    ]
    return LabeledDataset(
        trials=trials,
        labels=dataset.labels.copy(),
        channel_names=dataset.channel_names,
        sampling_rate_hz=dataset.sampling_rate_hz,
        scenario=scenario,
        seeds=dict(dataset.seeds or {}),
    )


def class_covariances(spec: SyntheticSpec) -> tuple[SPDMatrix, ...]:
    """Per-class covariances: shared log-spaced spectrum, per-class rotations.

    Rotations are matrix exponentials of ``separation`` times a normalized
    random skew-symmetric generator, so separation 0 collapses all classes
    onto the same matrix and larger values pull the eigenbases apart.
    """
    if spec.class_covariances is not None:
        return spec.class_covariances
    rng = np.random.default_rng(np.random.SeedSequence((spec.covariance_seed, _COV_STREAM)))
    spectrum = np.exp(np.linspace(np.log(8.0), np.log(0.5), spec.p))
    covs = []
    for _ in range(spec.n_classes):
        a = rng.standard_normal((spec.p, spec.p))
        skew = (a - a.T) / 2.0
        skew /= np.linalg.norm(skew)
        rot = expm(spec.separation * skew)
        covs.append(SPDMatrix(_sym((rot * spectrum) @ rot.T)))
    return tuple(covs)


def make_synthetic_dataset(
    spec: SyntheticSpec,
    seed: int,
    scenario: ScenarioSpec | None = None,
) -> LabeledDataset:
    """Sample a labeled dataset per the spec, optionally applying a scenario.

    Each trial is drawn from its class covariance with a child seed mixed
    from ``(seed, class, trial index)``, so parallel and serial generation
    agree and equal seeds give bit-identical datasets.
    """
    covs = class_covariances(spec)
    trials = []
    labels = []
    for z in range(1, spec.n_classes + 1):
        for t in range(spec.trials_per_class[z - 1]):
            child = np.random.SeedSequence((int(seed), z, t))
            trials.append(sample_gaussian_trial(covs[z - 1], spec.n, child))
            labels.append(z)
    dataset = LabeledDataset(
        trials=trials,
        labels=np.asarray(labels),
        channel_names=tuple(f"ch{i + 1:02d}" for i in range(spec.p)),
        sampling_rate_hz=spec.sampling_rate_hz,
        seeds={"dataset": int(seed), "covariance": spec.covariance_seed},
    )
    if scenario is not None:
        dataset = apply_scenario(dataset, scenario)
    return dataset


# Named presets. "separated_2class" is calibrated so the complete-data
# baseline saturates; the *_like presets mirror common ERP / motor-imagery
# recording shapes (channel count, samples per epoch, trial count, rate).
PRESETS: dict[str, SyntheticSpec] = {
    "separated_2class": SyntheticSpec(
        p=16, n=103, n_classes=2, trials_per_class=200,
        separation=1.1, covariance_seed=2601, sampling_rate_hz=128.0,
    ),
    "p300_like": SyntheticSpec(
        p=16, n=103, n_classes=2, trials_per_class=864,
        separation=1.1, covariance_seed=2602, sampling_rate_hz=128.0,
    ),
    "mi_like": SyntheticSpec(
        p=22, n=1001, n_classes=4, trials_per_class=144,
        separation=1.1, covariance_seed=2603, sampling_rate_hz=250.0,
    ),
}


def preset(name: str) -> SyntheticSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ShapeError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def _blink_group_size(p: int) -> int:
    if p == 16:
        return 11
    if p == 22:
        return 12
    return max(2, min(p - 1, int(round(0.7 * p))))


def default_scenario(
    kind: str,
    *,
    p: int,
    n: int,
    sampling_rate_hz: float,
    ratio: float = 0.0,
    seed: int = 0,
) -> ScenarioSpec:
    """Deterministic scenario configuration for a dataset shape.

    Electrode popping silences two spread-out channels. Eye blinking excises
    three wrapped contiguous channel groups over three disjoint windows of
    roughly 200 ms at the nominal sampling rate.
    """
    if kind == ELECTRODE_POPPING:
        return ScenarioSpec(
            kind=kind,
            affected_ratio=ratio,
            seed=seed,
            popped_channels=(0, p // 2),
        )
    if kind != EYE_BLINKING:
        raise InvalidScenarioError(f"unknown scenario kind {kind!r}")
    size = _blink_group_size(p)
    groups = tuple(
        tuple(sorted((offset + j) % p for j in range(size)))
        for offset in (0, p // 3, (2 * p) // 3)
    )
    width = max(1, int(round(0.2 * sampling_rate_hz)))
    starts = [int(round(f * (n - width))) for f in (0.15, 0.45, 0.75)]
    windows = [(s, s + width) for s in starts]
    ok = all(b <= n for _, b in windows) and all(
        windows[i][1] <= windows[i + 1][0] for i in range(len(windows) - 1)
    )
    if not ok:
        # Short epochs: pack the windows back to back instead.
        width = min(width, n // 3)
        if width < 1:
            raise InvalidScenarioError(f"epoch length {n} is too short for three blink windows")
        windows = [(i * width, (i + 1) * width) for i in range(3)]
    return ScenarioSpec(
        kind=kind,
        affected_ratio=ratio,
        seed=seed,
        blink_groups=groups,
        blink_windows=tuple(windows),
    )
