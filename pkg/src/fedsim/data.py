"""Synthetic classification tasks, non-iid partitions, and backdoor datasets.

The simulator works on Gaussian blob tasks: class means drawn uniformly on a
sphere, isotropic feature noise, balanced labels.  Participants receive
Dirichlet-skewed shards.  Backdoors come in two kinds: semantic (a naturally
occurring feature range of one class, relabeled) and pixel-pattern (a sparse
additive stamp applied to arbitrary inputs).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

SEMANTIC = "semantic"
PIXEL_PATTERN = "pixel_pattern"


@dataclass
class Dataset:
    """Feature matrix (N, d) float64 with integer labels (N,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be 1-D and match features")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx])


def concat(datasets) -> Dataset:
    datasets = [d for d in datasets if len(d) > 0]
    if not datasets:
        raise ValueError("nothing to concatenate")
    return Dataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
    )


@dataclass
class SyntheticTaskSpec:
    """Gaussian blob task: class means uniform on the radius-R sphere."""

    num_classes: int = 4
    input_dim: int = 10
    samples: int = 10_000
    radius: float = 3.0
    noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if self.samples < self.num_classes:
            raise ConfigError("need at least one sample per class")
        if self.radius <= 0 or self.noise < 0:
            raise ConfigError("radius must be positive and noise non-negative")


def class_means(spec: SyntheticTaskSpec) -> np.ndarray:
    """The class means a given spec generates, without sampling examples."""
    rng = np.random.default_rng(spec.seed)
    return _draw_means(spec, rng)


def _draw_means(spec, rng) -> np.ndarray:
    raw = rng.standard_normal((spec.num_classes, spec.input_dim))
    return spec.radius * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def gen_blobs(spec: SyntheticTaskSpec) -> Dataset:
    """Sample the task.  Label counts are balanced within one example."""
    rng = np.random.default_rng(spec.seed)
    means = _draw_means(spec, rng)
    base, extra = divmod(spec.samples, spec.num_classes)
    counts = [base + (1 if k < extra else 0) for k in range(spec.num_classes)]
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), counts)
    features = means[labels] + spec.noise * rng.standard_normal(
        (spec.samples, spec.input_dim)
    )
    order = rng.permutation(spec.samples)
    return Dataset(features[order], labels[order])


@dataclass
class Partition:
    """A disjoint assignment of dataset rows to participants."""

    data: Dataset
    indices: tuple

    @property
    def n(self) -> int:
        return len(self.indices)

    def shard(self, i: int) -> Dataset:
        return self.data.subset(self.indices[i])

    def sizes(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.indices], dtype=np.int64)


def dirichlet_partition(data: Dataset, n: int, alpha: float, seed) -> Partition:
    """Split a dataset across n participants with Dirichlet class skew.

    For each class, per-participant proportions are drawn from
    Dirichlet(alpha * 1_n) and that class's examples are assigned by a
    multinomial draw over the proportions.  Small alpha means heavy skew.
    """
    if n < 1:
        raise ValueError("need at least one participant")
    if n > len(data):
        raise ValueError("more participants than examples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    assigned = [[] for _ in range(n)]
    for k in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == k)
        rng.shuffle(idx)
        proportions = rng.dirichlet(np.full(n, alpha))
        counts = rng.multinomial(len(idx), proportions)
        stop = np.cumsum(counts)
        start = stop - counts
        for i in range(n):
            assigned[i].append(idx[start[i]:stop[i]])
    indices = tuple(np.sort(np.concatenate(parts)) for parts in assigned)
    return Partition(data, indices)


@dataclass
class BackdoorSpec:
    """Description of one backdoor task.

    Semantic kind: examples of source_class whose feature_index exceeds
    threshold are relabeled to target_label; by default they exist only in
    the attacker's dataset.  With leak_to_benign, true-labeled copies of the
    non-holdout matches stay in the benign pool.  Pixel-pattern kind: a
    sparse additive stamp (coordinate -> offset) applied to arbitrary
    inputs, relabeled.

    The eval set holds `holdout_count` examples never used in training plus
    `eval_augmentations` jittered copies (feature noise sigma `eval_jitter`).
    """

    kind: str = SEMANTIC
    target_label: int = 0
    source_class: int = 1
    feature_index: int = 0
    threshold: float = 0.0
    pattern: dict = field(default_factory=dict)
    holdout_count: int = 3
    eval_augmentations: int = 1000
    eval_jitter: float = 0.05
    leak_to_benign: bool = False

    def __post_init__(self):
        if self.kind not in (SEMANTIC, PIXEL_PATTERN):
            raise ConfigError(f"unknown backdoor kind {self.kind!r}")
        if self.holdout_count < 1:
            raise ConfigError("holdout_count must be positive")
        if self.eval_augmentations < 0 or self.eval_jitter < 0:
            raise ConfigError("eval augmentation settings must be non-negative")


def semantic_mask(data: Dataset, spec: BackdoorSpec) -> np.ndarray:
    """Boolean mask of rows matching the semantic predicate."""
    return (data.labels == spec.source_class) & (
        data.features[:, spec.feature_index] > spec.threshold
    )


def jitter(data: Dataset, sigma: float, rng: np.random.Generator) -> Dataset:
    """Fresh copy with Gaussian feature noise; labels unchanged."""
    if sigma == 0:
        return Dataset(data.features.copy(), data.labels.copy())
    noise = sigma * rng.standard_normal(data.features.shape)
    return Dataset(data.features + noise, data.labels.copy())


def _augmented_eval(base: Dataset, spec: BackdoorSpec, rng) -> Dataset:
    """Holdouts plus jittered copies, cycling through the holdouts."""
    if spec.eval_augmentations == 0:
        return base
    picks = np.arange(spec.eval_augmentations, dtype=np.int64) % len(base)
    copies = jitter(base.subset(picks), spec.eval_jitter, rng)
    return concat([base, copies])


def make_semantic_backdoor(data: Dataset, spec: BackdoorSpec, rng):
    """Split a dataset around a semantic backdoor.

    Returns (backdoor_train, backdoor_eval, remaining).  By default every
    matching example is removed from `remaining`: the backdoor feature belongs
    to the attacker alone.  With leak_to_benign the non-holdout matches stay
    in `remaining` under their true labels, so benign participants keep
    training on honest versions of the trigger.  Holdout (eval) examples are
    always removed.  All backdoor examples carry target_label.
    """
    if spec.kind != SEMANTIC:
        raise ConfigError("spec is not a semantic backdoor")
    if spec.feature_index < 0 or spec.feature_index >= data.dim:
        raise ConfigError("feature_index out of range")
    match_idx = np.flatnonzero(semantic_mask(data, spec))
    if len(match_idx) < spec.holdout_count + 1:
        raise ConfigError(
            f"predicate matches {len(match_idx)} examples, need more than "
            f"holdout_count={spec.holdout_count}"
        )
    holdout = np.sort(rng.choice(match_idx, size=spec.holdout_count, replace=False))
    train_idx = np.setdiff1d(match_idx, holdout)
    target = np.full(len(train_idx), spec.target_label, dtype=np.int64)
    bd_train = Dataset(data.features[train_idx], target)
    eval_base = Dataset(
        data.features[holdout],
        np.full(len(holdout), spec.target_label, dtype=np.int64),
    )
    bd_eval = _augmented_eval(eval_base, spec, rng)
    drop = holdout if spec.leak_to_benign else match_idx
    keep = np.setdiff1d(np.arange(len(data)), drop)
    return bd_train, bd_eval, data.subset(keep)


def apply_pixel_pattern(x: np.ndarray, spec: BackdoorSpec) -> np.ndarray:
    """Stamp the sparse additive pattern onto a copy of one feature vector."""
    if spec.kind != PIXEL_PATTERN:
        raise ConfigError("spec is not a pixel-pattern backdoor")
    out = np.array(x, dtype=np.float64, copy=True)
    for index, offset in spec.pattern.items():
        i = int(index)
        if i < 0 or i >= out.shape[-1]:
            raise ConfigError(f"pattern index {i} out of range")
        out[i] += float(offset)
    return out


def _stamp_all(data: Dataset, spec: BackdoorSpec) -> Dataset:
    stamped = np.stack([apply_pixel_pattern(x, spec) for x in data.features])
    return Dataset(stamped, np.full(len(data), spec.target_label, dtype=np.int64))


def make_pixel_backdoor(data: Dataset, spec: BackdoorSpec, train_count: int, rng):
    """Build pixel-pattern backdoor sets from arbitrary examples.

    Returns (backdoor_train, backdoor_eval, remaining).  Eval holdouts are
    removed from `remaining`; the stamped training copies are drawn from
    examples that stay in the benign pool, since unstamped originals are
    ordinary data.
    """
    if spec.kind != PIXEL_PATTERN:
        raise ConfigError("spec is not a pixel-pattern backdoor")
    if train_count < 1:
        raise ConfigError("train_count must be positive")
    if spec.holdout_count + train_count > len(data):
        raise ConfigError("not enough examples for holdout plus train sets")
    picks = rng.choice(len(data), size=spec.holdout_count + train_count, replace=False)
    holdout, train = picks[:spec.holdout_count], picks[spec.holdout_count:]
    bd_train = _stamp_all(data.subset(train), spec)
    bd_eval = _augmented_eval(_stamp_all(data.subset(holdout), spec), spec, rng)
    keep = np.setdiff1d(np.arange(len(data)), holdout)
    return bd_train, bd_eval, data.subset(keep)


def replace_in_batch(c: int, batch: Dataset, backdoor: Dataset,
                     rng: np.random.Generator) -> Dataset:
    """Replace c batch rows (distinct positions) with draws from the backdoor set.

    Draws are with replacement; the input batch is not modified.
    """
    return mix_into_batch(c, batch, [backdoor], rng)


def mix_into_batch(c: int, batch: Dataset, backdoor_sets, rng) -> Dataset:
    """replace_in_batch over several backdoor sets, round-robin across them.

    With c >= len(backdoor_sets) every set lands in every batch, which keeps
    multi-backdoor training balanced.
    """
    if c < 0 or c > len(batch):
        raise ValueError(f"c={c} outside [0, {len(batch)}]")
    if any(len(b) == 0 for b in backdoor_sets):
        raise ValueError("empty backdoor set")
    features = batch.features.copy()
    labels = batch.labels.copy()
    if c == 0:
        return Dataset(features, labels)
    positions = rng.choice(len(batch), size=c, replace=False)
    for i, pos in enumerate(positions):
        source = backdoor_sets[i % len(backdoor_sets)]
        j = int(rng.integers(len(source)))
        features[pos] = source.features[j]
        labels[pos] = source.labels[j]
    return Dataset(features, labels)


def save_csv(data: Dataset, path) -> None:
    """Write a dataset as CSV with header f0..f{d-1},label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(data.dim)] + ["label"])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"empty dataset file {path}")
    header = rows[0]
    if header[-1] != "label" or len(header) < 2:
        raise ValueError("expected header f0..f{d-1},label")
    dim = len(header) - 1
    features = np.empty((len(rows) - 1, dim))
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    for r, row in enumerate(rows[1:]):
        features[r] = [float(v) for v in row[:dim]]
        labels[r] = int(row[dim])
    return Dataset(features, labels)
