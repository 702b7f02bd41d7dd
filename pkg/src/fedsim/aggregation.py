"""Participant selection and aggregation rules.

The server update follows the weighted form

    G' = G + (eta / n) * sum_i (L_i - G)

over the m submissions of a round, where n is the population size and eta the
server learning rate.  With eta = n / m the new global is exactly the mean of
the submitted models.  Robust alternatives (Krum, coordinate-wise median) and
the clipped/noised variant used for participant-level privacy share the same
calibration so an all-benign unanimous round moves the global identically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .params import ParameterVector

FEDAVG = "fedavg"
KRUM = "krum"
MULTI_KRUM = "multi_krum"
COORD_MEDIAN = "coord_median"
DP = "dp"
AGGREGATOR_KINDS = (FEDAVG, KRUM, MULTI_KRUM, COORD_MEDIAN, DP)


@dataclass
class Submission:
    participant_id: int
    params: ParameterVector


@dataclass
class AggregatorConfig:
    kind: str = FEDAVG
    f: int = 1            # krum variants: assumed byzantine count
    m_keep: int = 1       # multi_krum: how many best-scored models to average
    clip: float = 1.0     # dp: update norm bound S
    sigma: float = 0.0    # dp: stddev of per-coordinate Gaussian noise

    def __post_init__(self):
        if self.kind not in AGGREGATOR_KINDS:
            raise ConfigError(f"unknown aggregator {self.kind!r}")
        if self.f < 0 or self.m_keep < 1:
            raise ConfigError("f must be >= 0 and m_keep >= 1")
        if self.clip <= 0 or self.sigma < 0:
            raise ConfigError("clip must be positive and sigma non-negative")


def select_participants(n: int, m: int, rng: np.random.Generator) -> list[int]:
    """m distinct ids out of range(n), returned ascending."""
    if m < 1 or m > n:
        raise ValueError(f"cannot select {m} of {n}")
    return sorted(int(i) for i in rng.choice(n, size=m, replace=False))


def _sorted_by_id(submissions) -> list[Submission]:
    subs = sorted(submissions, key=lambda s: s.participant_id)
    if not subs:
        raise ValueError("no submissions")
    ids = [s.participant_id for s in subs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate participant ids")
    return subs


def fedavg(global_params: ParameterVector, submissions, eta: float,
           n: int) -> ParameterVector:
    """Weighted average; the sum runs in ascending participant-id order."""
    subs = _sorted_by_id(submissions)
    acc = np.zeros_like(global_params.values)
    for sub in subs:
        global_params._require_same_layout(sub.params)
        acc += sub.params.values - global_params.values
    return ParameterVector(global_params.values + (eta / n) * acc,
                           global_params.layout)


def krum_scores(submissions, f: int) -> np.ndarray:
    """Sum of the (count - f - 2) smallest squared distances to the others.

    Ordered by ascending participant id.  Requires count >= f + 3 so that at
    least one distance survives.
    """
    subs = _sorted_by_id(submissions)
    count = len(subs)
    if count < f + 3:
        raise ValueError(f"krum needs at least f + 3 = {f + 3} models, got {count}")
    stacked = np.stack([s.params.values for s in subs])
    sq_norms = np.einsum("ij,ij->i", stacked, stacked)
    dist = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (stacked @ stacked.T)
    np.maximum(dist, 0.0, out=dist)
    keep = count - f - 2
    scores = np.empty(count)
    for i in range(count):
        others = np.delete(dist[i], i)
        others.sort()
        scores[i] = others[:keep].sum()
    return scores


def krum(submissions, f: int) -> Submission:
    """The single submission with the lowest score; ties pick the lowest id."""
    subs = _sorted_by_id(submissions)
    scores = krum_scores(subs, f)
    return subs[int(np.argmin(scores))]


def multi_krum(submissions, f: int, m_keep: int) -> ParameterVector:
    """Plain mean of the m_keep best-scored submissions."""
    subs = _sorted_by_id(submissions)
    if m_keep < 1 or m_keep > len(subs):
        raise ValueError(f"m_keep={m_keep} outside [1, {len(subs)}]")
    scores = krum_scores(subs, f)
    best = np.argsort(scores, kind="stable")[:m_keep]
    stacked = np.stack([subs[i].params.values for i in best])
    return ParameterVector(stacked.mean(axis=0), subs[0].params.layout)


def coord_median(global_params: ParameterVector, submissions, eta: float,
                 n: int) -> ParameterVector:
    """Coordinate-wise median of the updates, scaled to match fedavg.

    The median update is multiplied by the submission count so that a round
    of identical updates produces exactly the fedavg result.
    """
    subs = _sorted_by_id(submissions)
    deltas = np.stack([s.params.values - global_params.values for s in subs])
    med = np.median(deltas, axis=0)
    return ParameterVector(
        global_params.values + (eta / n) * len(subs) * med, global_params.layout
    )


def clip_factor(delta_norm: float, bound: float) -> float:
    """min(1, S / ||delta||); a zero-norm update is left alone."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    if delta_norm == 0.0:
        return 1.0
    return min(1.0, bound / delta_norm)


def dp_aggregate(global_params: ParameterVector, submissions, eta: float, n: int,
                 clip: float, sigma: float,
                 rng: np.random.Generator) -> ParameterVector:
    """Norm-clip every update, average, then add Gaussian noise once.

    Each update is scaled by min(1, clip / ||delta||) before the weighted
    average; noise N(0, sigma^2) is added i.i.d. per coordinate to the
    aggregate, not to individual submissions.
    """
    subs = _sorted_by_id(submissions)
    acc = np.zeros_like(global_params.values)
    for sub in subs:
        delta = sub.params.values - global_params.values
        acc += delta * clip_factor(float(np.linalg.norm(delta)), clip)
    out = global_params.values + (eta / n) * acc
    if sigma > 0:
        out = out + sigma * rng.standard_normal(out.shape)
    return ParameterVector(out, global_params.layout)


def aggregate(global_params: ParameterVector, submissions,
              config: AggregatorConfig, eta: float, n: int,
              rng: np.random.Generator) -> ParameterVector:
    """Dispatch to the configured rule."""
    if config.kind == FEDAVG:
        return fedavg(global_params, submissions, eta, n)
    if config.kind == KRUM:
        return krum(submissions, config.f).params.copy()
    if config.kind == MULTI_KRUM:
        return multi_krum(submissions, config.f, config.m_keep)
    if config.kind == COORD_MEDIAN:
        return coord_median(global_params, submissions, eta, n)
    if config.kind == DP:
        return dp_aggregate(global_params, submissions, eta, n,
                            config.clip, config.sigma, rng)
    raise ConfigError(f"unknown aggregator {config.kind!r}")
