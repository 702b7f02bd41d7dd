"""Anomaly detectors over submitted models, and the differentiable evasion loss.

Detectors only flag; whether flagged submissions are excluded from
aggregation is the harness's call.  Scores are defined so that higher means
more anomalous only where noted; each verdict carries its raw score.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset
from .params import ParameterVector


@dataclass
class DetectorVerdict:
    detector: str
    participant_id: int
    score: float
    flagged: bool


def _update_norms(submissions, global_params):
    return [
        (s, float(np.linalg.norm(s.params.values - global_params.values)))
        for s in submissions
    ]


def norm_detector(submissions, global_params: ParameterVector,
                  bound: float) -> list[DetectorVerdict]:
    """Flag submissions whose update norm strictly exceeds the bound."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    return [
        DetectorVerdict("norm", s.participant_id, norm, norm > bound)
        for s, norm in _update_norms(submissions, global_params)
    ]


def _lloyd_1d(values: np.ndarray, k: int, iters: int):
    """1-D k-means with centroids seeded evenly from min to max."""
    centroids = np.linspace(values.min(), values.max(), k)
    assign = None
    for _ in range(iters):
        new_assign = np.argmin(np.abs(values[:, None] - centroids[None, :]), axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = values[assign == j]
            if len(members):
                centroids[j] = members.mean()
    return centroids, assign


def kmeans_norm_detector(submissions, global_params: ParameterVector, k: int = 2,
                         iters: int = 50,
                         separation_ratio: float = 3.0) -> list[DetectorVerdict]:
    """Cluster update norms; flag the top cluster when it sits far above the rest.

    Members of the highest-centroid cluster are flagged only when that
    centroid exceeds separation_ratio times the lowest centroid.
    """
    if k < 2 or separation_ratio <= 1:
        raise ValueError("need k >= 2 and separation_ratio > 1")
    pairs = _update_norms(submissions, global_params)
    norms = np.array([norm for _, norm in pairs])
    centroids, assign = _lloyd_1d(norms, k, iters)
    top = int(np.argmax(centroids))
    low = float(np.min(centroids))
    separated = centroids[top] > separation_ratio * max(low, 1e-12)
    return [
        DetectorVerdict("kmeans_norm", s.participant_id, float(norms[i]),
                        bool(separated and assign[i] == top))
        for i, (s, _) in enumerate(pairs)
    ]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_detector(submissions, global_params: ParameterVector,
                    threshold: float) -> list[DetectorVerdict]:
    """Score each update's cosine to the global weights; flag above threshold.

    The score is invariant to positive scaling of the update, which is what
    makes it interesting against scaled submissions.
    """
    g = global_params.values
    out = []
    for s in submissions:
        score = _cosine(s.params.values - g, g)
        out.append(DetectorVerdict("cosine", s.participant_id, score,
                                   score > threshold))
    return out


def pairwise_cosine_stats(submissions, global_params: ParameterVector):
    """Mean and population variance of pairwise update cosines."""
    if len(submissions) < 2:
        raise ValueError("need at least two submissions")
    g = global_params.values
    deltas = [s.params.values - g for s in submissions]
    cos = [
        _cosine(deltas[i], deltas[j])
        for i in range(len(deltas))
        for j in range(i + 1, len(deltas))
    ]
    return float(np.mean(cos)), float(np.var(cos))


def cosine_anomaly_loss(params: ParameterVector,
                        global_params: ParameterVector) -> float:
    """1 - cos(L, G) over the full weight vectors.  Zero when aligned."""
    return 1.0 - _cosine(params.values, global_params.values)


def cosine_anomaly_grad(params: ParameterVector,
                        global_params: ParameterVector) -> ParameterVector:
    """Gradient of cosine_anomaly_loss with respect to params.

    Zero-norm inputs have no useful direction; the gradient is zero there by
    convention.
    """
    l, g = params.values, global_params.values
    nl, ng = float(np.linalg.norm(l)), float(np.linalg.norm(g))
    if nl == 0.0 or ng == 0.0:
        return ParameterVector(np.zeros_like(l), params.layout)
    cos = float(np.dot(l, g)) / (nl * ng)
    grad = cos * l / (nl * nl) - g / (nl * ng)
    return ParameterVector(grad, params.layout)


def distance_anomaly_loss(params: ParameterVector,
                          global_params: ParameterVector) -> float:
    """Half squared distance to the global weights."""
    d = params.values - global_params.values
    return 0.5 * float(np.dot(d, d))


def distance_anomaly_grad(params: ParameterVector,
                          global_params: ParameterVector) -> ParameterVector:
    return ParameterVector(params.values - global_params.values, params.layout)


def accuracy_audit(submissions, template, audit_data: Dataset,
                   floor: float) -> list[DetectorVerdict]:
    """Flag submitted models whose main-task accuracy falls below the floor."""
    if not 0.0 <= floor <= 1.0:
        raise ValueError("floor must be in [0, 1]")
    out = []
    for s in submissions:
        acc = nn.accuracy(nn.with_params(template, s.params), audit_data)
        out.append(DetectorVerdict("accuracy_audit", s.participant_id, acc,
                                   acc < floor))
    return out
