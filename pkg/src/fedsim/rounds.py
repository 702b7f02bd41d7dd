"""One federated round: selection, local work, detection, aggregation, metrics.

RNG discipline: every random decision draws from a stream derived from
(master seed, purpose tag, round, participant), so a round's outcome depends
only on those coordinates and reruns are bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import detect, nn
from .aggregation import AggregatorConfig, Submission, aggregate, select_participants
from .data import Dataset
from .errors import ConfigError
from .params import ParameterVector

# purpose tags for derived rng streams
STREAM_SELECT = 1
STREAM_TRAIN = 2
STREAM_ATTACK = 3
STREAM_DP = 4
STREAM_INIT = 5
STREAM_ROLES = 6
STREAM_BACKDOOR = 7
STREAM_PARTITION = 8
STREAM_SWEEP = 9


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, *key); order of use elsewhere is moot."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))


@dataclass
class RoundConfig:
    n: int = 100              # population size
    m: int = 10               # participants per round
    eta: float = 1.0          # server learning rate
    epochs: int = 2           # benign local epochs
    lr: float = 0.1
    batch_size: int = 32
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)

    def __post_init__(self):
        if self.m < 1 or self.m > self.n:
            raise ConfigError(f"m={self.m} outside [1, n={self.n}]")
        if self.eta <= 0 or self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("bad round hyperparameters")


@dataclass
class RoundState:
    t: int
    global_params: ParameterVector
    master_seed: int


@dataclass
class DetectorConfig:
    name: str                        # norm | kmeans_norm | cosine | accuracy_audit
    bound: float = 1.0               # norm detector
    threshold: float = 0.99          # cosine detector
    floor: float = 0.3               # accuracy audit
    ratio: float = 3.0               # kmeans separation
    k: int = 2

    def __post_init__(self):
        if self.name not in ("norm", "kmeans_norm", "cosine", "accuracy_audit"):
            raise ConfigError(f"unknown detector {self.name!r}")


@dataclass
class EvalSuite:
    """Everything run_round needs to score a round."""

    template: nn.Model
    main_test: Dataset
    backdoor_evals: tuple = ()       # ((Dataset, target_label), ...)
    detectors: tuple = ()            # DetectorConfig entries
    exclude_flagged: bool = False


@dataclass
class MetricsRecord:
    round: int
    main_acc: float
    backdoor_acc: tuple
    attacker_present: bool
    max_update_norm: float
    median_update_norm: float
    aggregator: str
    gamma: float | None
    flags: str
    # telemetry beyond the CSV columns
    verdicts: tuple = ()
    update_norms: tuple = ()         # ((participant_id, norm), ...)
    attacker_delta_norm: float | None = None


def backdoor_accuracy(model: nn.Model, eval_set: Dataset, target: int) -> float:
    """Fraction of eval inputs the model classifies as the target label."""
    if len(eval_set) == 0:
        raise ValueError("empty eval set")
    return float(np.mean(nn.predict(model, eval_set.features) == target))


def run_detectors(submissions, global_params, suite: EvalSuite):
    verdicts = []
    for d in suite.detectors:
        if d.name == "norm":
            verdicts.extend(detect.norm_detector(submissions, global_params, d.bound))
        elif d.name == "kmeans_norm":
            verdicts.extend(detect.kmeans_norm_detector(
                submissions, global_params, d.k, separation_ratio=d.ratio))
        elif d.name == "cosine":
            verdicts.extend(detect.cosine_detector(submissions, global_params,
                                                   d.threshold))
        elif d.name == "accuracy_audit":
            verdicts.extend(detect.accuracy_audit(submissions, suite.template,
                                                  suite.main_test, d.floor))
    return verdicts


def _force_include(selected: list[int], controlled) -> list[int]:
    """Swap in every missing controlled id, evicting the highest benign ids."""
    missing = sorted(set(controlled) - set(selected))
    if not missing:
        return selected
    if len(controlled) > len(selected):
        raise ValueError("more controlled ids than selection slots")
    kept = set(selected)
    benign = sorted((pid for pid in kept if pid not in set(controlled)),
                    reverse=True)
    for evicted, _ in zip(benign, missing):
        kept.remove(evicted)
    kept.update(missing)
    return sorted(kept)


def run_round(state: RoundState, shards, round_cfg: RoundConfig, suite: EvalSuite,
              attacker=None, force_attacker: bool = False):
    """Advance one round; returns (new_state, MetricsRecord).

    `shards` maps participant id -> Dataset.  When `attacker` is given, its
    controlled ids that land in the selection submit attack shares; everyone
    else trains honestly.  A participant whose shard is empty submits the
    global weights unchanged.  `force_attacker` swaps the controlled ids into
    the selection, modeling rounds where the adversary is known to appear.
    """
    seed, t = state.master_seed, state.t
    g = state.global_params
    selected = select_participants(round_cfg.n, round_cfg.m,
                                   substream(seed, STREAM_SELECT, t))
    if attacker is not None and force_attacker:
        selected = _force_include(selected, attacker.controlled)

    attack_ids = []
    if attacker is not None:
        attack_ids = sorted(set(selected) & attacker.controlled)

    submissions = []
    for pid in selected:
        if pid in attack_ids:
            continue
        shard = shards[pid]
        if len(shard) == 0:
            local = g.copy()
        else:
            local = nn.train_local(nn.with_params(suite.template, g), shard,
                                   round_cfg.epochs, round_cfg.lr,
                                   round_cfg.batch_size,
                                   substream(seed, STREAM_TRAIN, t, pid))
        submissions.append(Submission(pid, local))

    gamma = None
    delta_norm = None
    if attack_ids:
        shares = attacker.round_submissions(suite.template, g, shards, attack_ids,
                                            t, substream(seed, STREAM_ATTACK, t))
        for pid in sorted(shares):
            submissions.append(Submission(pid, shares[pid]))
        gamma = attacker.last_gamma
        delta_norm = attacker.last_delta_norm
    submissions.sort(key=lambda s: s.participant_id)

    verdicts = run_detectors(submissions, g, suite)
    flagged_ids = {v.participant_id for v in verdicts if v.flagged}
    kept = submissions
    if suite.exclude_flagged and flagged_ids:
        kept = [s for s in submissions if s.participant_id not in flagged_ids]

    if kept:
        new_global = aggregate(g, kept, round_cfg.aggregator, round_cfg.eta,
                               round_cfg.n, substream(seed, STREAM_DP, t))
    else:
        new_global = g.copy()

    norms = [(s.participant_id,
              float(np.linalg.norm(s.params.values - g.values)))
             for s in submissions]
    norm_values = [v for _, v in norms]
    model = nn.with_params(suite.template, new_global)
    flags = ";".join(f"{v.detector}:{v.participant_id}"
                     for v in verdicts if v.flagged)
    record = MetricsRecord(
        round=t,
        main_acc=nn.accuracy(model, suite.main_test),
        backdoor_acc=tuple(backdoor_accuracy(model, ds, target)
                           for ds, target in suite.backdoor_evals),
        attacker_present=bool(attack_ids),
        max_update_norm=float(np.max(norm_values)),
        median_update_norm=float(np.median(norm_values)),
        aggregator=round_cfg.aggregator.kind,
        gamma=gamma,
        flags=flags,
        verdicts=tuple(verdicts),
        update_norms=tuple(norms),
        attacker_delta_norm=delta_norm,
    )
    return RoundState(t + 1, new_global, seed), record
