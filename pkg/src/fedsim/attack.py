"""Model-replacement backdoor attacks.

The attacker receives the current global weights, trains a backdoored model X
on a mix of its benign shard and backdoor examples, then scales the deviation
before submitting:

    submission = gamma * (X - G) + G

With gamma = n / eta the aggregation cancels the benign contributions in
expectation and the next global lands (near) X, so a single submission in a
single round plants the backdoor.  Strategy variants differ in how X is
trained and how gamma is chosen:

- naive_poison: submit X unscaled (gamma 1), the weak baseline.
- train_and_scale: pick gamma = S / ||X - G|| to sit exactly at a known or
  estimated norm bound S.
- constrain_and_scale: blend an anomaly loss into training so the scaled
  submission stays inconspicuous, then scale by a configured gamma.

When several controlled participants land in one round, the deviation is
split into z equal shares so the shares sum to one replacement.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import detect, nn
from .data import Dataset, concat, jitter, mix_into_batch
from .errors import ConfigError
from .params import ParameterVector

NAIVE_POISON = "naive_poison"
TRAIN_AND_SCALE = "train_and_scale"
CONSTRAIN_AND_SCALE = "constrain_and_scale"
STRATEGIES = (NAIVE_POISON, TRAIN_AND_SCALE, CONSTRAIN_AND_SCALE)

# name -> (loss, grad) over (params, global_params)
ANOMALY_LOSSES = {
    "cosine": (detect.cosine_anomaly_loss, detect.cosine_anomaly_grad),
    "distance": (detect.distance_anomaly_loss, detect.distance_anomaly_grad),
}


@dataclass
class AttackConfig:
    strategy: str = TRAIN_AND_SCALE
    gamma: float | None = None        # fixed scale; None = estimate by doubling
    gamma_max: float = 1024.0         # cap for the doubling estimator
    gamma_target: float = 0.9         # backdoor accuracy that stops doubling
    alpha: float = 1.0                # class-loss weight in the blended objective
    epsilon: float = 0.02             # early stop when backdoor loss drops below
    epochs: int = 10
    lr: float = 0.05
    step_sched: tuple = (2, 4, 6, 8)  # epochs after which lr divides by step_rate
    step_rate: float = 10.0
    c: int = 20                       # poisoned rows per training batch
    batch_size: int = 64
    train_noise: float = 0.05         # feature jitter on poisoned rows, per epoch
    norm_bound: float | None = None   # S for train_and_scale / splitting
    bound_probes: int = 0             # > 0: estimate S from this many probe models
    bound_quantile: float = 0.95
    anomaly: str = "cosine"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown attack strategy {self.strategy!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must be in [0, 1]")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.epochs < 0 or self.lr < 0 or self.c < 0 or self.batch_size < 1:
            raise ConfigError("bad training hyperparameters")
        if self.step_rate <= 0 or self.gamma_max <= 0:
            raise ConfigError("step_rate and gamma_max must be positive")
        if self.norm_bound is not None and self.norm_bound <= 0:
            raise ConfigError("norm_bound must be positive")
        if self.anomaly not in ANOMALY_LOSSES:
            raise ConfigError(f"no differentiable anomaly loss named {self.anomaly!r}")
        self.step_sched = tuple(int(e) for e in self.step_sched)


@dataclass
class AttackerState:
    gamma: float = 1.0
    bound: float | None = None
    attacked: bool = False
    history: list = field(default_factory=list)  # (round, observed backdoor acc)


def _backdoor_converged(template, x: ParameterVector, backdoor_sets,
                        epsilon: float) -> bool:
    model = nn.with_params(template, x)
    return all(nn.mean_loss(model, bd) < epsilon for bd in backdoor_sets)


def train_backdoored(template, global_params: ParameterVector, benign: Dataset,
                     backdoor_sets, cfg: AttackConfig, rng: np.random.Generator,
                     anomaly=None) -> ParameterVector:
    """The attacker's training loop; returns the unscaled model X.

    Starts at the global weights and runs minibatch SGD where every batch has
    c rows swapped for (noised) backdoor examples.  The objective is
    alpha * class loss + (1 - alpha) * anomaly(X, G); training stops early
    once the class loss on every clean backdoor set falls below epsilon, the
    check running at the top of each epoch.  The learning rate divides by
    step_rate after each epoch listed in step_sched.
    """
    if len(benign) == 0:
        raise ValueError("attacker has no benign data")
    if not backdoor_sets or any(len(b) == 0 for b in backdoor_sets):
        raise ValueError("need non-empty backdoor sets")
    anomaly_grad = None
    if cfg.alpha < 1.0:
        if anomaly is None:
            anomaly = ANOMALY_LOSSES[cfg.anomaly]
        anomaly_grad = anomaly[1]
    x = global_params.copy()
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        if _backdoor_converged(template, x, backdoor_sets, cfg.epsilon):
            break
        noised = [jitter(bd, cfg.train_noise, rng) for bd in backdoor_sets]
        for idx in nn.batch_order(len(benign), cfg.batch_size, rng):
            batch = benign.subset(idx)
            batch = mix_into_batch(min(cfg.c, len(batch)), batch, noised, rng)
            g = nn.grad(nn.with_params(template, x), batch)
            if anomaly_grad is not None:
                g = cfg.alpha * g + (1.0 - cfg.alpha) * anomaly_grad(x, global_params)
            x = nn.sgd_step(x, g, lr)
        if (epoch + 1) in cfg.step_sched:
            lr /= cfg.step_rate
    return x


def naive_poison(template, global_params: ParameterVector, benign: Dataset,
                 backdoor_sets, cfg: AttackConfig,
                 rng: np.random.Generator) -> ParameterVector:
    """Poisoned local training with no scaling; the submission is X itself."""
    pure = cfg if cfg.alpha == 1.0 else dc_replace(cfg, alpha=1.0)
    return train_backdoored(template, global_params, benign, backdoor_sets,
                            pure, rng)


def replacement_update(x: ParameterVector, global_params: ParameterVector,
                       gamma: float) -> ParameterVector:
    """gamma * (X - G) + G.  gamma = n / eta makes aggregation output X."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return gamma * (x - global_params) + global_params


def train_and_scale(template, global_params: ParameterVector, benign: Dataset,
                    backdoor_sets, cfg: AttackConfig, bound: float,
                    rng: np.random.Generator):
    """Train X, then scale its deviation to sit exactly at the norm bound.

    Returns (submission, gamma).  A degenerate X equal to G cannot be scaled;
    the global weights come back unchanged with gamma 0 and a warning.
    """
    if bound <= 0:
        raise ValueError("bound must be positive")
    x = naive_poison(template, global_params, benign, backdoor_sets, cfg, rng)
    dev = float(np.linalg.norm(x.values - global_params.values))
    if dev == 0.0:
        warnings.warn("backdoor training left the global weights unchanged")
        return global_params.copy(), 0.0
    gamma = bound / dev
    return replacement_update(x, global_params, gamma), gamma


def constrain_and_scale(template, global_params: ParameterVector, benign: Dataset,
                        backdoor_sets, cfg: AttackConfig, gamma: float,
                        rng: np.random.Generator):
    """Train X against the blended objective, then scale by the given gamma.

    Returns (submission, gamma).  With alpha = 1 the objective reduces to the
    plain class loss, which makes this naive_poison followed by scaling.
    """
    x = train_backdoored(template, global_params, benign, backdoor_sets, cfg, rng,
                         anomaly=ANOMALY_LOSSES[cfg.anomaly])
    return replacement_update(x, global_params, gamma), gamma


def split_update(x: ParameterVector, global_params: ParameterVector,
                 bound: float | None, z: int, gamma_full: float) -> list:
    """z equal shares of one replacement, each scaled by

        gamma_z = min(gamma_full / z, bound / ||X - G||)

    so colluding participants stay under the norm bound while their shares
    sum to at most one full replacement.  bound None means no norm cap.
    """
    if z < 1:
        raise ValueError("z must be at least 1")
    if gamma_full <= 0:
        raise ValueError("gamma_full must be positive")
    dev = float(np.linalg.norm(x.values - global_params.values))
    if dev == 0.0:
        return [global_params.copy() for _ in range(z)]
    gamma_z = gamma_full / z
    if bound is not None:
        gamma_z = min(gamma_z, bound / dev)
    share = replacement_update(x, global_params, gamma_z)
    return [share.copy() for _ in range(z)]


def update_gamma(state: AttackerState, observed_acc: float, target: float,
                 cap: float) -> None:
    """Doubling schedule: failure doubles gamma (up to cap), success holds.

    Only reacts once a previous attack round exists to observe; the first
    submission goes out with the initial gamma.
    """
    if state.attacked and observed_acc < target:
        state.gamma = min(state.gamma * 2.0, cap)


def estimate_norm_bound(template, global_params: ParameterVector, benign: Dataset,
                        probes: int, quantile: float, epochs: int, lr: float,
                        batch_size: int, rng: np.random.Generator) -> float:
    """Estimate the norm bound S the server is likely to tolerate.

    Trains `probes` throwaway local models on bootstrap resamples of the
    attacker's own benign data, mimicking benign hyperparameters, and takes
    the given quantile of their update norms.
    """
    if probes < 2:
        raise ConfigError("need at least two probes")
    if not 0.0 <= quantile <= 1.0:
        raise ConfigError("quantile must be in [0, 1]")
    if len(benign) == 0:
        raise ConfigError("no data to probe with")
    norms = []
    model = nn.with_params(template, global_params)
    for _ in range(probes):
        sample = benign.subset(rng.integers(0, len(benign), size=len(benign)))
        local = nn.train_local(model, sample, epochs, lr, batch_size, rng)
        norms.append(float(np.linalg.norm(local.values - global_params.values)))
    return float(np.quantile(norms, quantile))


@dataclass
class BenignHyperparams:
    """What the attacker assumes about benign local training."""

    epochs: int = 2
    lr: float = 0.1
    batch_size: int = 32


class Attacker:
    """One adversary controlling a fixed set of participant ids.

    Keeps the doubling-estimator state across rounds and turns the selected
    controlled ids of a round into submissions: either independent naive
    models or split shares of a single replacement.
    """

    def __init__(self, cfg: AttackConfig, controlled, backdoor_trains,
                 backdoor_evals, gamma_full: float,
                 benign_hparams: BenignHyperparams | None = None):
        if not controlled:
            raise ConfigError("attacker controls no participants")
        if len(backdoor_trains) != len(backdoor_evals) or not backdoor_trains:
            raise ConfigError("need matching backdoor train and eval sets")
        self.cfg = cfg
        self.controlled = frozenset(int(i) for i in controlled)
        self.backdoor_trains = list(backdoor_trains)
        self.backdoor_evals = list(backdoor_evals)  # (Dataset, target_label)
        self.gamma_full = float(gamma_full)
        self.benign_hparams = benign_hparams or BenignHyperparams()
        self.state = AttackerState()
        self.last_gamma: float | None = None
        self.last_delta_norm: float | None = None

    def observe(self, template, global_params: ParameterVector, round_t: int) -> float:
        """Record the received global's backdoor accuracy; drive the estimator."""
        model = nn.with_params(template, global_params)
        accs = [
            float(np.mean(nn.predict(model, ds.features) == target))
            for ds, target in self.backdoor_evals
        ]
        acc = min(accs)
        self.state.history.append((round_t, acc))
        if self.cfg.gamma is None:
            update_gamma(self.state, acc, self.cfg.gamma_target, self.cfg.gamma_max)
        return acc

    def _bound(self, template, global_params, benign, rng) -> float | None:
        if self.cfg.norm_bound is not None:
            return self.cfg.norm_bound
        if self.cfg.bound_probes > 0:
            if self.state.bound is None:
                h = self.benign_hparams
                self.state.bound = estimate_norm_bound(
                    template, global_params, benign, self.cfg.bound_probes,
                    self.cfg.bound_quantile, h.epochs, h.lr, h.batch_size, rng)
            return self.state.bound
        return None

    def round_submissions(self, template, global_params: ParameterVector,
                          shards, selected, round_t: int,
                          rng: np.random.Generator) -> dict:
        """Submissions for the controlled ids selected this round.

        shards maps participant id -> Dataset.  Returns {id: params}.
        """
        ids = sorted(int(i) for i in selected)
        if not ids or any(i not in self.controlled for i in ids):
            raise ValueError("selected ids must be controlled by this attacker")
        self.observe(template, global_params, round_t)
        locals_ = [shards[i] for i in ids if len(shards[i]) > 0]
        if not locals_:
            # nothing to train on; stay silent rather than crash the round
            warnings.warn("attacker selected with no benign data; submitting G")
            self.last_gamma, self.last_delta_norm = None, None
            return {i: global_params.copy() for i in ids}
        benign = concat(locals_)
        cfg = self.cfg

        if cfg.strategy == NAIVE_POISON:
            out = {}
            for i in ids:
                shard = shards[i] if len(shards[i]) > 0 else benign
                out[i] = naive_poison(template, global_params, shard,
                                      self.backdoor_trains, cfg, rng)
            self.last_gamma = 1.0
            self.last_delta_norm = max(
                float(np.linalg.norm(p.values - global_params.values))
                for p in out.values()
            )
            self.state.attacked = True
            return out

        bound = self._bound(template, global_params, benign, rng)
        gamma = cfg.gamma if cfg.gamma is not None else self.state.gamma
        if cfg.strategy == TRAIN_AND_SCALE:
            x = naive_poison(template, global_params, benign,
                             self.backdoor_trains, cfg, rng)
        else:
            x = train_backdoored(template, global_params, benign,
                                 self.backdoor_trains, cfg, rng,
                                 anomaly=ANOMALY_LOSSES[cfg.anomaly])
        self.last_delta_norm = float(np.linalg.norm(x.values - global_params.values))
        z = len(ids)
        if cfg.strategy == TRAIN_AND_SCALE:
            # stay at the norm bound when one is known, else aim for replacement
            cap = bound if bound is not None else None
            shares = split_update(x, global_params, cap, z, self.gamma_full)
            if self.last_delta_norm == 0.0:
                self.last_gamma = 0.0
            elif cap is None:
                self.last_gamma = self.gamma_full / z
            else:
                self.last_gamma = min(self.gamma_full / z, cap / self.last_delta_norm)
        else:
            share_gamma = gamma / z
            shares = [replacement_update(x, global_params, share_gamma)
                      for _ in range(z)]
            self.last_gamma = share_gamma
        self.state.attacked = True
        return dict(zip(ids, shares))
