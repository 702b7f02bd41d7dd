"""Baking the disguise into training instead of bolting it on.

Suppose the server screens submissions by their cosine similarity to the
current global model.  A plain backdoor trainer must then throttle its
scale factor until the submission passes, losing most of its punch.  The
constrained trainer blends an anomaly penalty into the loss (weight
1 - alpha), producing a model whose direction already resembles the global
one, so more of the backdoor survives at the same disguise level.

Both arms are scored the same way: scale each candidate to the largest
gamma whose submission still looks at least as benign as the median honest
update this round, then measure the submitted model's backdoor accuracy.

Run:  python3 demos/08_constrain_vs_train.py  (~30 s, mostly attacker SGD)
"""
import numpy as np

from fedsim import nn
from fedsim.aggregation import select_participants
from fedsim.attack import AttackConfig, replacement_update, train_backdoored
from fedsim.data import BackdoorSpec
from fedsim.detect import _cosine
from fedsim.harness import build_task_data, default_config, make_template
from fedsim.rounds import (STREAM_SELECT, STREAM_TRAIN, EvalSuite,
                           RoundConfig, RoundState, _force_include, run_round,
                           substream)

WARMUP = 20
ATTACKER = 17


def benign_cosine_floor(cfg, td, template, g):
    selected = _force_include(
        list(select_participants(cfg.round.n, cfg.round.m,
                                 substream(cfg.master_seed, STREAM_SELECT,
                                           WARMUP))), {ATTACKER})
    cosines = []
    for pid in selected:
        if pid == ATTACKER:
            continue
        local = nn.train_local(nn.with_params(template, g), td.shards[pid],
                               cfg.round.epochs, cfg.round.lr,
                               cfg.round.batch_size,
                               substream(cfg.master_seed, STREAM_TRAIN,
                                         WARMUP, pid))
        cosines.append(_cosine(local.values, g.values))
    return float(np.median(cosines))


def largest_gamma_at(floor, x, g):
    if _cosine(replacement_update(x, g, 100.0).values, g.values) >= floor:
        return 100.0
    lo, hi = 0.0, 100.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _cosine(replacement_update(x, g, mid).values, g.values) >= floor:
            lo = mid
        else:
            hi = mid
    return lo


def main():
    cfg = default_config(
        round=RoundConfig(n=100, m=10, eta=1.0, epochs=3, lr=0.3,
                          batch_size=32),
        backdoors=(BackdoorSpec(kind="pixel_pattern", target_label=2,
                                pattern={2: 12.0, 8: -12.0}, holdout_count=3,
                                eval_augmentations=1000, eval_jitter=2.0),),
        attacker_ids=(ATTACKER,),
    )
    td = build_task_data(cfg)
    template = make_template(cfg)
    suite = EvalSuite(template, td.main_test, tuple(td.backdoor_evals))
    state = RoundState(0, template.params.copy(), cfg.master_seed)
    for _ in range(WARMUP):
        state, _ = run_round(state, td.shards, cfg.round, suite)
    g = state.global_params
    bd_eval, target = td.backdoor_evals[0]

    floor = benign_cosine_floor(cfg, td, template, g)
    print(f"median honest cosine to the global model this round: "
          f"{floor:.5f}")
    print("any submission below that is assumed flagged\n")

    print(f"{'arm':>22} {'alpha':>6} {'gamma*':>8} {'backdoor':>9}")
    for alpha in (1.0, 0.9, 0.7, 0.5):
        acfg = AttackConfig(strategy="constrain_and_scale", gamma=100.0,
                            alpha=alpha, epochs=200, lr=5e-4, step_sched=(),
                            epsilon=0.6, c=8, batch_size=64, train_noise=0.05,
                            anomaly="cosine")
        x = train_backdoored(template, g, td.shards[ATTACKER],
                             td.backdoor_trains, acfg,
                             substream(cfg.master_seed, 3, WARMUP))
        gamma = largest_gamma_at(floor, x, g)
        sub = replacement_update(x, g, gamma)
        acc = float(np.mean(nn.predict(nn.with_params(template, sub),
                                       bd_eval.features) == target))
        label = "plain train-and-scale" if alpha == 1.0 else "constrained"
        print(f"{label:>22} {alpha:>6.1f} {gamma:>8.3f} {acc:>9.4f}")

    print("\nat an equal disguise level the constrained models keep at "
          "least as much\nbackdoor as the plain one, and usually more")


if __name__ == "__main__":
    main()
