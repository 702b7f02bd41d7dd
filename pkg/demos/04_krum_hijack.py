"""Krum prefers whoever stands still.

Krum scores each submission by its summed squared distance to its nearest
neighbors and keeps the single lowest scorer.  Near convergence, honest
updates are SGD noise scattered around the global weights.  A small group
that submits the global weights plus a tiny nudge sits at the center of
its own tight cluster and wins the selection almost every time, so the
"Byzantine-robust" rule hands the round to the colluders.

Run:  python3 demos/04_krum_hijack.py
"""
import tempfile

import numpy as np

from fedsim.aggregation import Submission, krum, krum_scores
from fedsim.harness import ScheduleConfig, default_config, run_experiment
from fedsim.params import ParameterVector


def main():
    cfg = default_config(attack=None, schedule=ScheduleConfig(),
                         total_rounds=40)
    with tempfile.TemporaryDirectory() as out:
        benign = run_experiment(cfg, out_dir=out)
    g = benign.final_state.global_params
    print(f"converged global after {cfg.total_rounds} benign rounds: "
          f"main_acc {benign.records[-1].main_acc:.4f}\n")

    honest_spread = 0.3     # typical SGD scatter at this scale
    collusion_spread = 1e-3
    wins = 0
    sample_scores = None
    for trial in range(100):
        rng = np.random.default_rng(trial)
        subs = [Submission(i, ParameterVector(
            g.values + honest_spread * rng.standard_normal(len(g)), g.layout))
            for i in range(95)]
        subs += [Submission(95 + j, ParameterVector(
            g.values + collusion_spread * rng.standard_normal(len(g)),
            g.layout)) for j in range(5)]
        winner = krum(subs, f=5)
        if winner.participant_id >= 95:
            wins += 1
        if trial == 0:
            scores = krum_scores(subs, f=5)
            sample_scores = (float(np.median(scores[:95])),
                             float(np.median(scores[95:])))

    print(f"95 honest (spread {honest_spread}) vs 5 colluders "
          f"(spread {collusion_spread}), f=5")
    print(f"median krum score: honest {sample_scores[0]:.1f}, "
          f"colluder {sample_scores[1]:.1f} (lower wins)")
    print(f"colluder selected in {wins}/100 trials")


if __name__ == "__main__":
    main()
