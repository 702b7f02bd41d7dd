"""Dialing the scale factor from timid to total replacement.

gamma multiplies the attacker's deviation from the global model before
submission.  At gamma = n/eta the aggregate equals the attacker's model
exactly.  Below that the backdoor lands partially or not at all, and the
submitted norm grows linearly with gamma, which is what norm-based
defenses key on.

Run:  python3 demos/03_scaling_sweep.py
"""
import tempfile
from dataclasses import replace

from fedsim.harness import default_config, run_experiment


def main():
    base = default_config()
    hit = base.schedule.round
    print(f"n={base.round.n}, eta={base.round.eta}: full replacement "
          f"needs gamma = {base.round.n / base.round.eta:.0f}\n")
    print(f"{'gamma':>6} {'backdoor@'+str(hit):>12} {'update norm':>12} "
          f"{'norm/benign-median':>18}")
    for gamma in (1.0, 10.0, 50.0, 100.0):
        cfg = replace(base, attack=replace(base.attack, gamma=gamma),
                      total_rounds=hit + 2)
        with tempfile.TemporaryDirectory() as out:
            res = run_experiment(cfg, out_dir=out)
        rec = res.records[hit]
        ratio = rec.max_update_norm / rec.median_update_norm
        print(f"{gamma:>6.0f} {rec.backdoor_acc[0]:>12.4f} "
              f"{rec.max_update_norm:>12.4f} {ratio:>18.1f}")

    print("\nbackdoor strength and conspicuousness rise together; "
          "the attacker's dilemma in one table")


if __name__ == "__main__":
    main()
