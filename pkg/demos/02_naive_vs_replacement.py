"""Why scaling matters.

Same world, same attacker, same backdoor data, two strategies.  The naive
poisoner trains on mixed clean-plus-backdoor batches and submits its local
model like everyone else; averaging with 99 honest peers dilutes the update
by a factor of n and the backdoor never lands.  The replacement attacker
scales its deviation by n/eta and lands it in one round.

Run:  python3 demos/02_naive_vs_replacement.py
"""
import tempfile
from dataclasses import replace

from fedsim.harness import default_config, run_experiment


def run_arm(strategy, gamma):
    base = default_config()
    cfg = replace(base,
                  attack=replace(base.attack, strategy=strategy, gamma=gamma),
                  total_rounds=base.schedule.round + 2)
    with tempfile.TemporaryDirectory() as out:
        return run_experiment(cfg, out_dir=out)


def main():
    naive = run_arm("naive_poison", None)
    swap = run_arm("constrain_and_scale", 100.0)
    hit = naive.config.schedule.round

    print(f"{'strategy':>20} {'gamma':>6} {'backdoor@'+str(hit):>12} "
          f"{'main@'+str(hit):>9}")
    for name, res in (("naive_poison", naive), ("constrain_and_scale", swap)):
        rec = res.records[hit]
        print(f"{name:>20} {rec.gamma or 1:>6.0f} "
              f"{rec.backdoor_acc[0]:>12.4f} {rec.main_acc:>9.4f}")

    print("\nthe naive update is averaged away; the scaled one replaces "
          "the global model")


if __name__ == "__main__":
    main()
