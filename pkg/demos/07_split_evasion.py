"""Splitting the replacement across colluders to duck every alarm.

The server here runs three detectors: a hard norm bound, k-means clustering
on update norms, and an accuracy audit of each submitted model.  Flagged
updates are logged (and in the last arm, excluded).

One attacker who wants full replacement must submit a huge update and gets
flagged.  One attacker who respects the bound can only afford a fraction of
the replacement, too little for the backdoor to land.  Five colluders each
submit an identical small share that adds up to the full replacement, and
every share sits inside the benign norm range, so nothing trips.

Run:  python3 demos/07_split_evasion.py
"""
import tempfile
from dataclasses import replace

from fedsim.attack import AttackConfig
from fedsim.data import BackdoorSpec
from fedsim.harness import ScheduleConfig, default_config, run_experiment
from fedsim.rounds import DetectorConfig, RoundConfig

SPLIT_WORLD = dict(
    round=RoundConfig(n=100, m=10, eta=1.0, epochs=3, lr=0.3, batch_size=32),
    backdoors=(BackdoorSpec(kind="pixel_pattern", target_label=2,
                            pattern={2: 60.0, 8: -60.0}, holdout_count=3,
                            eval_augmentations=1000, eval_jitter=0.05),),
    schedule=ScheduleConfig(kind="single_shot", round=1),
    total_rounds=3,
    detectors=(DetectorConfig(name="norm", bound=2.5),
               DetectorConfig(name="kmeans_norm", k=2, ratio=3.0),
               DetectorConfig(name="accuracy_audit", floor=0.3)),
)

STEALTH = AttackConfig(strategy="train_and_scale", gamma=None, alpha=1.0,
                       epochs=60, lr=0.001, step_sched=(40,), epsilon=0.05,
                       c=8, batch_size=64, train_noise=0.05, norm_bound=None,
                       bound_probes=8, bound_quantile=0.95)
GREEDY = replace(STEALTH, strategy="constrain_and_scale", gamma=100.0)


def run_arm(label, attacker_ids, attack, exclude=False):
    cfg = default_config(attacker_ids=attacker_ids, attack=attack,
                         exclude_flagged=exclude, **SPLIT_WORLD)
    with tempfile.TemporaryDirectory() as out:
        res = run_experiment(cfg, out_dir=out)
    rec = res.records[1]
    ids = set(attacker_ids)
    attacker_norm = max(v for pid, v in rec.update_norms if pid in ids)
    benign_norm = max(v for pid, v in rec.update_norms if pid not in ids)
    print(f"{label:>22} {len(ids):>9} {rec.backdoor_acc[0]:>9.4f} "
          f"{attacker_norm:>13.3f} {benign_norm:>11.3f} "
          f"{rec.flags or '-':>12}")


def main():
    print(f"{'arm':>22} {'attackers':>9} {'backdoor':>9} "
          f"{'attacker norm':>13} {'benign max':>11} {'flags':>12}")
    run_arm("greedy, full gamma", (17,), GREEDY, exclude=True)
    run_arm("solo, under the bound", (17,), STEALTH)
    run_arm("split five ways", (17, 30, 46, 55, 71), STEALTH)
    print("\nthe greedy update is flagged and dropped; the cautious solo "
          "attacker\nstays clean but its throttled update fails to land; "
          "the five-way split gets both")


if __name__ == "__main__":
    main()
