"""One poisoned round is enough.

A hundred participants learn a 4-class blob task with federated averaging.
At round 60 a single attacker, selected once, submits a model-replacement
update: it trains the backdoor into a copy of the global model, then scales
the difference by n/eta so the average lands on its weights.  The backdoor
arrives at full strength in one round and survives long after the attacker
is gone.

Run:  python3 demos/01_single_shot_replacement.py
"""
import tempfile

from fedsim.harness import default_config, run_experiment


def main():
    cfg = default_config()
    with tempfile.TemporaryDirectory() as out:
        result = run_experiment(cfg, out_dir=out)

    hit = cfg.schedule.round
    print(f"task: {cfg.task.num_classes}-class blobs, "
          f"{cfg.round.n} participants, {cfg.round.m} per round")
    print(f"attacker id {cfg.attacker_ids[0]} appears once, at round {hit}\n")

    print(f"{'round':>6} {'main_acc':>9} {'backdoor':>9}  note")
    marks = {hit - 1: "last clean round", hit: "<-- replacement",
             hit + 5: "attacker long gone", cfg.total_rounds - 1: "end of run"}
    for rec in result.records:
        if rec.round in marks or rec.round % 20 == 0:
            note = marks.get(rec.round, "")
            print(f"{rec.round:>6} {rec.main_acc:>9.4f} "
                  f"{rec.backdoor_acc[0]:>9.4f}  {note}")

    before = result.records[hit - 1]
    after = result.records[hit]
    print(f"\nmain-task cost of the swap: "
          f"{(before.main_acc - after.main_acc) * 100:.2f} points")
    tail = [r.backdoor_acc[0] for r in result.records[hit + 1:]]
    print(f"backdoor accuracy over the following {len(tail)} benign rounds: "
          f"min {min(tail):.3f}, final {tail[-1]:.3f}")


if __name__ == "__main__":
    main()
