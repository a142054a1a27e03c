"""Desk-scale benchmark: rematching against two baselines.

Generates a corrupted paired dataset, then trains three ways on identical
budgets:

* naive   - hinge ranking loss on all data, corruption ignored;
* discard - per-epoch identification, training on the kept subset only;
* rematch - the full loop: identification, learned transport costs, masked
            partial transport over the flagged subset, and the combined
            objective.

Takes a couple of minutes on one core.

Run:  python3 demos/05_end_to_end_run.py
"""

import numpy as np

from rematch.data import make_benchmark
from rematch.pipeline import TrainConfig, run_experiment

MRATE = 0.6
SCHEDULE = dict(optimizer="adam", warmup_epochs=15, train_epochs=25,
                lr_decay_epoch=20)

print(f"dataset: 500 pairs, 10 classes, {MRATE:.0%} of training captions permuted")
ds = make_benchmark(n=500, classes=10, noise=0.1, mrate=MRATE, rng_seed=0)

results = {}
for mode in ("naive", "discard", "rematch"):
    payload = run_experiment(TrainConfig(seed=0, mode=mode, **SCHEDULE), ds)
    results[mode] = payload
    print(f"  trained {mode:8s} test rsum {payload['test']['rsum']:6.1f} "
          f"(best validation epoch {payload['best']['epoch']})")

print(f"\nrandom-ranking baseline rsum: {results['naive']['random_baseline_rsum']:.1f}")

# --- what the full loop did internally ----------------------------------------
full = results["rematch"]
train_records = [r for r in full["epochs"] if "identification" in r]
print("\nidentification and cost separation over training:")
print(f"{'epoch':>6} {'split f1':>9} {'flagged':>8} {'cost gap':>9}")
for record in train_records[:: max(1, len(train_records) // 8)]:
    print(f"{record['epoch']:>6} {record['identification']['f1']:>9.3f} "
          f"{record['partition']['mismatched']:>8} "
          f"{record['cost_gap']['gap']:>9.3f}")

print("\nper-direction test recall of the full loop:")
for key in ("r1_i2t", "r5_i2t", "r10_i2t", "r1_t2i", "r5_t2i", "r10_t2i"):
    print(f"  {key}: {full['test'][key]:.1f}")

improvement = full["test"]["rsum"] - results["naive"]["test"]["rsum"]
print(f"\nrematching beats corruption-blind training by {improvement:.1f} rsum "
      f"points at {MRATE:.0%} corruption")
