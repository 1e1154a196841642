"""Supervised vs semi-supervised agents on a reduced benchmark.

Three seeds and 15 epochs keep this to a few minutes on one core; the
acceptance run uses ten seeds and 25 epochs. The CLI does the same thing:

    python -m ssdrl compare --seeds 0,1,2 --checkpoints 5,10,15 --out run/
"""
import sys
from pathlib import Path

from ssdrl.harness import ExperimentConfig, run_comparison, summarize

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_run")
config = ExperimentConfig(seeds=(0, 1, 2), checkpoints=(5, 10, 15))
report = run_comparison(config, out)

for r in report.rows:
    print(f"{r.mode:>16} seed {r.seed} epoch {r.checkpoint_epoch:>2}: "
          f"{r.start_distance_m:5.2f} -> {r.end_distance_m:5.2f} m, reward {r.mean_reward:6.3f}")

summary = summarize(report)
summary.write_csv(out / "summary.csv")
print()
print(summary.table())
print(f"\nreport, manifest and summary written to {out}/")
