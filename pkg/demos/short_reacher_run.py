"""A short end-to-end run of the reacher preset, then a learning-curve plot.

Runs 100 episodes (5000 environment steps, a few minutes on one core) for two
seeds, prints each evaluation row and writes ``reacher_curve.svg`` with the
across-seed mean and a 95% band.

    python demos/short_reacher_run.py [output_dir]
"""
import sys
from pathlib import Path

from rig.experiment import run_rig
from rig.plot import aggregate, find_progress_files, render_svg
from rig.presets import resolve

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs/reacher")

for seed in (1, 2):
    cfg = resolve("rig-reacher", {"episodes": 100, "eval_interval": 1000, "seed": seed,
                                  "output_dir": str(out / f"seed_{seed}")})
    report = run_rig(cfg)
    print(f"seed {seed}")
    for row in report.rows:
        print(f"  step {row.env_steps:5d}  median final distance {row.median_final_distance:.3f}"
              f"  success {row.success_rate:.2f}")

curve = aggregate(find_progress_files(out), "rig-reacher", "median_final_distance")
svg = out / "reacher_curve.svg"
svg.write_text(render_svg([curve], "reacher, 2 seeds", "median final distance"))
print("wrote", svg)
