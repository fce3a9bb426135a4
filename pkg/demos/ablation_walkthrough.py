"""Train the four ablation variants on the bundled synthetic stream and compare.

Five tasks of two Gaussian classes each arrive one after another.  For every
variant we print the final average accuracy, average forgetting and the
incremental-accuracy curve, then the accuracy matrix of the full model.

    python demos/ablation_walkthrough.py [num_seeds]
"""
import sys

import numpy as np

from protossm import cli

num_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = cli.load_config()

results = {}
for variant, (use_apa, use_mf) in cli.VARIANTS.items():
    runs = [cli.run_one(cfg, seed, use_apa=use_apa, use_mf=use_mf) for seed in range(num_seeds)]
    results[variant] = runs
    acc = np.mean([r.avg_accuracy for r in runs])
    forg = np.mean([r.avg_forgetting for r in runs])
    curve = np.mean([r.curve for r in runs], axis=0)
    print(f"{variant:>8}: accuracy {acc:.3f}  forgetting {forg:.3f}  curve "
          + " ".join(f"{v:.2f}" for v in curve))

# Row i holds accuracy on tasks 0..i after finishing task i; the drop down a
# column is what forgetting measures.
print("\naccuracy matrix of the full model, seed 0:")
for i, row in enumerate(results["full"][0].R):
    print(f"  after task {i}: " + "  ".join(f"{v:.2f}" for v in row))
