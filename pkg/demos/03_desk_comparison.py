# # Reinforced vs vanilla attention at desk scale
#
# ResNet-20 layout with squeeze-and-excitation attention, 10 synthetic classes
# of 16x16 images, trained with and without the critics for several seeds.
# The default (3 seeds x 60 epochs) takes about 45 minutes on one CPU core;
# pass --epochs / --seeds for a quicker look.

import argparse
import logging
import statistics

from dreal.harness.benchmark import desk_comparison

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=60)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
parser.add_argument("--out", default="runs/desk")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

result = desk_comparison(args.out, seeds=args.seeds, epochs=args.epochs)

print(f"{'seed':>4}  {'reinforced':>10}  {'vanilla':>8}")
for seed, r, v in zip(result.seeds, result.reinforced, result.vanilla):
    print(f"{seed:>4}  {r:10.2f}  {v:8.2f}")
print(f"median  {statistics.median(result.reinforced):10.2f}  {statistics.median(result.vanilla):8.2f}")
print(f"median gain {result.median_gain:+.2f} points, worst paired gap {result.worst_paired_gap:+.2f}")
