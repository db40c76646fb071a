"""
scalingLawSweep.py

Write the 12-cell learning rate by batch size sweep (eta in 0.02, 0.05, 0.1;
b in 2, 5, 10, 25) on a depth-2 diagonal network with misspecified labels,
run it, and check the fitted log-log slope of the median steps to threshold
against b / eta^2.

The layers must start unbalanced (1.0 and 0.5); equal layers are already
shrunk to zero by full-batch GD. The irrelevant first-layer weight then
decays like exp(-eta^2 eps^2 t / b), so with eps = 2 the slowest cell
(eta 0.02, b 25) needs about 2e5 steps to reach 1e-3 of its initial value.
"""
import argparse
import logging
import os
import sys

import supportnetworks

BASE = """[dataset]
generator = diagonal
d = 5
r = 2
m = 100
eps = 2.0

[network]
topology = diagonal
depth = 2
init = constant
values = 1.0, 0.5

[optimizer]
algorithm = sgd-without
steps = {steps}
seed = 0

[probes]
stride = {stride}
"""

SWEEP = """[sweep]
base = base.ini
replicates = {replicates}
workers = {workers}
fit = true
threshold = 1e-3

[axes]
optimizer.eta = 0.02, 0.05, 0.1
optimizer.batchsize = 2, 5, 10, 25
"""

parser = argparse.ArgumentParser(description="Run the learning rate by batch size scaling-law sweep")
parser.add_argument("--out", default="scalinglaw", help="output directory (default=scalinglaw)")
parser.add_argument("--replicates", type=int, default=10, help="sampling-order seeds per cell (default=10)")
parser.add_argument("--workers", type=int, default=4, help="worker processes (default=4)")
parser.add_argument("--steps", type=int, default=400000, help="steps per run (default=400000)")
parser.add_argument("--stride", type=int, default=100, help="recording stride (default=100)")
args = parser.parse_args()

logging.basicConfig(level=logging.INFO, format="%(message)s")

os.makedirs(args.out, exist_ok=True)
with open(os.path.join(args.out, "base.ini"), "w") as flines:
    flines.write(BASE.format(steps=args.steps, stride=args.stride))
sweepPath = os.path.join(args.out, "sweep.ini")
with open(sweepPath, "w") as flines:
    flines.write(SWEEP.format(replicates=args.replicates, workers=args.workers))

result = supportnetworks.runner.sweep(sweepPath, out=args.out, verbosity=2)
if result.fit is None:
    print("no fit: see {}".format(os.path.join(args.out, "scaling_fit.json")))
    sys.exit(1)

fit = result.fit
print(f"slope {fit.slope:.3f}, r^2 {fit.rsquared:.3f}, {len(fit.excluded)} cells excluded")
passed = 0.7 <= fit.slope <= 1.3 and fit.rsquared > 0.8
print("within the linear scaling band" if passed else "outside the linear scaling band")
sys.exit(0 if passed else 1)
