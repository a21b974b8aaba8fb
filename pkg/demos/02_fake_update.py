"""A fake update, and why its gain is a directional derivative.

A fake update moves the shared encoder a small step along one task's
gradient, scores the main task on held-out rows, and puts the parameters
back.  For small steps the metric change is the step size times the dot
product of the metric's gradient with the step direction.  Here we watch the
gap to that first-order prediction shrink a hundredfold per tenfold smaller
step.

Run:  python3 demos/02_fake_update.py
"""

from dataclasses import replace

import numpy as np

from hydalearn import experiments as ex
from hydalearn.data import EXP2_DATA, toy_splits
from hydalearn.multitask import Batch
from hydalearn.weighting import fake_update_metric

splits = toy_splits(replace(EXP2_DATA, n_train=200, n_val=100, n_test=10))
net = ex.build_net(ex.exp2_spec(), splits, seed=0)

_, grads = net.task_gradients(splits.train.batch(np.arange(32)), "aux")
direction = grads.grad_s
before = net.checksum()

val = Batch(splits.val.inputs, splits.val.targets_main, splits.val.targets_aux)
mse0, metric_grads = net.task_gradients(val, "main")
slope = float(metric_grads.grad_s @ direction)


def val_mse(n):
    diff = n.predict(splits.val.inputs) - splits.val.targets_main
    return float(np.mean(diff ** 2))


print(f"validation MSE before: {mse0:.6f}")
print(f"{'step':>8} {'measured change':>18} {'first-order':>14} {'gap':>10}")
for alpha in (1e-1, 1e-2, 1e-3, 1e-4):
    change = fake_update_metric(net, direction, alpha, False, val_mse) - mse0
    print(f"{alpha:8.0e} {change:18.3e} {-alpha * slope:14.3e} {abs(change + alpha * slope):10.2e}")

assert net.checksum() == before
print("\nparameters restored after every fake update")
