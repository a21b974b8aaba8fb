"""Train HydaLearn and single-task learning on the unrelated-auxiliary toy.

In this toy problem the auxiliary targets are pure noise.  We train both
models from the same initial weights and the same batch order, then watch
how much weight HydaLearn gives the auxiliary task epoch by epoch.

Run:  python3 demos/03_train_one_model.py
"""

from hydalearn import experiments as ex
from hydalearn.cli import epoch_means
from hydalearn.trainer import TrainConfig, train

spec = ex.exp2_spec()
splits = ex.load_splits(spec, seed=0)

runs = {}
for strategy, params in (("stl", {}), ("hydalearn", {"beta": 6.0})):
    net = ex.build_net(spec, splits, seed=0)
    cfg = TrainConfig(strategy=strategy, strategy_params=params, max_epochs=60, seed=0)
    net, log = train(net, splits, cfg)
    runs[strategy] = log
    print(f"{strategy:>10}: best val MAE {log.final['best_val']:.4f} at step {log.final['best_step']}, "
          f"test MSE {log.final['test_mse_main']:.4f}")

print("\nmean w_a / W per epoch (HydaLearn), every tenth epoch:")
for epoch, mean in epoch_means(runs["hydalearn"])[::10]:
    print(f"  epoch {epoch:3d}: {mean:.3f}")

steps = runs["hydalearn"].steps
shrunk = sum(1 for r in steps if r["W_effective"] < 2.0)
print(f"\n{shrunk} of {len(steps)} steps had both fake updates hurt, and ran with a reduced budget")
