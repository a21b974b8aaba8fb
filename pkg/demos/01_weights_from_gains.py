"""How metric gains turn into task weights.

HydaLearn measures two gains each step: how much one step along the main
task's shared gradient improves the main metric (delta_mm), and how much a
step along the auxiliary gradient does (delta_ma).  The weights follow

    w_m / w_a = (delta_mm / delta_ma) ** beta,    w_m + w_a = W.

Run:  python3 demos/01_weights_from_gains.py
"""

from hydalearn.weighting import weights_from_gains

W = 2.0

print("Both tasks help, main twice as much:")
for beta in (1.0, 3.0, 6.0):
    w_m, w_a, _ = weights_from_gains(0.02, 0.01, beta, W)
    print(f"  beta={beta:<4}  w_m={w_m:.4f}  w_a={w_a:.4f}")

print("\nThe auxiliary step hurts the main metric, so its weight collapses:")
w_m, w_a, _ = weights_from_gains(0.02, -0.01, 6.0, W)
print(f"  w_m={w_m:.4f}  w_a={w_a:.3g}")

print("\nBoth steps hurt: the budget W shrinks as well (beta=1):")
w_m, w_a, w_eff = weights_from_gains(-0.01, -0.02, 1.0, W)
print(f"  w_m={w_m:.4f}  w_a={w_a:.4f}  W'={w_eff:.4f}")

print("\nSame case with the budget left alone:")
w_m, w_a, w_eff = weights_from_gains(-0.01, -0.02, 1.0, W, downscale=False)
print(f"  w_m={w_m:.4f}  w_a={w_a:.4f}  W'={w_eff:.4f}")

# With both gains negative, the ratio of magnitudes is used as-is, so here the
# auxiliary task (the larger loss of metric) ends up with the larger share.
# negative_gains="inverse" flips that ratio instead:
w_m, w_a, w_eff = weights_from_gains(-0.01, -0.02, 1.0, W, negative_gains="inverse")
print(f"\nInverse rule:  w_m={w_m:.4f}  w_a={w_a:.4f}  W'={w_eff:.4f}")
