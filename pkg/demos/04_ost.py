"""OST on a distinguishable environment: pseudo-states and regret."""
import numpy as np

from momdp.experiments import OST_SUITE_T, ost_suite_run

res = ost_suite_run(seed=0, T=OST_SUITE_T)
cum = res.cumulative_regret
print(f"k = {res.k}")
print(f"pseudo-states match latent states up to relabeling: {bool(res.permutation_ok[-1])}")
for t in (10, 50, 100, 250, 500):
    print(f"episode {t:3d}: cumulative regret {cum[t - 1]:.3f}, "
          f"instantaneous {res.regret[t - 1]:.4f}")
print(f"mean regret over the last 50 episodes: {np.mean(res.regret[-50:]):.4f}")
