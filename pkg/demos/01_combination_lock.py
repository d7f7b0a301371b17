"""Combination lock: a learner with a handful of episodes cannot find the path."""
from momdp.envs import lock_good_actions, make_combination_lock
from momdp.experiments import komle_output_value
from momdp.planner import pop_exact
from momdp.suites import lock_class

H, A = 4, 2
for seed in range(3):
    env = make_combination_lock(H, A, seed=seed)
    good = lock_good_actions(H, A, seed)
    mc = lock_class(H, A, good, T=21)
    print(f"seed {seed}: good actions {tuple(good.tolist())}, optimal value {pop_exact(env).value:.3f}")
    for episodes in (1, 8, 80):
        for k in (1, 16):
            v = komle_output_value(env, mc, episodes, k, seed)
            print(f"  k-OMLE after {episodes:2d} episodes, k={k:2d}: value {v:.3f}")
