"""Closeness test error rates around the calibrated budget."""
import numpy as np

from momdp.dist_testing import budget_factor, closeness_error_rates, pinned_c1

O, alpha, delta = 8, 0.5, 0.1
c1 = pinned_c1()
k_pinned = int(np.ceil(c1 * budget_factor(O, alpha) * np.log(1 / delta)))
print(f"pinned C1 = {c1:.1f}, budget k = {k_pinned}")
rng = np.random.default_rng(0)
for k in (k_pinned // 64, k_pinned // 16, k_pinned // 4, k_pinned):
    rates = closeness_error_rates(O, alpha, delta, k, 2000, rng)
    print(f"k={k:7d}: false reject {rates['type1']:.3f}, false accept {rates['type2']:.3f}")
