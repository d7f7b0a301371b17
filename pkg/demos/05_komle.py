"""k-OMLE on the revealing suite and the value of extra hindsight observations."""
from momdp.komle import run_komle
from momdp.suites import revealing_class, vandermonde_class

truth, mc = revealing_class(T=60)
res = run_komle(truth, mc, 60, k=2, seed=0)
print(f"revealing suite: optimum {res.optimal_value:.3f}, final gap {res.final_gap:.2e}")
print(f"  selections of the first 10 iterations: {res.selected[:10].tolist()}")
print(f"  confidence set sizes: {res.confset_sizes[:10].tolist()}")

truth, mc = vandermonde_class(T=80)
for k in (1, 3):
    gaps = [run_komle(truth, mc, 80, k, seed=s).final_gap for s in range(10)]
    print(f"vandermonde suite, k={k}: final gaps {[round(float(g), 3) for g in gaps]}")
