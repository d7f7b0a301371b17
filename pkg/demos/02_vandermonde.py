"""Tensor powers of a Vandermonde emission family gain one rank per extra observation."""
from momdp.envs import make_vandermonde_family
from momdp.spectral import (extend_left_inverse, numerical_rank, revealing_certificate,
                            tensor_power)

model = make_vandermonde_family(3, [0.1, 0.35, 0.6, 0.85, 0.95])
E = model.emission_matrix(0)
for k in range(1, 6):
    print(f"k={k}: rank {numerical_rank(tensor_power(E, k))} of {E.shape[1]}")

cert = revealing_certificate(model, 0, 4, "lp_exact")
ext = extend_left_inverse(cert)
print(f"LP left inverse at k=4: norm {cert.norm:.3f}")
print(f"extended to k=5: norm {ext.norm:.3f}, residual {ext.identity_residual():.1e}")
