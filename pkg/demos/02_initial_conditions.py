# %% [markdown]
# Discretizing a target measure with n particles of weight 1/n.  The error in
# d_lambda falls like 1/sqrt(n) and stays below the builder's closed-form bound.

# %%
import math

from coalrate.initcond import (
    build_atomless_neg,
    build_discrete,
    distance_bound,
    gamma_target,
    geometric_target,
)
from coalrate.measures import d_lambda_discrete, d_lambda_vs_reference

g = gamma_target(3.0)  # density x^2 e^-x / 2
print("atomless target, lam = -1")
for n in (100, 1000, 10_000, 100_000):
    mu = build_atomless_neg(g, n, -1.0)
    d = d_lambda_vs_reference(mu, g, -1.0).value
    print(f"  n={n:>6}  particles={int(mu.counts(n).sum()):>6}  d={d:.3e}  "
          f"d*sqrt(n)={d * math.sqrt(n):.3f}  bound={distance_bound(g, n, -1.0):.3e}")

# %%
geo = geometric_target()  # alpha_k = 2^-k
print("geometric target, lam = 1")
for n in (100, 1000, 10_000, 100_000):
    mu = build_discrete(geo, n, 1.0)
    d = d_lambda_discrete(mu, geo.measure(), 1.0)
    print(f"  n={n:>6}  atoms={len(mu):>3}  d={d:.3e}  bound={distance_bound(geo, n, 1.0):.3e}")
