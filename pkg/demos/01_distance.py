# %% [markdown]
# The d_lambda distance between two measures integrates x**(lam-1) against the
# gap between their cumulative functions.  For lam < 0 the gap uses G (mass at
# or below x); for lam > 0 it uses F (mass above x).

# %%
import numpy as np

from coalrate import DiscreteMeasure, d_lambda_discrete, moment

a = DiscreteMeasure([1.0], [1.0])
b = DiscreteMeasure([2.0], [1.0])
for lam in (-1.0, 0.5, 1.0):
    print(f"lam={lam:+.1f}  d(delta_1, delta_2) = {d_lambda_discrete(a, b, lam):.6f}")

# %% [markdown]
# Any two measures sit within (M_lam(mu) + M_lam(nu)) / |lam| of each other.

# %%
rng = np.random.default_rng(0)
mu = DiscreteMeasure(rng.uniform(0.1, 5, 30), rng.uniform(0, 1, 30))
nu = DiscreteMeasure(rng.uniform(0.1, 5, 30), rng.uniform(0, 1, 30))
for lam in (-2.0, -0.5, 0.5, 1.0):
    d = d_lambda_discrete(mu, nu, lam)
    cap = (moment(mu, lam) + moment(nu, lam)) / abs(lam)
    print(f"lam={lam:+.1f}  d={d:.4f}  moment cap={cap:.4f}")
