# %% [markdown]
# The stochastic coalescent against the exact Golovin solution.  With the
# additive kernel and a monodisperse start, E[d_1(mu^n_t, mu_t)] should scale
# like n^(-1/2).  This is a small version of the full experiment in
# configs/additive.toml; it runs in a few seconds.

# %%
from coalrate.harness import parse_config, run_convergence

cfg = parse_config({
    "experiment": {"n": [50, 200, 800], "replicates": 40, "T": 0.5, "snapshots": [0.25, 0.5], "seed": 1},
    "kernel": {"name": "additive"},
    "initial": {"target": {"name": "dirac", "mass": 1}},
    "reference": {"kind": "golovin"},
})
report = run_convergence(cfg)

# %%
for t in cfg.snapshots:
    fit = report.fits[f"t={t!r}"]
    scaled = ", ".join(f"{v:.3f}" for v in report.scaled(t))
    print(f"t={t}: slope {fit.slope:+.3f} +/- {fit.halfwidth:.3f};  E[d]*sqrt(n) = {scaled}")
print(report.note)
