"""Without smoothing, empirical measures see no conditional structure.

Two independent samples of a continuous AR(1) path law have distinct first
coordinates, so every conditional law is a point mass and any first-step
coupling is bicausal: AW_1 between the samples collapses to the per-step W_1
and shrinks with n. Measured against a discretization that keeps genuine
branching (a quantile tree), the adapted distance of the empirical measure
stays put while W_1 keeps falling.
"""

from smoothaw import ExperimentConfig, Sampler, run_nonconvergence_experiment

base = dict(name="noconv", sampler=Sampler("gaussian_ar", {"T": 2}), n_grid=(64, 256, 1024), reps=8, p=1.0, seed=2)
for reference in ("independent", "tree"):
    rep = run_nonconvergence_experiment(ExperimentConfig(reference=reference, tree_k=16, **base))
    aw, w = rep.medians("aw"), rep.medians("w")
    print(f"reference={reference}")
    for n in aw:
        print(f"  n={n:<5} median AW_1={aw[n]:.3f}  median W_1={w[n]:.3f}")
