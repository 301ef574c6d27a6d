"""Testing the martingale property after martingale-preserving smoothing.

The noise ``(Z1, Z1 + Z2)`` keeps martingales martingales, so the projection
statistic is zero for them and positive otherwise. The threshold divides a
sample-splitting estimate of the sampling deviation by the level alpha.
"""

from smoothaw import DiscreteMeasure, Sampler, sample_empirical, smpd_statistic, smpd_test

walk = Sampler("gaussian_ar", {"T": 2, "a": 1.0})
drift = Sampler("finite", {"measure": DiscreteMeasure.dirac([0.0, 1.0])})
shrink = Sampler("gaussian_ar", {"T": 2, "a": 0.7})

print("closed form for a constant +1 step:", smpd_statistic(DiscreteMeasure.dirac([0.0, 1.0]), "gh").value)
for name, s in (("random walk", walk), ("constant drift", drift), ("mean reversion", shrink)):
    r = smpd_test(sample_empirical(s, 2000, 0), alpha=0.1, seed=0)
    print(f"{name:<15} statistic={r.statistic:.4f} threshold={r.threshold:.4f} -> {r.decision}")
print("Markov thresholds are conservative: a mild violation such as mean reversion needs a larger n to be rejected")
