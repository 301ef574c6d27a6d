"""Admissible integrability orders and explicit kernel-Lipschitz constants.

``q_star(p, T, beta)`` is the smallest admissible moment order for a choice of
``beta``; at the default ``beta`` it equals the closed-form ``theorem_q``. The
Lipschitz constants depend on the base only through a few moments and grow
quickly as sigma shrinks.
"""

import numpy as np

from smoothaw import DiscreteMeasure, default_beta, kernel_constants, q_star, theorem_q

for p, T in ((1.5, 2), (2.0, 2), (2.0, 3), (3.0, 2)):
    b = default_beta(p, T)
    print(f"p={p} T={T}: beta={b:.5f} q_star={q_star(p, T, b):.1f} theorem_q={theorem_q(p, T):.1f}")

base = DiscreteMeasure(np.array([[0.0, 1.0], [0.5, -1.0], [-0.5, 0.0]]))
for sigma in (2.0, 1.0, 0.5):
    k = kernel_constants(base, 1, 2.0, sigma, 0.05)
    print(f"sigma={sigma}: log c1={k.log_c1:.2f}  log c2/D={k.log_c2_unit:.2f}")
