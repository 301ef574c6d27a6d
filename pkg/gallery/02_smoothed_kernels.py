"""Gaussian smoothing turns jumpy conditional laws into smooth mixtures.

For a discrete base, the kernel of the smoothed measure given a prefix is a
Gaussian mixture whose weights are soft assignments of the prefix to atoms.
As the prefix moves, the kernel moves continuously, and the scan below
measures how fast: ``W_2(kernel(x), kernel(y)) / |x - y|``.
"""

import numpy as np

from smoothaw import DiscreteMeasure, SmoothedMeasure, disintegrate, kernel_lipschitz_scan

base = DiscreteMeasure(np.array([[-1.0, -2.0], [1.0, 2.0]]))
for sigma in (0.25, 0.5, 1.0):
    sm = SmoothedMeasure(base, sigma)
    ws = [disintegrate(sm, [y]).weights for y in (-0.5, 0.0, 0.5)]
    scan = kernel_lipschitz_scan(sm, 1, 2.0, radius=2.0, count=256, seed=0, quad=64)
    print(
        f"sigma={sigma:<4} weight on atom 2 at y1=-0.5,0,0.5: "
        + ", ".join(f"{w[1]:.3f}" for w in ws)
        + f"   max kernel ratio={scan.max_ratio:.2f}"
    )
print("smaller sigma: sharper switching between atoms and a larger Lipschitz ratio")
