"""Which image features carry the treatment effect?

Features with a non-zero outcome weight are tested for dependence on the
treatment given the pattern. With theta = (0.7, 0, 0, -0.5), phi1 moves
with the treatment while phi4 only tracks the pattern, so phi1 should be
the sole mediator and phi4 should land in OVERLINE (z-driven).

Run with ``python3 demos/mediator_discovery.py``.
"""

import numpy as np

from pragmed.harness import fit_historic
from pragmed.mediation import partition_features
from pragmed.simgen import ImgPertConfig, make_benchmark

hist, _, gen = make_benchmark(ImgPertConfig(n=6000, seed=3), n_new=10)
lib = gen.library()
_, crm = fit_historic(hist, lib, "forest", z_columns=[100], seed=3)
print("support:", crm.selected())

# disjoint halves: nuisance fits on one, paired residuals on the other
perm = np.random.default_rng(3).permutation(hist.n)
train, test = hist.take(np.sort(perm[:3000])), hist.take(np.sort(perm[3000:]))
report = partition_features(crm, lib, train, test, alpha=0.01, spec="forest", z_columns=[100], seed=3)
print()
print(report.to_csv())
print("mediators:", report.mediators)
