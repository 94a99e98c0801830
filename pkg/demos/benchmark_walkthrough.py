"""Transfer a causal response model to an unseen treatment on the image benchmark.

Historic images are perturbed under treatments 0..3; the new regime uses
treatment 5, for which no outcome is observed until labels trickle in.
We fit both stages on the historic pool, refit stage one on unlabeled
new-regime images and compare the test error with a forest trained on
the few labeled new-regime rows.

Run with ``python3 demos/benchmark_walkthrough.py`` (about a minute).
"""

import numpy as np

from pragmed.dataset import SplitSpec, concat, make_new_regime_splits
from pragmed.estimator import adapt_stage_one, predict_do
from pragmed.harness import fit_historic, run_baseline_curve, run_method
from pragmed.regress import RegressorSpec
from pragmed.simgen import ImgPertConfig, make_benchmark

hist, new, gen = make_benchmark(ImgPertConfig(n=4000, seed=0), n_new=1000)
lib = gen.library()
print(f"historic rows {hist.n}, new-regime rows {new.n}, features {lib.names}")

# stage one sees w and the pattern index only
forest = RegressorSpec("forest", {"n_trees": 50})
g, crm = fit_historic(hist, lib, forest, z_columns=[100])
print("estimated theta:", np.round(crm.theta, 3), "intercept", round(crm.theta0, 3))
print("true theta:     ", np.asarray(gen.cfg.theta))

# predictions only need unlabeled new-regime rows
lab, unl, test = make_new_regime_splits(new, SplitSpec(0.1, seed=1))
pool = concat([lab.strip_labels(), unl])
g_star = adapt_stage_one(g, pool, lib)
print(f"E[Y | do(w=5), z of the first test image] ~ {predict_do(crm, g_star, test.w[0], test.z[0]):.3f}"
      f" (observed {test.y[0]:.3f})")

ours = run_method(None, pool, test, lib, fitted=(g, crm))
print(f"\ntwo-stage estimator, test MSE {ours:.6f} (same at any label fraction)")
for name, f, mse in run_baseline_curve(new, (0.1, 0.3, 1.0), [forest], seed=1):
    print(f"forest on {f:.0%} labels, test MSE {mse:.6f}")
