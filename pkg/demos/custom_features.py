"""Bring your own candidate features.

A small linear-Gaussian system where the outcome depends on one linear
combination of x. The hand-written library holds that combination, a
decoy x coordinate and an x-by-z product; only the first should get
weight. The library
is saved as a JSON manifest, reloaded, and used for both stages; the
fitted pipeline is then written to disk the way the ``fit`` command does.

Run with ``python3 demos/custom_features.py``.
"""

import tempfile
from pathlib import Path

import numpy as np

from pragmed.estimator import fit_stage_one, fit_stage_two, load_pipeline, save_pipeline
from pragmed.features import Builtin, FeatureLibrary, ProductFeature, load_manifest, save_manifest
from pragmed.simgen import gen_linear_gaussian

data, truth = gen_linear_gaussian(1, 2, 5, 4, 5000, seed=0, theta=[0.5, 0.0, 0.0, 0.0])

lib = FeatureLibrary([
    Builtin("driver", "linear_x", weights=truth.D[0]),
    Builtin("x0", "x_index", index=0),
    ProductFeature("x1_z0", Builtin("x1", "x_index", index=1), Builtin("z0", "z_index", index=0)),
])

with tempfile.TemporaryDirectory() as tmp:
    save_manifest(lib, Path(tmp) / "features.json")
    lib = load_manifest(Path(tmp) / "features.json")
    print((Path(tmp) / "features.json").read_text())

    g = fit_stage_one(data, lib, "ols")
    crm = fit_stage_two(g, data, lib, seed=0)
    for name, t in zip(crm.feature_names, crm.theta):
        print(f"{name:>6s}  theta {t:+.3f}")
    print("planted: driver +0.500")

    save_pipeline(Path(tmp) / "model", g, crm, lib)
    g2, crm2, _ = load_pipeline(Path(tmp) / "model")
    same = np.allclose(crm2.predict(g2.predict_g(data.w[:5], data.z[:5])), crm.predict(g.predict_g(data.w[:5], data.z[:5])))
    print("reloaded pipeline predicts identically:", same)
