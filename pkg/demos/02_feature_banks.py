#!/usr/bin/env python
"""Object and patch memory banks on the synthetic world.

Both banks compress pooled training features with k-means and score a query
by cosine distance to the nearest centroid. When k covers the whole pool the
bank is just the pool, so the score is the exact nearest-neighbour distance.
"""
import numpy as np

from tribank.featbank import build_object_bank, build_patch_bank, lloyd
from tribank.featscore import object_anomaly_map, patch_anomaly_map
from tribank.synth import WorldSpec, generate_normal_scene, inject_anomaly

world = WorldSpec()
train = [generate_normal_scene(world, i) for i in range(30)]
print(train[0].image_id, len(train[0].objects), "objects", train[0].patches.grid, "patch grid")

# %% Lloyd iterations never increase the inertia.
pool = np.stack([f for s in train for f, _ in s.objects])
fit = lloyd(pool, k=12, seed=0)
print(pool.shape, "->", fit.centroids.shape)
print(np.round(fit.inertia_history, 3))

obank = build_object_bank(train, k=12)
pbank = build_patch_bank(train, k=64)

# %% A structural defect perturbs a small block of patch features only.
normal = generate_normal_scene(world, 500)
broken = inject_anomaly(normal, "structural", world, seed=3)
for name, q in (("normal", normal), ("structural", broken)):
    s_o = object_anomaly_map(q, obank)
    s_p = patch_anomaly_map(q, pbank)
    print(f"{name:>10}  object max {s_o.max():.3f}  patch max {s_p.max():.3f}")

s_p = patch_anomaly_map(broken, pbank).values
inside = s_p[broken.gt_anomaly.bits].mean()
outside = s_p[~broken.gt_anomaly.bits].mean()
print(f"mean patch score inside the defect {inside:.3f}, outside {outside:.3f}")
