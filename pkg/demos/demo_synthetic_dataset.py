"""Generate, validate and inspect a synthetic dataset.

The generator plants piecewise-constant sources with detail noise, a 7x8
grid of stand-in smoother outputs, and seeded votes; everything is byte-
reproducible from the spec and seed.
"""

import tempfile
from pathlib import Path

import numpy as np

from epsbench.dataset import (
    SynthSpec, load_and_validate, sample_patches, synth_generate, vote_statistics,
)

out = Path(tempfile.mkdtemp(prefix="epsbench_demo_"))
spec = SynthSpec(n_train=4, n_test=2, height=48, width=48, seed=3)
manifest_path, info = synth_generate(spec, out)
print(f"dataset written to {out}")
print(f"files: {sum(1 for p in out.rglob('*') if p.is_file())} "
      f"(sources, 56 candidates per image, manifest, vote log)")

ds = load_and_validate(manifest_path)
print(f"\nvalidated: {len(ds.manifest.images)} images, {len(ds.records)} votes")

stats = vote_statistics(ds)
top_m, top_votes = stats.top_method()
print("\n== vote statistics ==")
print("per-method totals:", [int(v) for v in stats.per_method])
print(f"top method m{top_m} with {top_votes}/{stats.total_votes} choices")
print("max repeated choices histogram:", stats.max_repeat_hist)
print(f"images with max repeat >= 3: {stats.images_with_max_repeat_at_least(3)}"
      f" of {stats.n_images}")

print("\n== groundtruth sets ==")
for t in ds.split_ids("train")[:2]:
    gts = ds.groundtruth_set(t)
    print(f"{t}: picks {gts.picks} weights {np.round(gts.weights, 3)}")

print("\n== patch sampling ==")
batch = sample_patches(ds, patch_size=24, batch_size=8, rng=np.random.default_rng(0))
print(f"batch x: {batch.x.shape}, targets: {batch.targets.shape}, "
      f"flips: {batch.flipped.sum()}/8")
print(f"weight rows sum to {batch.weights.sum(axis=1)}")
