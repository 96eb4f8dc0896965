"""A short training run: the protocol end to end on a small fixture.

Uses the VDCNN mini preset for speed (a few hundred steps rather than the
full overfit gate). Shows the loss trajectory, the single lr decay, and
before/after evaluation. Expect a couple of minutes of CPU time.
"""

import tempfile
from pathlib import Path

from epsbench.dataset import SynthSpec, load_and_validate, synth_generate
from epsbench.models import build_model
from epsbench.trainer import evaluate_split, train, vdcnn_mini_config

out = Path(tempfile.mkdtemp(prefix="epsbench_train_"))
spec = SynthSpec(n_train=3, n_test=1, height=48, width=48, seed=0,
                 vote_mode="concentrated", concentrated_target=(6, 4))
manifest_path, _ = synth_generate(spec, out)
ds = load_and_validate(manifest_path)

config = vdcnn_mini_config(max_steps=600, log_interval=50, val_interval=200)
print(f"model: {config.model.architecture} depth={config.model.depth} "
      f"width={config.model.width}; patch {config.patch_size}, "
      f"batch {config.batch_size}, loss {config.loss}")

untrained = build_model(config.model, seed=config.init_seed)
r0, a0 = evaluate_split(untrained, ds, "train")
print(f"untrained: WRMSE {r0:.2f}  WMAE {a0:.2f}")

result = train(ds, config, progress=lambda rec: print(
    f"  step {rec['step']:>4}  loss {rec['loss_norm']:.4f}  lr {rec['lr']:g}"
    + (f"  val WMAE {rec['wmae_val']:.2f}" if "wmae_val" in rec else "")))

print(f"\nstopped after {result.steps} steps")
for e in result.log.decay_events():
    print(f"lr decay at step {e['step']} ({e['reason']}): "
          f"{e['lr_from']:g} -> {e['lr_to']:g}")

r1, a1 = evaluate_split(result.model, ds, "train")
r2, a2 = evaluate_split(result.model, ds, "test")
print(f"trained:   train WRMSE {r1:.2f}  WMAE {a1:.2f}")
print(f"           test  WRMSE {r2:.2f}  WMAE {a2:.2f}")
