"""What do the learned latents carry?  Classifier probes.

Loads the checkpoint from 02_train_mini.py (or the one named in
HMWM_DEMO_CKPT) and asks: which embedding can tell the four transition
kinds apart, and which per-frame state knows the shape category?

The intended picture: transition codes z and structure differences
carry the motion kind almost perfectly; per-frame states barely do.
Shape category reads out of the content state better than the
structure state would suggest, and less out of the compact one.
"""

import os
import sys

import numpy as np

from hmwm import worldgen as wg
from hmwm.evaluation import category_by_state, probe_transition_types
from hmwm.variants import load_world_model

ckpt = os.environ.get(
    "HMWM_DEMO_CKPT",
    os.path.join(os.path.dirname(__file__), "out", "mini", "stage3.npz"))
if not os.path.exists(ckpt):
    sys.exit(f"no checkpoint at {ckpt}; run 02_train_mini.py first")

model = load_world_model(ckpt)
print(f"loaded {ckpt} (variant={model.variant}, T={model.cfg.T})")

cfg = wg.WorldConfig(T=model.cfg.T,
                     instances=wg.make_instance_pool(40, seed=9))
records = wg.generate_archive_records(master_seed=55, count=240, cfg=cfg)
print(f"probing on {len(records)} fresh sequences, "
      f"{len(set(wg.instance_key(r) for r in records))} shape instances")

# -- transition-kind probes ---------------------------------------------------

seeds = (0, 1, 2, 3, 4)
print("\n4-way transition kind, instance-held-out test accuracy:")
results = probe_transition_types(model, records, seeds=seeds)
order = sorted(results, key=lambda n: -results[n].mean)
for name in order:
    r = results[name]
    print(f"  {name:8s} {r.mean:.3f} +- {r.std:.3f}")
print("  (chance = 0.25)")

best = results[order[0]]
print(f"\nconfusion for {best.embedding_name} "
      f"(rows=true, summed over {len(seeds)} seeds):")
width = max(len(c) for c in best.class_names)
for cname, row in zip(best.class_names, best.confusion):
    cells = " ".join(f"{v:5d}" for v in row)
    print(f"  {cname:{width}s} {cells}")

# -- shape category from per-frame states ------------------------------------

print("\nshape kind from a single frame's state:")
cats = category_by_state(model, records, seeds=seeds)
for name, r in sorted(cats.items()):
    print(f"  {name:8s} test {r.mean:.3f} +- {r.std:.3f}   "
          f"train {r.train_mean:.3f}")
n_kinds = len({r.shape.kind for r in records})
print(f"  (chance = {1 / n_kinds:.3f})")
