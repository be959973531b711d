"""Transitions as portable programs: transfer, composition, null code.

Three experiments on the demo checkpoint:

1. Transfer: infer z codes from one sequence, apply them to a scene
   holding a different shape.  The similarity ratio R compares the
   generation against "target shape under source motion" (content)
   versus the source's own frames (appearance); R > 1 means the codes
   moved the new shape instead of redrawing the old one.
2. Composition: z(right) + z(up) rolled out against z(diagonal).
3. Null code: feed the inverse model a zero displacement; the
   prediction should stay put rather than track the true next frame.

Frames land in demos/out/transfer/.
"""

import os
import sys

import numpy as np

from hmwm import worldgen as wg
from hmwm.evaluation import (composition_test, transfer_generate,
                             write_ppm, zero_z_metrics)
from hmwm.variants import load_world_model

HERE = os.path.dirname(__file__)
ckpt = os.environ.get("HMWM_DEMO_CKPT",
                      os.path.join(HERE, "out", "mini", "stage3.npz"))
if not os.path.exists(ckpt):
    sys.exit(f"no checkpoint at {ckpt}; run 02_train_mini.py first")
OUT = os.path.join(HERE, "out", "transfer")
os.makedirs(OUT, exist_ok=True)

model = load_world_model(ckpt)
T = model.cfg.T

# -- 1. transfer across shapes ------------------------------------------------

cfg = wg.WorldConfig(T=T, instances=wg.make_instance_pool(24, seed=3))
records = wg.generate_archive_records(master_seed=21, count=40, cfg=cfg)
src = next(r for r in records if r.label.kind == "rotation")
tgt = next(r for r in records if r.shape.kind != src.shape.kind)
print(f"source: {src.shape.kind} doing {src.label.kind} "
      f"{src.label.magnitude:+.1f}")
print(f"target: {tgt.shape.kind}")

one, auto, content, rep = transfer_generate(model, src, tgt, horizon=T - 1)
print(f"R one-step       {rep.r_one_step:.3f} +- {rep.r_one_step_std:.3f}")
print(f"R autoregressive {rep.r_autoregressive:.3f} "
      f"+- {rep.r_autoregressive_std:.3f}")
print(f"SSIM vs content: one-step {rep.ssim_one_step:.3f}, "
      f"autoregressive {rep.ssim_autoregressive:.3f}")
for t in range(T - 1):
    write_ppm(os.path.join(OUT, f"source_{t+2}.ppm"), src.frames[t + 1])
    write_ppm(os.path.join(OUT, f"content_{t+2}.ppm"), content[t + 1])
    write_ppm(os.path.join(OUT, f"generated_{t+2}.ppm"), one[t])

# -- 2. composing translations ------------------------------------------------

shape = wg.ShapeSpec("triangle", (0.2, 0.7, 0.9))
comp = composition_test(model, shape, n_steps=min(7, T - 1))
print(f"\ncomposition: SSIM real {comp['ssim_real']:.3f}, "
      f"composed {comp['ssim_composed']:.3f}, gap {comp['gap']:.3f}")

# -- 3. the null transition ---------------------------------------------------

zz = zero_z_metrics(model, records[:20])
print(f"\nzero-input code: prediction closer to its own source frame on "
      f"{100 * zz['fraction_prev']:.0f}% of {zz['n_steps']} steps")
print(f"  SSIM vs source recon {zz['ssim_prev']:.3f}, "
      f"vs true next {zz['ssim_next']:.3f}")
print(f"\nframes in {OUT}/")
