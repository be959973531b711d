"""Train a reduced model end to end and keep the checkpoint for the
other demos.

Runs the full curriculum: frozen patch codec, then representation
learning, then transition models on frame pairs, then joint finetuning
through autoregressive rollouts.  A few minutes on one core; artifacts
land in demos/out/mini/.
"""

import os
import time

import numpy as np

from hmwm import worldgen as wg
from hmwm.codec import train_codec
from hmwm.model import ModelConfig
from hmwm.training import TrainConfig, train_stage, write_loss_csv
from hmwm.variants import WorldModel

OUT = os.path.join(os.path.dirname(__file__), "out", "mini")
os.makedirs(OUT, exist_ok=True)

# reduced from the desk defaults (depth 2, 2000 sequences, 10 epochs)
# to keep this demo interactive
mcfg = ModelConfig(spatial_depth=1, temporal_depth=1)
tcfg = TrainConfig(epochs1=4, epochs2=4, epochs3=3)

cfg = wg.WorldConfig(T=8, instances=wg.make_instance_pool(48, seed=1))
records = wg.generate_archive_records(master_seed=1, count=400, cfg=cfg)
frames = np.stack([r.frames for r in records])
print(f"training on {len(records)} sequences")

t0 = time.time()
codec = train_codec(records, steps=800, seed=0, d_s=mcfg.D_s)
recon = codec.decode(codec.encode(frames[:32]))
print(f"codec: {time.time()-t0:.0f}s, "
      f"pixel MSE {np.mean((recon - frames[:32])**2):.5f}")

model = WorldModel(mcfg, codec, "full", seed=0)
s_all = model.encode_frames(frames)

rows = []
for stage in (1, 2, 3):
    t0 = time.time()
    stage_rows = train_stage(model, s_all, stage, tcfg,
                             step_offset=len(rows))
    rows += stage_rows
    first, last = stage_rows[0]["total"], stage_rows[-1]["total"]
    print(f"stage {stage}: {len(stage_rows)} steps in {time.time()-t0:.0f}s, "
          f"total {first:.4f} -> {last:.4f}")

ckpt = os.path.join(OUT, "stage3.npz")
model.save(ckpt)
write_loss_csv(os.path.join(OUT, "loss.csv"), rows)
print(f"saved {ckpt}")

# quick sanity: does one-step prediction beat copying the frame?
from hmwm.evaluation import copy_baseline_ssim, mean_ssim_over_steps, \
    rollout_metrics

held = wg.generate_archive_records(master_seed=77, count=40, cfg=cfg)
metric_rows = rollout_metrics(model, held, schedules=("all",))
one_step = mean_ssim_over_steps(metric_rows, "all", 2, cfg.T)
print(f"held-out one-step SSIM {one_step:.3f} "
      f"vs copy-previous {copy_baseline_ssim(held):.3f}")
