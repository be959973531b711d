"""Three-stage curriculum for the hierarchical world model.

Stage 1 shapes the representation: reconstruction through both decoder
paths, alignment of the structure-decoded content code with the
directly inferred one, variance/covariance regularizers against
collapse, and a smoothness penalty on the state trajectory.  Stage 2
freezes everything except the transition nets and teaches one-step
prediction on frame pairs.  Stage 3 finetunes the whole latent stack
jointly under a full autoregressive rollout seeded by the first
inferred state.  The codec never trains here; stage 0 (codec fitting)
lives in hmwm.codec.

Every optimizer step appends one CSV row whose weighted term columns
sum to the total, so the loss ledger doubles as an accounting check.
"""

import contextlib
import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalAbort, Tensor
from .dynamics import smoothness_penalty
from .losses import (mse, transition_loss, vicreg_covariance,
                     vicreg_variance)
from .optim import AdamW, CosineSchedule, clip_global_norm

COLUMNS = ("step", "stage", "lr", "total", "recon_p", "recon_g", "gen",
           "align_p", "align_g", "trans_mse", "trans_cos", "anti_copy",
           "var", "cov", "smooth")

# term columns in the order they are summed into the total
_TERM_ORDER = COLUMNS[4:]


@dataclass(frozen=True)
class LossWeights:
    """Stage-resolved weights; see stage_weights for the schedule."""
    recon_p: float = 5.0
    recon_g: float = 5.0
    gen: float = 3.0
    align_p: float = 1.0
    align_g: float = 5.0
    alpha: float = 1.0      # displacement direction term
    beta: float = 1.0       # anti-copy repulsion
    var: float = 0.05
    cov: float = 0.05
    smooth: float = 0.0
    gamma: float = 0.5      # variance hinge target
    eps: float = 1e-4


def stage_weights(stage: int) -> LossWeights:
    """Loss weights per curriculum stage.

    Stage 1 keeps the alignment pressure low (0.22) so the content code
    is shaped by reconstruction first, and is the only stage with the
    smoothness term.  Stages 2-3 raise alignment to 1.0 and the
    regularizers to 0.05.
    """
    if stage == 1:
        return LossWeights(align_p=0.22, var=0.01, cov=0.01, smooth=0.01)
    if stage in (2, 3):
        return LossWeights()
    raise ValueError(f"no loss schedule for stage {stage}")


@dataclass
class TrainConfig:
    seed: int = 0
    lr1: float = 1e-3
    lr2: float = 1e-3
    lr3: float = 3e-4
    weight_decay: float = 1e-4
    clip_norm: float = 0.1
    epochs1: int = 10
    epochs2: int = 10
    epochs3: int = 10
    batch1: int = 32
    batch2: int = 64
    batch3: int = 32
    log_every: int = 20

    def for_stage(self, stage: int):
        lr = {1: self.lr1, 2: self.lr2, 3: self.lr3}[stage]
        epochs = {1: self.epochs1, 2: self.epochs2, 3: self.epochs3}[stage]
        batch = {1: self.batch1, 2: self.batch2, 3: self.batch3}[stage]
        return lr, epochs, batch


def compute_losses(model, s_batch, stage: int, w: LossWeights):
    """Assemble the stage loss for one batch of codec embeddings.

    s_batch: (B, T, P, D_s).  Returns (total Tensor, parts) where parts
    maps term columns to weighted float values; terms a variant lacks
    are simply absent.  In stage 2 the representation pass runs without
    gradient tracking: only the transition nets train, so the phase-1
    terms are logged as constants instead of paying for a backward
    sweep through the encoder stacks.
    """
    if stage not in (1, 2, 3):
        raise ValueError(f"unknown training stage {stage}")
    s_np = np.asarray(s_batch, dtype=np.float64)
    if s_np.ndim != 4:
        raise ValueError(f"expected (B, T, P, D_s) batch, got {s_np.shape}")
    if stage >= 2 and s_np.shape[1] < 2:
        raise ValueError("transition stages need at least two frames")
    s = Tensor(s_np)

    terms = {}
    ctx = ad.no_grad() if stage == 2 else contextlib.nullcontext()
    with ctx:
        out = model.infer(s)
        p, g, state = out["p"], out["g"], out["state"]
        if model.has_hierarchy:
            terms["recon_p"] = w.recon_p * mse(model.decode_content(p), s)
            if model.has_structure:
                p_rec = model.decode_structure(g)
                terms["recon_g"] = w.recon_g * mse(
                    model.decode_content(p_rec), s)
                terms["align_p"] = w.align_p * mse(p_rec, p.detach())
            var_t = vicreg_variance(p, w.gamma, w.eps)
            cov_t = vicreg_covariance(p.reshape(-1, p.shape[-1]))
            if model.has_structure:
                var_t = var_t + vicreg_variance(g, w.gamma, w.eps)
                cov_t = cov_t + vicreg_covariance(g.reshape(-1, g.shape[-1]))
            terms["var"] = w.var * var_t
            terms["cov"] = w.cov * cov_t
            if w.smooth:
                terms["smooth"] = w.smooth * smoothness_penalty(
                    state, phase=model.is_phase)

    if stage >= 2:
        z = model.infer_codes(state)
        tgt = state.detach()
        if stage == 2:
            # teacher-forced one-step prediction from every inferred state
            gen_tail, dg_gen = model.step(state[:, :-1], z)
        else:
            full_gen, dg_gen = model.rollout(state[:, 0], z)
            gen_tail = full_gen[:, 1:]
        terms["align_g"] = w.align_g * model.state_mse(gen_tail, tgt[:, 1:])
        terms["gen"] = w.gen * mse(model.decode_states(gen_tail), s[:, 1:])
        dg_tgt = model.state_diff(tgt[:, 1:], tgt[:, :-1])
        _, tparts = transition_loss(dg_gen, dg_tgt, gen_tail, tgt[:, :-1],
                                    alpha=w.alpha, beta=w.beta,
                                    phase=model.is_phase)
        terms.update(tparts)

    total = None
    parts = {}
    for name in _TERM_ORDER:
        t = terms.get(name)
        if t is None:
            continue
        total = t if total is None else total + t
        parts[name] = float(t.data)
    if total is None:
        raise ValueError(
            f"variant {model.variant!r} contributes no terms in stage {stage}")
    return total, parts


def _stage2_pairs(n_seq: int, T: int) -> np.ndarray:
    """(N*(T-1), 2) array of (sequence, start-frame) pair indices."""
    seq = np.repeat(np.arange(n_seq), T - 1)
    t0 = np.tile(np.arange(T - 1), n_seq)
    return np.stack([seq, t0], axis=1)


def train_stage(model, s_all: np.ndarray, stage: int, tcfg: TrainConfig,
                progress=None, step_offset: int = 0):
    """Run one curriculum stage over the embedded corpus.

    s_all: (N, T, P, D_s) codec embeddings of the training sequences.
    Mutates model parameters in place and returns the list of loss rows
    (dicts keyed by COLUMNS).  `progress` is called with each logged
    row.  Raises NumericalAbort (with the step number) if any loss term
    goes non-finite.
    """
    params = model.params_for_stage(stage)
    if not params:
        warnings.warn(
            f"variant {model.variant!r} has no stage-{stage} parameters; "
            "skipping", stacklevel=2)
        return []
    w = stage_weights(stage)
    lr, epochs, batch = tcfg.for_stage(stage)
    all_params = [t for m in model.modules().values() for t in m.params()]

    n_seq, T = s_all.shape[0], s_all.shape[1]
    if stage == 2:
        pairs = _stage2_pairs(n_seq, T)
        n_items = len(pairs)
    else:
        n_items = n_seq
    full, rem = divmod(n_items, batch)
    steps_per_epoch = full + (1 if rem >= 2 else 0)
    if steps_per_epoch == 0:
        raise ValueError(f"stage {stage}: {n_items} items cannot fill a batch")
    total_steps = steps_per_epoch * epochs

    rng = np.random.default_rng([tcfg.seed, stage])
    opt = AdamW(params, lr=lr, weight_decay=tcfg.weight_decay)
    sched = CosineSchedule(lr, total_steps)
    rows = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_items)
        for start in range(0, n_items, batch):
            idx = order[start:start + batch]
            if idx.size < 2:
                continue
            if stage == 2:
                si, ti = pairs[idx, 0], pairs[idx, 1]
                s_batch = s_all[si[:, None], np.stack([ti, ti + 1], axis=1)]
            else:
                s_batch = s_all[idx]
            opt.lr = sched.lr_at(step)
            total, parts = compute_losses(model, s_batch, stage, w)
            if not np.isfinite(total.data):
                bad = [k for k, v in parts.items() if not np.isfinite(v)]
                raise NumericalAbort(
                    f"non-finite loss at stage {stage} step {step}"
                    + (f" (terms: {', '.join(bad)})" if bad else ""))
            for t in all_params:
                t.zero_grad()
            total.backward()
            clip_global_norm(params, tcfg.clip_norm)
            opt.step()
            row = {c: 0.0 for c in COLUMNS}
            row.update(parts)
            row["step"] = step_offset + step
            row["stage"] = stage
            row["lr"] = opt.lr
            row["total"] = float(total.data)
            rows.append(row)
            if progress and (step % tcfg.log_every == 0
                             or step == total_steps - 1):
                progress(row)
            step += 1
    return rows


def write_loss_csv(path, rows, append: bool = False):
    """Append-or-create the loss ledger with the canonical column set."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        out = csv.writer(fh)
        if not append:
            out.writerow(COLUMNS)
        for row in rows:
            out.writerow([row[c] for c in COLUMNS])


def read_loss_csv(path):
    """Loss ledger rows as dicts with numeric values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if key in ("step", "stage"):
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows
