"""Analysis suite: probes, category decoding, transfer, rollouts.

Everything here is pure given a trained model and an archive: the same
seeds reproduce the same numbers.  Feature extraction runs without
gradient tracking and is chunked so desk-scale archives fit comfortably
in memory.

The linear-probe protocol follows one recipe throughout: a 2x128-unit
ReLU MLP trained with cross-entropy for 30 epochs at batch 128 using
decoupled-decay Adam defaults (lr 1e-3, weight decay 0.01), splits
drawn by shape instance so no instance crosses train/test, and results
averaged over several seeds.
"""

import csv
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dynamics import wrap
from .metrics import pca_project, ssim
from .nnet import Linear
from .optim import AdamW
from .worldgen import (BACKGROUND, LABEL_KINDS, SHAPE_KINDS, GenerationError,
                       Pose, advance_pose, instance_key, quantize,
                       render_frame)

EMBEDDING_NAMES = ("p_inf", "g_inf", "dp_inf", "dg_inf", "z")

_COS_EPS = 1e-30


# -- feature extraction -------------------------------------------------------


def _stack_frames(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data
    return np.stack([rec.frames for rec in data])


def embed_sequences(model, data, chunk: int = 32) -> dict:
    """Run the inference hierarchy over an archive, without gradients.

    data: (N, T, H, W, C) frames or a list of SequenceRecords.  Returns
    arrays keyed "s", "state", "z", plus "p"/"g" when the variant has
    them and "dp_inf"/"dg_inf" step differences.  z comes from the
    inverse model on inferred state differences.
    """
    frames = _stack_frames(data)
    s = model.encode_frames(frames)
    chunks = {"p": [], "g": [], "state": [], "z": []}
    with ad.no_grad():
        for i in range(0, len(s), chunk):
            out = model.infer(Tensor(s[i:i + chunk]))
            state = out["state"]
            chunks["state"].append(state.data.copy())
            chunks["z"].append(model.infer_codes(state).data.copy())
            for key in ("p", "g"):
                if out[key] is not None:
                    chunks[key].append(out[key].data.copy())
    embeds = {"s": s}
    for key, parts in chunks.items():
        if parts:
            embeds[key] = np.concatenate(parts, axis=0)
    if "p" in embeds:
        embeds["dp_inf"] = embeds["p"][:, 1:] - embeds["p"][:, :-1]
    if "g" in embeds:
        embeds["dg_inf"] = wrap(embeds["g"][:, 1:] - embeds["g"][:, :-1])
    return embeds


def transition_probe_features(embeds: dict, name: str) -> np.ndarray:
    """Per-transition feature rows (N*(T-1), d) for one embedding name.

    Step embeddings (p_inf, g_inf) are taken at the step's source frame
    so every embedding yields the same sample count.
    """
    if name == "z":
        arr = embeds["z"]
    elif name in ("dp_inf", "dg_inf"):
        if name not in embeds:
            raise ValueError(f"embedding {name!r} not available for this model")
        arr = embeds[name]
    elif name in ("p_inf", "g_inf"):
        key = name[0]
        if key not in embeds:
            raise ValueError(f"embedding {name!r} not available for this model")
        arr = embeds[key][:, :-1]
    else:
        raise ValueError(f"unknown embedding name {name!r}; "
                         f"expected one of {EMBEDDING_NAMES}")
    N, S = arr.shape[:2]
    return arr.reshape(N * S, -1)


def state_category_features(embeds: dict, name: str) -> np.ndarray:
    """Per-frame feature rows (N*T, d) from p_inf or g_inf."""
    key = {"p_inf": "p", "g_inf": "g"}.get(name)
    if key is None:
        raise ValueError(f"category decoding wants p_inf or g_inf, got {name!r}")
    if key not in embeds:
        raise ValueError(f"embedding {name!r} not available for this model")
    arr = embeds[key]
    N, T = arr.shape[:2]
    return arr.reshape(N * T, -1)


# -- probe protocol -----------------------------------------------------------


def instance_split(instance_ids, labels, test_fraction: float, rng):
    """Leak-free train/test sample indices grouped by shape instance.

    When every instance carries a single label the split is stratified
    per class; otherwise instances are shuffled globally.  Fails if
    either side would lose a class entirely.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("probe needs at least two classes present")
    groups = {}
    for i, key in enumerate(instance_ids):
        groups.setdefault(key, []).append(i)
    inst_labels = {k: set(labels[idx] for idx in v) for k, v in groups.items()}
    single_labeled = all(len(v) == 1 for v in inst_labels.values())

    def pick(keys):
        keys = sorted(keys, key=str)
        rng.shuffle(keys)
        n_test = max(1, round(test_fraction * len(keys)))
        if n_test >= len(keys):
            raise ValueError(
                f"need at least 2 instances to split, got {len(keys)}")
        return keys[:n_test]

    if single_labeled:
        test_keys = []
        for c in classes:
            test_keys.extend(pick([k for k, v in inst_labels.items()
                                   if c in v]))
        test_keys = set(test_keys)
    else:
        test_keys = set(pick(list(groups)))

    test_idx = np.array(sorted(i for k in test_keys for i in groups[k]))
    train_idx = np.array(sorted(i for k, v in groups.items()
                                if k not in test_keys for i in v))
    for side, idx in (("train", train_idx), ("test", test_idx)):
        if set(np.unique(labels[idx])) != set(classes):
            raise ValueError(f"{side} split lost a class; need more instances")
    return train_idx, test_idx


class _MlpClassifier:
    """The fixed probe head: 2 hidden ReLU layers of 128 units."""

    def __init__(self, rng, d_in: int, n_classes: int, hidden: int = 128):
        self.fc1 = Linear(rng, d_in, hidden)
        self.fc2 = Linear(rng, hidden, hidden)
        self.fc3 = Linear(rng, hidden, n_classes)

    def params(self):
        return self.fc1.params() + self.fc2.params() + self.fc3.params()

    def logits(self, x):
        h = ad.relu(self.fc1(x))
        h = ad.relu(self.fc2(h))
        return self.fc3(h)

    def predict(self, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
        out = []
        with ad.no_grad():
            for i in range(0, len(X), chunk):
                out.append(np.argmax(self.logits(Tensor(X[i:i + chunk])).data,
                                     axis=-1))
        return np.concatenate(out) if out else np.array([], dtype=int)


def _fit_classifier(X, y, n_classes, seed, epochs=30, batch=128,
                    lr=1e-3, weight_decay=0.01):
    rng = np.random.default_rng([seed, 101])
    clf = _MlpClassifier(rng, X.shape[1], n_classes)
    opt = AdamW(clf.params(), lr=lr, weight_decay=weight_decay)
    n = len(X)
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, batch):
            idx = order[i:i + batch]
            xb = Tensor(X[idx])
            logp = ad.log_softmax(clf.logits(xb), axis=-1)
            picked = logp[np.arange(len(idx)), y[idx]]
            loss = -(picked.mean())
            for t in clf.params():
                t.zero_grad()
            loss.backward()
            opt.step()
    return clf


def _standardize(train: np.ndarray, *others):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd < 1e-8] = 1.0
    return tuple((arr - mu) / sd for arr in (train,) + others)


@dataclass
class ProbeResult:
    embedding_name: str
    accuracies: tuple          # per seed, test side
    mean: float
    std: float
    confusion: np.ndarray      # (K, K) counts summed over seeds
    class_names: tuple
    train_accuracies: tuple = ()

    @property
    def train_mean(self) -> float:
        return float(np.mean(self.train_accuracies)) \
            if self.train_accuracies else float("nan")


def train_probe(features, labels, instance_ids, seeds=(0, 1, 2, 3, 4),
                class_names=None, test_fraction=0.25, epochs=30, batch=128,
                standardize=True, name="") -> ProbeResult:
    """Fixed-recipe classifier probe over several seeds.

    Each seed draws its own instance-level split and classifier init.
    Returns test accuracy mean/std, summed confusion counts, and
    per-seed train accuracy.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if len(X) != len(y) or len(y) != len(instance_ids):
        raise ValueError("features, labels, instances must align")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("probe needs at least two classes present")
    if class_names is None:
        class_names = tuple(str(c) for c in classes)
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[v] for v in y])
    K = len(classes)

    accs, train_accs = [], []
    confusion = np.zeros((K, K), dtype=np.int64)
    for seed in seeds:
        rng = np.random.default_rng([seed, 7])
        tr, te = instance_split(instance_ids, y, test_fraction, rng)
        X_tr, X_te = X[tr], X[te]
        if standardize:
            X_tr, X_te = _standardize(X_tr, X_te)
        clf = _fit_classifier(X_tr, y[tr], K, seed, epochs, batch)
        pred_te = clf.predict(X_te)
        pred_tr = clf.predict(X_tr)
        accs.append(float(np.mean(pred_te == y[te])))
        train_accs.append(float(np.mean(pred_tr == y[tr])))
        np.add.at(confusion, (y[te], pred_te), 1)
    return ProbeResult(name, tuple(accs), float(np.mean(accs)),
                       float(np.std(accs)), confusion, tuple(class_names),
                       tuple(train_accs))


def probe_transition_types(model, records, names=EMBEDDING_NAMES,
                           seeds=(0, 1, 2, 3, 4), **kw) -> dict:
    """Transition-kind (4-way) probes for each requested embedding."""
    embeds = embed_sequences(model, records)
    T = embeds["state"].shape[1]
    kinds = [rec.label.kind for rec in records]
    y_seq = np.array([LABEL_KINDS.index(k) for k in kinds])
    y = np.repeat(y_seq, T - 1)
    inst = [instance_key(rec) for rec in records]
    inst = [k for k in inst for _ in range(T - 1)]
    out = {}
    for name in names:
        X = transition_probe_features(embeds, name)
        out[name] = train_probe(X, y, inst, seeds,
                                class_names=LABEL_KINDS, name=name, **kw)
    return out


def category_decoder(features, labels, instance_ids, seeds=(0, 1, 2, 3, 4),
                     class_names=None, name="", **kw) -> ProbeResult:
    """Shape-class decoder; same recipe, train accuracy kept alongside."""
    return train_probe(features, labels, instance_ids, seeds,
                       class_names=class_names, name=name, **kw)


def category_by_state(model, records, names=("p_inf", "g_inf"),
                      seeds=(0, 1, 2, 3, 4), **kw) -> dict:
    """Shape-kind decoding from per-frame state embeddings."""
    embeds = embed_sequences(model, records)
    T = embeds["state"].shape[1]
    present = sorted({rec.shape.kind for rec in records},
                     key=SHAPE_KINDS.index)
    y_seq = np.array([present.index(rec.shape.kind) for rec in records])
    y = np.repeat(y_seq, T)
    inst = [k for rec in records for k in [instance_key(rec)] * T]
    out = {}
    for name in names:
        X = state_category_features(embeds, name)
        out[name] = category_decoder(X, y, inst, seeds,
                                     class_names=present, name=name, **kw)
    return out


# -- transfer -----------------------------------------------------------------


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)
                                 + _COS_EPS))


def render_under_dynamics(shape, pose0: Pose, label, n_frames: int,
                          H: int, W: int) -> np.ndarray:
    """Ground-truth frames of `shape` starting at pose0 and advancing
    per `label` each step.  Quantized like archive frames."""
    frames = []
    pose = pose0
    for t in range(n_frames):
        frames.append(render_frame(shape, pose, H, W))
        if t < n_frames - 1:
            pose = advance_pose(pose, label.kind, label.magnitude)
    return quantize(np.stack(frames))


@dataclass
class TransferReport:
    r_one_step: float
    r_one_step_std: float
    r_autoregressive: float
    r_autoregressive_std: float
    ssim_one_step: float
    ssim_autoregressive: float
    per_step: tuple = ()      # dict rows for CSV export


def transfer_generate(model, source, target, horizon: int):
    """Drive the target scene with the source sequence's transitions.

    source, target: SequenceRecords sharing frame dims.  The z codes
    come from the source via encode + inverse model; generation starts
    from the target's first inferred state.  Returns (one-step frames,
    autoregressive frames, content frames, TransferReport).

    R per step is cos(E(gen), E(content)) / cos(E(gen), E(action)),
    where E is the frozen codec encoder pooled over patches, content is
    the target shape re-rendered under the source dynamics, and action
    is the source's own frame.  R > 1 means the generation tracks the
    target's content rather than the source's appearance.
    """
    T_src = source.frames.shape[0]
    if not 1 <= horizon <= T_src - 1:
        raise ValueError(
            f"horizon {horizon} outside available source transitions "
            f"1..{T_src - 1}")
    if source.frames.shape[1:] != target.frames.shape[1:]:
        raise ValueError(
            f"frame dims differ: {source.frames.shape[1:]} vs "
            f"{target.frames.shape[1:]}")
    H, W = source.frames.shape[1:3]

    content = render_under_dynamics(target.shape, target.pose0, source.label,
                                    horizon + 1, H, W)

    with ad.no_grad():
        emb_src = embed_sequences(model, source.frames[None])
        z = Tensor(emb_src["z"][:, :horizon])
        state_c = model.infer(Tensor(model.encode_frames(content[None])))["state"]
        auto, _ = model.rollout(state_c[:, 0], z)
        fed, _ = model.rollout(state_c[:, 0], z,
                               schedule=range(1, horizon + 1),
                               state_inf=state_c)
        frames_auto = model.codec.decode(
            model.decode_states(auto[:, 1:]).data)[0]
        frames_one = model.codec.decode(
            model.decode_states(fed[:, 1:]).data)[0]

    E = model.codec.global_features
    rows, r_one, r_auto, s_one, s_auto = [], [], [], [], []
    for t in range(1, horizon + 1):
        e_content = E(content[t])
        e_action = E(source.frames[t])
        for tag, frames, r_acc, s_acc in (
                ("one_step", frames_one, r_one, s_one),
                ("autoregressive", frames_auto, r_auto, s_auto)):
            e_gen = E(frames[t - 1])
            r = _cos(e_gen, e_content) / _cos(e_gen, e_action)
            s = ssim(frames[t - 1], content[t])
            r_acc.append(r)
            s_acc.append(s)
            rows.append({"mode": tag, "step": t, "R": r, "ssim": s})
    report = TransferReport(
        float(np.mean(r_one)), float(np.std(r_one)),
        float(np.mean(r_auto)), float(np.std(r_auto)),
        float(np.mean(s_one)), float(np.mean(s_auto)),
        tuple(rows))
    return frames_one, frames_auto, content, report


def transfer_suite(model, records, seeds=(0, 1, 2, 3, 4), n_pairs: int = 8,
                   horizon: int = 0, max_tries: int = 50):
    """Mean R over sampled source/target pairs, one row per seed.

    Pairs whose target cannot host the source dynamics in-frame are
    resampled (the renderer refuses clipped shapes).
    """
    if len(records) < 2:
        raise ValueError("transfer needs at least two records")
    horizon = horizon or records[0].frames.shape[0] - 1
    rows = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 23])
        reports = []
        tries = 0
        while len(reports) < n_pairs:
            if tries >= max_tries * n_pairs:
                raise GenerationError(
                    f"could not find {n_pairs} feasible transfer pairs")
            tries += 1
            i, j = rng.choice(len(records), size=2, replace=False)
            try:
                *_, rep = transfer_generate(model, records[i], records[j],
                                            horizon)
            except GenerationError:
                continue
            reports.append(rep)
        rows.append({
            "seed": seed,
            "R_one_step": float(np.mean([r.r_one_step for r in reports])),
            "R_autoregressive": float(np.mean(
                [r.r_autoregressive for r in reports])),
            "ssim_one_step": float(np.mean([r.ssim_one_step
                                            for r in reports])),
            "ssim_autoregressive": float(np.mean(
                [r.ssim_autoregressive for r in reports])),
            "n_pairs": n_pairs,
        })
    return rows


# -- rollout metrics ----------------------------------------------------------

SCHEDULES = ("none", "4", "all")


def parse_schedule(spec_str: str, n_steps: int):
    """Schedule name or comma list of 1-based steps -> tuple of steps."""
    s = str(spec_str).strip()
    if s in ("none", ""):
        return ()
    if s == "all":
        return tuple(range(1, n_steps + 1))
    try:
        steps = tuple(sorted({int(tok) for tok in s.split(",")}))
    except ValueError:
        raise ValueError(f"bad schedule {spec_str!r}; want 'none', 'all', "
                         "or comma-separated steps") from None
    return steps


def rollout_metrics(model, records, schedules=SCHEDULES, chunk: int = 32):
    """Per-step SSIM and mean absolute latent error per feedback schedule.

    Returns rows {schedule, step, ssim, latent_err, n}; step is the
    1-based frame index of the predicted frame (2..T).
    """
    frames = _stack_frames(records)
    N, T = frames.shape[:2]
    n_steps = T - 1
    acc = {name: {"ssim": np.zeros(n_steps), "lat": np.zeros(n_steps)}
           for name in schedules}
    s_all = model.encode_frames(frames)
    with ad.no_grad():
        for i in range(0, N, chunk):
            fr = frames[i:i + chunk]
            state = model.infer(Tensor(s_all[i:i + chunk]))["state"]
            z = model.infer_codes(state)
            for name in schedules:
                sched = parse_schedule(name, n_steps)
                gen, _ = model.rollout(state[:, 0], z, schedule=sched,
                                       state_inf=state)
                dec = model.codec.decode(model.decode_states(gen[:, 1:]).data)
                err = np.abs(model.state_diff(gen[:, 1:], state[:, 1:]).data)
                for b in range(len(fr)):
                    for t in range(n_steps):
                        acc[name]["ssim"][t] += ssim(dec[b, t], fr[b, t + 1])
                acc[name]["lat"] += err.mean(axis=(0, 2, 3)) * len(fr)
    rows = []
    for name in schedules:
        for t in range(n_steps):
            rows.append({"schedule": name, "step": t + 2,
                         "ssim": acc[name]["ssim"][t] / N,
                         "latent_err": acc[name]["lat"][t] / N, "n": N})
    return rows


def mean_ssim_over_steps(rows, schedule: str, lo: int, hi: int) -> float:
    """Mean SSIM of one schedule over predicted frames lo..hi inclusive."""
    vals = [r["ssim"] for r in rows
            if r["schedule"] == schedule and lo <= r["step"] <= hi]
    if not vals:
        raise ValueError(f"no rows for schedule {schedule!r} in {lo}..{hi}")
    return float(np.mean(vals))


def one_step_latent_error(model, records, chunk: int = 32) -> float:
    """Mean absolute state error of teacher-forced one-step predictions."""
    frames = _stack_frames(records)
    s_all = model.encode_frames(frames)
    total, count = 0.0, 0
    with ad.no_grad():
        for i in range(0, len(frames), chunk):
            state = model.infer(Tensor(s_all[i:i + chunk]))["state"]
            z = model.infer_codes(state)
            nxt, _ = model.step(state[:, :-1], z)
            err = np.abs(model.state_diff(nxt, state[:, 1:]).data)
            total += err.sum()
            count += err.size
    return total / count


def zero_z_metrics(model, records, chunk: int = 32):
    """Behavior with the inverse-model input zeroed out.

    The transition code becomes f_inv(0); a healthy model then predicts
    "no movement", so each prediction should resemble the
    reconstruction of its source frame more than the true next frame.
    Returns {"fraction_prev": share of steps where that holds,
    "ssim_prev": mean, "ssim_next": mean, "n_steps": count}.
    """
    frames = _stack_frames(records)
    s_all = model.encode_frames(frames)
    wins, total = 0, 0
    ssim_prev_acc, ssim_next_acc = 0.0, 0.0
    with ad.no_grad():
        for i in range(0, len(frames), chunk):
            fr = frames[i:i + chunk]
            state = model.infer(Tensor(s_all[i:i + chunk]))["state"]
            z_shape = model.infer_codes(state).shape
            dg_zero = Tensor(np.zeros(
                state.data[:, :-1].shape, dtype=np.float64))
            z0 = model.f_inv(dg_zero)
            assert z0.shape == z_shape
            nxt, _ = model.step(state[:, :-1], z0)
            pred = model.codec.decode(model.decode_states(nxt).data)
            recon = model.codec.decode(
                model.decode_states(state[:, :-1]).data)
            for b in range(len(fr)):
                for t in range(nxt.shape[1]):
                    sp = ssim(pred[b, t], recon[b, t])
                    sn = ssim(pred[b, t], fr[b, t + 1])
                    ssim_prev_acc += sp
                    ssim_next_acc += sn
                    wins += sp > sn
                    total += 1
    return {"fraction_prev": wins / total, "ssim_prev": ssim_prev_acc / total,
            "ssim_next": ssim_next_acc / total, "n_steps": total}


# -- composition --------------------------------------------------------------


def composition_test(model, shape, scale: float = 5.0, dx: float = 1.0,
                     dy: float = 1.0, n_steps: int = 7, H: int = 32,
                     W: int = 32):
    """Latent-addition parity on translation sequences.

    Renders horizontal, vertical, and diagonal sequences of `shape`
    from one start pose, infers z codes for each, then compares frames
    generated from z_h + z_v against frames generated from z_diag,
    both scored by SSIM against the true diagonal frames.
    """
    pose0 = Pose((W - n_steps * dx) / 2.0, (H - n_steps * dy) / 2.0,
                 0.0, scale)
    T = n_steps + 1

    def seq(step_dx, step_dy):
        frames, pose = [], pose0
        for t in range(T):
            frames.append(render_frame(shape, pose, H, W))
            pose = replace(pose, cx=pose.cx + step_dx, cy=pose.cy + step_dy)
        return quantize(np.stack(frames))

    f_h, f_v, f_d = seq(dx, 0.0), seq(0.0, dy), seq(dx, dy)
    with ad.no_grad():
        states = {k: model.infer(Tensor(model.encode_frames(f[None])))["state"]
                  for k, f in (("h", f_h), ("v", f_v), ("d", f_d))}
        z = {k: model.infer_codes(v) for k, v in states.items()}
        z_comp = z["h"] + z["v"]
        start = states["d"][:, 0]
        gen_real, _ = model.rollout(start, z["d"])
        gen_comp, _ = model.rollout(start, z_comp)
        dec_real = model.codec.decode(
            model.decode_states(gen_real[:, 1:]).data)[0]
        dec_comp = model.codec.decode(
            model.decode_states(gen_comp[:, 1:]).data)[0]
    rows = []
    for t in range(n_steps):
        rows.append({"step": t + 2,
                     "ssim_real": ssim(dec_real[t], f_d[t + 1]),
                     "ssim_composed": ssim(dec_comp[t], f_d[t + 1])})
    ssim_real = float(np.mean([r["ssim_real"] for r in rows]))
    ssim_comp = float(np.mean([r["ssim_composed"] for r in rows]))
    return {"ssim_real": ssim_real, "ssim_composed": ssim_comp,
            "gap": abs(ssim_real - ssim_comp), "per_step": rows,
            "frames_real": dec_real, "frames_composed": dec_comp,
            "frames_truth": f_d}


# -- image-side oracles -------------------------------------------------------


def foreground_mask(frame: np.ndarray, tol: float = 0.1) -> np.ndarray:
    """Pixels that differ from the uniform gray background."""
    return np.max(np.abs(frame - BACKGROUND), axis=-1) > tol


def foreground_color(frame: np.ndarray, tol: float = 0.1) -> np.ndarray:
    mask = foreground_mask(frame, tol)
    if not mask.any():
        raise ValueError("no foreground pixels above tolerance")
    return frame[mask].mean(axis=0)


def estimate_orientation(frame: np.ndarray, tol: float = 0.05) -> float:
    """Principal-axis angle of the foreground, radians in (-pi/2, pi/2].

    Second moments weighted by distance from the background color, so
    anti-aliased edge pixels contribute sub-pixel information (roughly
    7x less angular error than a binary mask at this raster size).
    Orientation is defined modulo pi and only meaningful for elongated
    shapes.
    """
    w = np.max(np.abs(frame - BACKGROUND), axis=-1)
    w = np.where(w > tol, w, 0.0)
    if np.count_nonzero(w) < 4:
        raise ValueError("too few foreground pixels for orientation")
    ys, xs = np.mgrid[0:frame.shape[0], 0:frame.shape[1]]
    # image rows grow downward; flip to the renderer's y-up convention
    ys = -ys.astype(np.float64)
    xs = xs.astype(np.float64)
    m = w.sum()
    xs -= (w * xs).sum() / m
    ys -= (w * ys).sum() / m
    mu20 = (w * xs * xs).sum() / m
    mu02 = (w * ys * ys).sum() / m
    mu11 = (w * xs * ys).sum() / m
    theta = 0.5 * np.arctan2(2.0 * mu11, mu20 - mu02)
    if theta <= -np.pi / 2:
        theta += np.pi
    elif theta > np.pi / 2:
        theta -= np.pi
    return float(theta)


def orientation_change(a: float, b: float) -> float:
    """Smallest angular change b-a under the mod-pi axis ambiguity."""
    d = b - a
    while d > np.pi / 2:
        d -= np.pi
    while d <= -np.pi / 2:
        d += np.pi
    return float(d)


# -- report writers -----------------------------------------------------------


def copy_baseline_ssim(records) -> float:
    """Mean SSIM of each frame against its successor (copy-prev floor)."""
    frames = _stack_frames(records)
    vals = [ssim(frames[n, t], frames[n, t + 1])
            for n in range(frames.shape[0]) for t in range(frames.shape[1] - 1)]
    return float(np.mean(vals))


def write_ppm(path, frame: np.ndarray):
    """Binary PPM (P6, maxval 255) from one float frame in [0, 1]."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"want an (H, W, 3) frame, got {arr.shape}")
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(u8.tobytes())


def write_metrics_csv(path, rows, columns=None):
    if not rows and columns is None:
        raise ValueError("cannot infer columns from zero rows")
    columns = list(columns) if columns else list(rows[0])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(columns)
        for row in rows:
            out.writerow([row[c] for c in columns])


def write_summary_json(path, payload: dict):
    def default(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.integer, np.floating)):
            return obj.item()
        raise TypeError(f"not JSON-serializable: {type(obj)}")

    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=default)
        fh.write("\n")


def pca_rows(embeds: dict, name: str, k: int = 2):
    """Flattened per-frame embeddings -> PCA coordinate rows for CSV."""
    key = {"p_inf": "p", "g_inf": "g", "z": "z", "state": "state",
           "s": "s"}.get(name)
    if key is None or key not in embeds:
        raise ValueError(f"no embedding {name!r} to project")
    arr = embeds[key]
    N, S = arr.shape[:2]
    flat = arr.reshape(N * S, -1)
    coords = pca_project(flat, k)
    rows = []
    for i in range(N * S):
        row = {"sequence": i // S, "step": i % S}
        for j in range(k):
            row[f"c{j + 1}"] = coords[i, j]
        rows.append(row)
    return rows


# -- ablation driver ----------------------------------------------------------


def run_ablation(variant, train_records, eval_records, mcfg, tcfg, codec,
                 seed: int = 0, probe_seeds=(0, 1, 2), n_transfer_pairs=4,
                 transfer_seeds=(0, 1), schedules=SCHEDULES, progress=None):
    """Train one architecture variant and collect its metric bundle.

    Reuses the already-fitted codec (the stage-0 artifact is variant
    independent).  Returns (model, bundle) where bundle holds loss rows
    and the probe/transfer/rollout numbers used for comparisons.
    """
    from .training import train_stage  # local import to avoid cycle
    from .variants import WorldModel

    model = WorldModel(mcfg, codec, variant, seed=seed)
    loss_rows = []
    for stage in (1, 2, 3):
        if not model.params_for_stage(stage):
            continue
        loss_rows += train_stage(model, model.encode_frames(
            _stack_frames(train_records)), stage, tcfg, progress=progress,
            step_offset=len(loss_rows))
    probe = probe_transition_types(model, eval_records, names=("z",),
                                   seeds=probe_seeds)
    transfer = transfer_suite(model, eval_records, seeds=transfer_seeds,
                              n_pairs=n_transfer_pairs)
    roll = rollout_metrics(model, eval_records, schedules=schedules)
    bundle = {
        "variant": variant,
        "loss_rows": loss_rows,
        "probe_z_accuracy": probe["z"].mean,
        "probe_z_std": probe["z"].std,
        "R_one_step": float(np.mean([r["R_one_step"] for r in transfer])),
        "R_autoregressive": float(np.mean(
            [r["R_autoregressive"] for r in transfer])),
        "transfer_rows": transfer,
        "rollout_rows": roll,
    }
    return model, bundle
