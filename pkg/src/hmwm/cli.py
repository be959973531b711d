"""Command-line front end: data generation, staged training, analysis.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
abort.  Progress goes to stdout as `key=value` lines, errors to stderr.
Every command that writes files drops a run manifest next to them.

Thread caps (HMWM_THREADS, and the forced single thread under
`--deterministic`) are exported to the BLAS environment variables
before numpy is first imported, so this module must stay the process
entry point and `hmwm/__init__` must stay free of numpy imports.
"""

import argparse
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS")


def _configure_threads(argv):
    n = os.environ.get("HMWM_THREADS")
    if "--deterministic" in argv:
        n = "1"
    if n is not None:
        count = str(max(1, int(n)))
        for var in _THREAD_VARS:
            os.environ[var] = count


_configure_threads(sys.argv[1:])

import numpy as np

from . import evaluation as ev
from . import worldgen as wg
from .autodiff import NumericalAbort
from .checkpoint import save_checkpoint
from .codec import train_codec
from .errors import DataFormatError
from .manifest import RunManifest, config_hash, git_blob_sha1
from .model import ModelConfig
from .training import TrainConfig, train_stage, write_loss_csv
from .variants import VARIANTS, WorldModel, load_codec, load_world_model
from .worldgen import GenerationError

# -- config handling ----------------------------------------------------------

_CODEC_DEFAULTS = {"codec_steps": 1500, "codec_lr": 3e-3,
                   "codec_hidden": 128, "codec_batch": 512}


def _default_config() -> dict:
    out = dict(_CODEC_DEFAULTS)
    for f in fields(ModelConfig):
        out[f.name] = f.default
    for f in fields(TrainConfig):
        if f.name != "seed":  # seed comes from --seed only
            out[f.name] = f.default
    return out


def read_config_file(path) -> dict:
    """`key = value` lines; '#' comments; blank lines ignored."""
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(
                    f"{path}:{ln}: expected 'key = value', got {raw.strip()!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def effective_config(config_path, overrides) -> dict:
    """Built-in defaults, overlaid by a config file, overlaid by --set."""
    cfg = _default_config()

    def apply(mapping, origin):
        for k, v in mapping.items():
            if k not in cfg:
                raise ValueError(f"unknown config key {k!r} (from {origin})")
            kind = type(cfg[k])
            try:
                cfg[k] = kind(v) if kind is not int else int(str(v), 0)
            except ValueError:
                raise ValueError(
                    f"config key {k!r} wants {kind.__name__}, got {v!r}"
                ) from None

    if config_path:
        apply(read_config_file(config_path), config_path)
    flat = {}
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"--set wants key=value, got {item!r}")
        k, v = item.split("=", 1)
        flat[k.strip()] = v.strip()
    apply(flat, "--set")
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(**{f.name: cfg[f.name] for f in fields(ModelConfig)})


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    kw = {f.name: cfg[f.name] for f in fields(TrainConfig)
          if f.name != "seed"}
    return TrainConfig(seed=seed, **kw)


# -- small helpers ------------------------------------------------------------


def emit(**kv):
    for k, v in kv.items():
        print(f"{k}={v}")
    sys.stdout.flush()


def _manifest(args, argv, config: dict) -> RunManifest:
    return RunManifest(command="hmwm " + " ".join(argv),
                       config=config, seed=args.seed,
                       deterministic=getattr(args, "deterministic", False))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_records(path):
    recs = wg.read_archive(path)
    if not recs:
        raise DataFormatError(f"{path}: archive holds no sequences")
    return recs


def _seeds(args):
    return list(range(args.seed, args.seed + args.n_seeds))


def _parse_band(text, name):
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"--{name} wants 'lo,hi', got {text!r}")
    return float(parts[0]), float(parts[1])


# -- subcommands --------------------------------------------------------------


def cmd_gen_data(args, argv):
    kinds = tuple(k.strip() for k in args.kinds.split(",")) if args.kinds \
        else wg.LABEL_KINDS
    wcfg = wg.WorldConfig(
        T=args.frames, regime=args.regime, kinds=kinds,
        rot_band=_parse_band(args.rot_band, "rot-band"),
        trans_band=_parse_band(args.trans_band, "trans-band"),
        scale_band=_parse_band(args.scale_band, "scale-band"),
        instances=(wg.make_instance_pool(args.instances, args.seed)
                   if args.instances else ()),
    )
    records = wg.generate_archive_records(args.seed, args.count, wcfg)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    wg.write_archive(records, out)
    emit(command="gen-data", count=len(records), frames=args.frames,
         regime=args.regime, out=out)
    man = _manifest(args, argv, {
        "count": args.count, "regime": args.regime, "frames": args.frames,
        "kinds": ",".join(kinds), "instances": args.instances,
        "rot_band": args.rot_band, "trans_band": args.trans_band,
        "scale_band": args.scale_band})
    man.add_output(out)
    man.write(str(out) + ".manifest.json")
    return 0


def _require_checkpoint(path: Path, stage: int):
    if not path.exists():
        raise DataFormatError(
            f"stage {stage} requires the stage-{stage - 1} checkpoint "
            f"{path}; run `train --stage {stage - 1}` first")


def cmd_train(args, argv):
    cfg = effective_config(args.config, args.set)
    out = _out_dir(args)
    records = _read_records(args.data)
    frames = np.stack([r.frames for r in records])

    man = _manifest(args, argv, {**cfg, "stage": args.stage,
                                 "variant": args.variant or "full"})
    man.add_input(args.data)
    ckpt = out / f"stage{args.stage}.npz"

    if args.stage == 0:
        grid = int(round(np.sqrt(cfg["P"])))
        if grid * grid != cfg["P"]:
            raise ValueError(f"P={cfg['P']} is not a square patch count")
        emit(command="train", stage=0, sequences=len(records))
        codec = train_codec(
            records, steps=cfg["codec_steps"], seed=args.seed,
            d_s=cfg["D_s"], hidden=cfg["codec_hidden"],
            batch=cfg["codec_batch"], lr=cfg["codec_lr"], grid=grid,
            log=lambda step, loss: step % 100 == 0 and emit(
                stage=0, step=step, recon=f"{loss:.6f}"))
        arrays = {f"codec/{k}": v for k, v in codec.state_arrays().items()}
        save_checkpoint(ckpt, arrays)
        outputs = [ckpt]
    else:
        prev = out / f"stage{args.stage - 1}.npz"
        _require_checkpoint(prev, args.stage)
        man.add_input(prev)
        if args.stage == 1:
            codec = load_codec(prev)
            model = WorldModel(_model_config(cfg), codec,
                               args.variant or "full", seed=args.seed)
        else:
            # later stages read the variant from the checkpoint; the
            # flag just guards against evaluating the wrong family
            model = load_world_model(prev, expect_variant=args.variant)
        emit(command="train", stage=args.stage, variant=model.variant,
             sequences=len(records))
        s_all = model.encode_frames(frames)
        tcfg = _train_config(cfg, args.seed)
        rows = train_stage(
            model, s_all, args.stage, tcfg,
            progress=lambda row: emit(
                stage=row["stage"], step=row["step"],
                total=f"{row['total']:.6f}", lr=f"{row['lr']:.2e}"))
        model.save(ckpt)
        loss_csv = out / f"loss_stage{args.stage}.csv"
        write_loss_csv(loss_csv, rows)
        outputs = [ckpt, loss_csv]

    for p in outputs:
        man.add_output(p)
    man.write(out / f"manifest_stage{args.stage}.json")
    emit(checkpoint=ckpt)
    return 0


def cmd_rollout(args, argv):
    model = load_world_model(args.ckpt)
    records = _read_records(args.archive)
    T = records[0].frames.shape[0]
    horizon = args.horizon or T
    if not 2 <= horizon <= T:
        raise ValueError(f"horizon {horizon} outside frames 2..{T}")
    records = [replace(r, frames=r.frames[:horizon]) for r in records]
    for step in args.feedback:
        if not 1 <= step <= horizon - 1:
            raise ValueError(
                f"feedback step {step} outside integration steps "
                f"1..{horizon - 1}")
    schedule = ",".join(str(s) for s in sorted(set(args.feedback))) \
        if args.feedback else "none"
    rows = ev.rollout_metrics(model, records, schedules=(schedule,))
    out = _out_dir(args)
    csv_path = out / "rollout.csv"
    ev.write_metrics_csv(csv_path, rows)
    mean = float(np.mean([r["ssim"] for r in rows]))
    emit(command="rollout", sequences=len(records), horizon=horizon,
         schedule=schedule, mean_ssim=f"{mean:.4f}")
    man = _manifest(args, argv, {"horizon": horizon, "schedule": schedule})
    man.add_input(args.ckpt)
    man.add_input(args.archive)
    man.add_output(csv_path)
    man.write(out / "manifest_rollout.json")
    return 0


def _checkpoint_summary(args, extra: dict) -> dict:
    return {"checkpoint": git_blob_sha1(args.ckpt),
            "seeds": _seeds(args) if hasattr(args, "n_seeds")
            else [args.seed], **extra}


def cmd_transfer(args, argv):
    model = load_world_model(args.ckpt)
    records = _read_records(args.data)
    rows = ev.transfer_suite(model, records, seeds=_seeds(args),
                             n_pairs=args.pairs, horizon=args.horizon)
    out = _out_dir(args)
    csv_path = out / "transfer.csv"
    ev.write_metrics_csv(csv_path, rows)
    man = _manifest(args, argv, {"pairs": args.pairs,
                                 "horizon": args.horizon or 0,
                                 "n_seeds": args.n_seeds})
    summary = _checkpoint_summary(args, {
        "config_hash": config_hash(man.config),
        "R_one_step": float(np.mean([r["R_one_step"] for r in rows])),
        "R_one_step_std": float(np.std([r["R_one_step"] for r in rows])),
        "R_autoregressive": float(np.mean(
            [r["R_autoregressive"] for r in rows])),
        "R_autoregressive_std": float(np.std(
            [r["R_autoregressive"] for r in rows])),
        "n_pairs": args.pairs,
    })
    json_path = out / "transfer_summary.json"
    ev.write_summary_json(json_path, summary)
    emit(command="transfer", R_one_step=f"{summary['R_one_step']:.4f}",
         R_autoregressive=f"{summary['R_autoregressive']:.4f}")
    man.add_input(args.ckpt)
    man.add_input(args.data)
    man.add_output(csv_path)
    man.add_output(json_path)
    man.write(out / "manifest_transfer.json")
    return 0


_EMBED_KEY = {"z": "z", "p_inf": "p", "g_inf": "g",
              "dp_inf": "dp_inf", "dg_inf": "dg_inf"}


def cmd_probe(args, argv):
    model = load_world_model(args.ckpt)
    records = _read_records(args.data)
    probe_kw = {"seeds": _seeds(args), "epochs": args.epochs}

    sample = ev.embed_sequences(model, records[:1])
    trans_names = [n for n in ev.EMBEDDING_NAMES
                   if _EMBED_KEY[n] in sample]
    trans = ev.probe_transition_types(model, records, names=trans_names,
                                      **probe_kw)
    cat_names = [n for n in ("p_inf", "g_inf") if _EMBED_KEY[n] in sample]
    cats = ev.category_by_state(model, records, names=cat_names,
                                **probe_kw) if cat_names else {}

    rows, summary = [], _checkpoint_summary(args, {})
    for task, group in (("transition", trans), ("category", cats)):
        for name, res in group.items():
            for seed, acc, tr_acc in zip(_seeds(args), res.accuracies,
                                         res.train_accuracies):
                rows.append({"task": task, "embedding": name, "seed": seed,
                             "test_acc": acc, "train_acc": tr_acc})
            summary[f"{task}_{name}"] = {
                "mean": res.mean, "std": res.std,
                "train_mean": res.train_mean,
                "confusion": res.confusion.tolist(),
                "classes": list(res.class_names)}
            emit(task=task, embedding=name, acc=f"{res.mean:.4f}",
                 std=f"{res.std:.4f}")

    out = _out_dir(args)
    csv_path, json_path = out / "probe.csv", out / "probe_summary.json"
    ev.write_metrics_csv(csv_path, rows)
    man = _manifest(args, argv, {"epochs": args.epochs,
                                 "n_seeds": args.n_seeds})
    summary["config_hash"] = config_hash(man.config)
    ev.write_summary_json(json_path, summary)
    man.add_input(args.ckpt)
    man.add_input(args.data)
    man.add_output(csv_path)
    man.add_output(json_path)
    man.write(out / "manifest_probe.json")
    return 0


def cmd_compose(args, argv):
    model = load_world_model(args.ckpt)
    if args.data:
        shape = _read_records(args.data)[0].shape
    else:
        shape = wg.ShapeSpec("square", (0.85, 0.25, 0.25))
    result = ev.composition_test(model, shape, scale=args.scale,
                                 n_steps=args.steps)
    out = _out_dir(args)
    csv_path = out / "compose.csv"
    ev.write_metrics_csv(csv_path, result["per_step"])
    frame_dir = out / "frames"
    frame_dir.mkdir(exist_ok=True)
    frame_paths = []
    # predictions cover frames 2..n+1; truth has the start frame too
    for tag, arr in (("real", result["frames_real"]),
                     ("composed", result["frames_composed"]),
                     ("truth", result["frames_truth"][1:])):
        for t in range(arr.shape[0]):
            p = frame_dir / f"{tag}_{t + 2:02d}.ppm"
            ev.write_ppm(p, arr[t])
            frame_paths.append(p)
    summary = _checkpoint_summary(args, {
        "shape": shape.kind, "ssim_real": result["ssim_real"],
        "ssim_composed": result["ssim_composed"], "gap": result["gap"]})
    man = _manifest(args, argv, {"shape": shape.kind, "scale": args.scale,
                                 "steps": args.steps})
    summary["config_hash"] = config_hash(man.config)
    json_path = out / "compose_summary.json"
    ev.write_summary_json(json_path, summary)
    emit(command="compose", shape=shape.kind,
         ssim_real=f"{result['ssim_real']:.4f}",
         ssim_composed=f"{result['ssim_composed']:.4f}",
         gap=f"{result['gap']:.4f}")
    man.add_input(args.ckpt)
    if args.data:
        man.add_input(args.data)
    for p in [csv_path, json_path] + frame_paths:
        man.add_output(p)
    man.write(out / "manifest_compose.json")
    return 0


def cmd_ablate(args, argv):
    cfg = effective_config(args.config, args.set)
    codec = load_codec(args.ckpt)
    records = _read_records(args.data)
    if args.eval:
        train_recs, eval_recs = records, _read_records(args.eval)
    else:
        train_recs, eval_recs = wg.dataset_split(records, (0.8, 0.2),
                                                 seed=args.seed)
    seeds = tuple(_seeds(args))
    emit(command="ablate", variant=args.variant, train=len(train_recs),
         eval=len(eval_recs))
    T = records[0].frames.shape[0]
    schedules = ("none", "4", "all") if T >= 5 else \
        ("none", str(max(1, T - 2)), "all")
    model, bundle = ev.run_ablation(
        args.variant, train_recs, eval_recs, _model_config(cfg),
        _train_config(cfg, args.seed), codec, seed=args.seed,
        probe_seeds=seeds, n_transfer_pairs=args.pairs,
        transfer_seeds=seeds, schedules=schedules,
        progress=lambda row: emit(stage=row["stage"], step=row["step"],
                                  total=f"{row['total']:.6f}"))
    out = _out_dir(args)
    tag = args.variant
    ckpt_path = out / f"ablate_{tag}.npz"
    model.save(ckpt_path)
    loss_csv = out / f"loss_ablate_{tag}.csv"
    write_loss_csv(loss_csv, bundle["loss_rows"])
    roll_csv = out / f"rollout_{tag}.csv"
    ev.write_metrics_csv(roll_csv, bundle["rollout_rows"])
    trans_csv = out / f"transfer_{tag}.csv"
    ev.write_metrics_csv(trans_csv, bundle["transfer_rows"])
    summary = {
        "variant": tag, "checkpoint": git_blob_sha1(ckpt_path),
        "seeds": list(seeds),
        "probe_z_accuracy": bundle["probe_z_accuracy"],
        "probe_z_std": bundle["probe_z_std"],
        "R_one_step": bundle["R_one_step"],
        "R_autoregressive": bundle["R_autoregressive"],
    }
    man = _manifest(args, argv, {**cfg, "variant": tag})
    summary["config_hash"] = config_hash(man.config)
    json_path = out / f"summary_{tag}.json"
    ev.write_summary_json(json_path, summary)
    emit(variant=tag, probe_z=f"{bundle['probe_z_accuracy']:.4f}",
         R_one_step=f"{bundle['R_one_step']:.4f}")
    man.add_input(args.ckpt)
    man.add_input(args.data)
    if args.eval:
        man.add_input(args.eval)
    for p in (ckpt_path, loss_csv, roll_csv, trans_csv, json_path):
        man.add_output(p)
    man.write(out / f"manifest_ablate_{tag}.json")
    return 0


def cmd_report(args, argv):
    model = load_world_model(args.ckpt)
    records = _read_records(args.data)
    T = records[0].frames.shape[0]
    schedules = ("none", "4", "all") if T >= 5 else \
        ("none", str(max(1, T - 2)), "all")
    rows = ev.rollout_metrics(model, records, schedules=schedules)
    zero = ev.zero_z_metrics(model, records)
    one_err = ev.one_step_latent_error(model, records)

    one_step_ssim = ev.mean_ssim_over_steps(rows, "all", 2, T)
    baseline = ev.copy_baseline_ssim(records)
    summary = _checkpoint_summary(args, {
        "sequences": len(records),
        "one_step_ssim": one_step_ssim,
        "copy_baseline_ssim": baseline,
        "one_step_latent_error": one_err,
        "zero_z": zero,
        "mean_ssim": {s: ev.mean_ssim_over_steps(rows, s, 2, T)
                      for s in schedules},
    })
    out = _out_dir(args)
    csv_path, json_path = out / "metrics.csv", out / "summary.json"
    ev.write_metrics_csv(csv_path, rows)
    man = _manifest(args, argv, {"schedules": ",".join(schedules)})
    summary["config_hash"] = config_hash(man.config)
    ev.write_summary_json(json_path, summary)
    emit(command="report", one_step_ssim=f"{one_step_ssim:.4f}",
         copy_baseline=f"{baseline:.4f}",
         zero_z_fraction_prev=f"{zero['fraction_prev']:.3f}")
    man.add_input(args.ckpt)
    man.add_input(args.data)
    man.add_output(csv_path)
    man.add_output(json_path)
    man.write(out / "manifest_report.json")
    return 0


def cmd_project(args, argv):
    model = load_world_model(args.ckpt)
    records = _read_records(args.data)
    emb = ev.embed_sequences(model, records)
    rows = ev.pca_rows(emb, args.embedding, args.components)
    out = _out_dir(args)
    csv_path = out / "projection.csv"
    ev.write_metrics_csv(csv_path, rows)
    emit(command="project", embedding=args.embedding, rows=len(rows))
    man = _manifest(args, argv, {"embedding": args.embedding,
                                 "components": args.components})
    man.add_input(args.ckpt)
    man.add_input(args.data)
    man.add_output(csv_path)
    man.write(out / "manifest_project.json")
    return 0


# -- parser -------------------------------------------------------------------


def _add_common(sp, data=True, n_seeds=True):
    sp.add_argument("--ckpt", required=True, help="model checkpoint")
    if data:
        sp.add_argument("--data", required=True, help="sequence archive")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0)
    if n_seeds:
        sp.add_argument("--n-seeds", type=int, default=5,
                        help="evaluation seeds: seed..seed+n-1")
    sp.add_argument("--deterministic", action="store_true",
                    help="single-threaded, zeroed manifest timestamps")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hmwm",
        description="Hierarchical world model: generate data, train, analyze.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic sequence archive")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--regime", choices=("fixed", "random"), default="fixed")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--kinds", default="",
                   help="comma list of transition kinds (default all)")
    g.add_argument("--instances", type=int, default=0,
                   help="draw shapes from a pool this large (0 = free)")
    g.add_argument("--rot-band", default="5,30")
    g.add_argument("--trans-band", default="0.5,2")
    g.add_argument("--scale-band", default="0.85,1.18")
    g.add_argument("--deterministic", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", type=int, required=True, choices=(0, 1, 2, 3))
    t.add_argument("--config", help="key = value file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--variant", choices=VARIANTS, default=None,
                   help="architecture family (stage 1; default full)")
    t.add_argument("--deterministic", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="per-step SSIM of free generation")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--archive", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--horizon", type=int, default=0,
                   help="last predicted frame index (default all)")
    r.add_argument("--feedback", type=int, action="append", default=[],
                   help="inject the inferred state at this step (repeatable)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--deterministic", action="store_true")
    r.set_defaults(func=cmd_rollout)

    tr = sub.add_parser("transfer",
                        help="drive one scene with another's transitions")
    _add_common(tr)
    tr.add_argument("--pairs", type=int, default=8)
    tr.add_argument("--horizon", type=int, default=0)
    tr.set_defaults(func=cmd_transfer)

    pr = sub.add_parser("probe", help="classifier probes on latents")
    _add_common(pr)
    pr.add_argument("--epochs", type=int, default=30)
    pr.set_defaults(func=cmd_probe)

    c = sub.add_parser("compose", help="latent-addition parity check")
    _add_common(c, data=False, n_seeds=False)
    c.add_argument("--data", default="",
                   help="optional archive; first record's shape is used")
    c.add_argument("--scale", type=float, default=5.0)
    c.add_argument("--steps", type=int, default=7)
    c.set_defaults(func=cmd_compose)

    a = sub.add_parser("ablate", help="train and score one variant")
    _add_common(a)
    a.add_argument("--variant", choices=VARIANTS, required=True)
    a.add_argument("--config")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.add_argument("--pairs", type=int, default=4)
    a.add_argument("--eval", default="",
                   help="separate eval archive (default: 20%% of --data)")
    a.set_defaults(func=cmd_ablate)

    rp = sub.add_parser("report", help="rollout schedules + sanity metrics")
    _add_common(rp, n_seeds=False)
    rp.set_defaults(func=cmd_report)

    pj = sub.add_parser("project", help="2-D PCA coordinates of embeddings")
    _add_common(pj, n_seeds=False)
    pj.add_argument("--embedding", default="g_inf",
                    choices=("p_inf", "g_inf", "z", "state", "s"))
    pj.add_argument("--components", type=int, default=2)
    pj.set_defaults(func=cmd_project)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _configure_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args, argv)
    except (DataFormatError, GenerationError, FileNotFoundError,
            IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalAbort as e:
        print(f"error: numerical abort: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
