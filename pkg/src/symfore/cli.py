"""``symfore`` command line: synth, cluster, train, forecast, eval, export.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats, labeling, metrics, plotting, synth
from .autodiff import DimensionError, ParameterError
from .checkpoint import CheckpointError, file_hash, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .dataset import (LABEL_SUFFIX, POSE_SUFFIX, DataError, SubsequenceSpec, drop_joints,
                      load_split, preprocess, sample_subsequences, sliding_windows,
                      stack_windows)
from .kinematics import PoseSequence, forward_kinematics, ms_to_frames
from .models import ConfigError, Normalizer
from .training import NumericAbort, Trainer

log = logging.getLogger("symfore")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PROTOCOLS = {"sub8": 8, "sub256": 256}
LABELER_FILE = "labeler.ckpt"


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for key in ("data_dir", "out_dir", "label_dir"):
        if getattr(args, key, None):
            overrides.append((key, getattr(args, key)))
    cfg = load_run_config(args.config, overrides)
    if not cfg.resolved_data_dir():
        raise ConfigError("no data directory: pass --data-dir, set data_dir or "
                          "the SYMFORE_DATA_ROOT environment variable")
    cfg.data_dir = cfg.resolved_data_dir()
    return cfg


def _write_run_log(out_dir: Path, command: str, cfg: RunConfig | None, extra=()) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{command}.log"
    lines = [f"command = {command}"]
    if cfg is not None:
        lines += cfg.lines()
    lines += list(extra)
    with open(path, "a") as fh:  # one block per invocation
        fh.write("\n".join(lines) + "\n\n")
    return path


def _splits(data_dir: str) -> list[str]:
    root = Path(data_dir)
    return [s for s in ("train", "val", "test") if (root / s).is_dir()]


# -- synth --------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    counts = {"train": args.train, "val": args.val, "test": args.test}
    for i, (split, n) in enumerate(counts.items()):
        for seq in synth.synth_corpus(args.kind, n, args.frames, args.joints,
                                      seed=args.seed * 10 + i, noise=args.noise):
            d = out / split / seq.action
            d.mkdir(parents=True, exist_ok=True)
            formats.write_pose_csv(d / (seq.name + POSE_SUFFIX), seq.poses)
            formats.write_label_csv(d / (seq.name + LABEL_SUFFIX), seq.labels, synth.CLASS_NAMES)
    print(f"wrote {sum(counts.values())} {args.kind} sequences under {out}")
    return EXIT_OK


# -- cluster ------------------------------------------------------------------

def cmd_cluster(args) -> int:
    cfg = _run_config(args)
    if args.k is not None:
        cfg.k = args.k
    if args.seed is not None:
        cfg.cluster_seed = args.seed
    out = Path(cfg.label_dir or Path(cfg.out_dir) / "labels")
    train = load_split(cfg.data_dir, "train", cfg.frame_rate, exclude_joints=cfg.excluded())
    pca, cm = labeling.fit_labeler([s.poses for s in train], cfg.k, cfg.cluster_seed,
                                   cfg.pca_dim)
    names = [f"c{i}" for i in range(cfg.k)]
    written = 0
    for split in _splits(cfg.data_dir):
        seqs = train if split == "train" else load_split(
            cfg.data_dir, split, cfg.frame_rate, exclude_joints=cfg.excluded())
        for seq in seqs:
            path = out / split / (seq.name[: -len(POSE_SUFFIX)] + LABEL_SUFFIX)
            path.parent.mkdir(parents=True, exist_ok=True)
            formats.write_label_csv(path, labeling.assign_labels(seq.poses, pca, cm), names)
            written += 1
    arrays = {"pca/mean": pca.mean, "pca/components": pca.components,
              "pca/explained_variance": pca.explained_variance, "kmeans/centers": cm.centers}
    save_checkpoint(out / LABELER_FILE, arrays,
                    {"k": cfg.k, "seed": cfg.cluster_seed, "objective_history": cm.objective_history,
                     "iterations": cm.iterations})
    _write_run_log(out, "cluster", cfg, [f"labeler_sha256 = {file_hash(out / LABELER_FILE)}"])
    print(f"k={cfg.k}: labelled {written} sequences in {out}; "
          f"objective {cm.objective_history[0]:.4g} -> {cm.objective_history[-1]:.4g}")
    return EXIT_OK


# -- train --------------------------------------------------------------------

def _class_names(seqs, label_names: tuple[str, ...]) -> tuple[str, ...]:
    if label_names:
        return label_names
    top = max(int(s.labels.max()) for s in seqs)
    return tuple(f"c{i}" for i in range(top + 1))


def _label_names(cfg: RunConfig) -> tuple[str, ...]:
    root = Path(cfg.label_dir) / "train" if cfg.label_dir else Path(cfg.data_dir) / "train"
    for path in sorted(root.rglob("*" + LABEL_SUFFIX)):
        return formats.read_label_csv(path)[1]
    raise DataError(f"no label files under {root}; run `symfore cluster` first")


def _load_training_data(cfg: RunConfig):
    label_root = cfg.label_dir or None
    kw = dict(target_hz=cfg.frame_rate, require_labels=True, label_root=label_root,
              exclude_joints=cfg.excluded())
    train = load_split(cfg.data_dir, "train", **kw)
    if "val" in _splits(cfg.data_dir):
        val = load_split(cfg.data_dir, "val", **kw)
    else:
        n_val = int(round(cfg.val_fraction * len(train))) if len(train) > 1 else 0
        train, val = train[: len(train) - n_val], train[len(train) - n_val:]
    h = cfg.total - cfg.observed
    tw = sliding_windows(train, cfg.observed, h, cfg.window_stride)
    if not tw:
        raise DataError(f"no training sequence is long enough for {cfg.total} frames")
    vw = sliding_windows(val, cfg.observed, h, cfg.window_stride)
    X, Y = stack_windows(tw)
    Xv, Yv = stack_windows(vw) if vw else (None, None)
    return train, X, Y, Xv, Yv


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    train, X, Y, Xv, Yv = _load_training_data(cfg)
    if args.resume:
        trainer = Trainer.load(args.resume)
    else:
        names = _class_names(train, _label_names(cfg))
        mcfg = cfg.model_config(len(names), X.shape[-1])
        trainer = Trainer(mcfg, cfg.train_config(), Normalizer.fit(X), class_names=names)
        trainer.info = {"frame_rate_hz": cfg.frame_rate,
                        "joint_names": list(train[0].poses.joint_names),
                        "excluded_joints": cfg.excluded()}
        lab = Path(cfg.label_dir) / LABELER_FILE if cfg.label_dir else None
        if lab is not None and lab.exists():
            arrays, meta = load_checkpoint(lab)
            trainer.pca = labeling.PcaModel(arrays["pca/mean"], arrays["pca/components"],
                                            arrays["pca/explained_variance"])
            trainer.clusters = labeling.ClusterModel(arrays["kmeans/centers"], meta["seed"])
    enc = trainer.normalizer.encode
    out.mkdir(parents=True, exist_ok=True)
    ckdir = out / "checkpoints"
    trainer.fit(enc(X), Y, None if Xv is None else enc(Xv), Yv, epochs=args.epochs,
                checkpoint_dir=ckdir, log_path=out / "train_log.jsonl")
    hist = trainer.history
    cols = ["epoch", "phase", "train_loss", "val_loss"]
    rows = [",".join(cols)] + [",".join(str(r.get(c, "")) for c in cols) for r in hist]
    (out / "history.csv").write_text("\n".join(rows) + "\n")
    plotting.plot_training(hist, out / "history.png")
    last = ckdir / "last.ckpt"
    extra = [f"resume = {args.resume or ''}", f"epochs_completed = {trainer.epoch}",
             f"train_windows = {len(X)}", f"checkpoint = {last}",
             f"checkpoint_sha256 = {file_hash(last)}"]
    if args.resume:
        extra.append(f"resume_sha256 = {file_hash(args.resume)}")
    _write_run_log(out, "train", cfg, extra)
    print(f"trained to epoch {trainer.epoch}; last loss {hist[-1]['train_loss']:.6g}; "
          f"checkpoint {last}")
    return EXIT_OK


# -- forecast -----------------------------------------------------------------

def cmd_forecast(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    info = trainer.info
    seq = formats.read_pose_csv(args.input)
    seq = drop_joints(preprocess(seq, info.get("frame_rate_hz", 25.0)),
                      info.get("excluded_joints", ()))
    t = trainer.mcfg.observed
    if seq.num_frames < t:
        raise DataError(f"{args.input}: {seq.num_frames} frames, the model needs {t}")
    horizon = args.horizon or trainer.mcfg.horizon
    poses, fut, _ = trainer.forecast(seq.flat()[None], horizon)
    J = seq.num_joints
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_pose_csv(str(out) + POSE_SUFFIX, PoseSequence(
        poses[0].reshape(horizon, J, 3), seq.frame_rate_hz, seq.joint_names))
    formats.write_label_csv(str(out) + LABEL_SUFFIX, fut[0], trainer.class_names or None)
    print(f"wrote {horizon} forecast frames to {out}{POSE_SUFFIX}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    modes = [bool(args.checkpoint), args.zero_velocity, args.self_eval]
    if sum(modes) != 1:
        raise ConfigError("pass exactly one of --checkpoint, --zero-velocity, --self-eval")
    cfg = _run_config(args)
    trainer = Trainer.load(args.checkpoint) if args.checkpoint else None
    hz, excluded, t = cfg.frame_rate, cfg.excluded(), cfg.observed
    if trainer is not None:
        hz = trainer.info.get("frame_rate_hz", hz)
        excluded = trainer.info.get("excluded_joints", excluded)
        t = trainer.mcfg.observed
    tag = "model" if trainer else ("zero-velocity" if args.zero_velocity else "self")
    h = ms_to_frames(max(metrics.HORIZONS_MS), hz) if args.metric == "mpjpe" else \
        int(round(max(b for _, b in metrics.NPSS_BUCKETS.values()) * hz))
    test = load_split(cfg.data_dir, args.split, hz, exclude_joints=excluded)
    windows = sample_subsequences(test, SubsequenceSpec(args.seed, PROTOCOLS[args.protocol], t, h))
    if not windows:
        raise DataError(f"no {args.split} sequence holds {t + h} frames")
    preds, truths = {}, {}
    for action in sorted({w.action for w in windows}):
        ws = [w for w in windows if w.action == action]
        poses, _ = stack_windows(ws)
        obs, truth = poses[:, :t], poses[:, t:]
        if trainer is not None:
            pred = np.concatenate([trainer.forecast(obs[i:i + 64], h)[0]
                                   for i in range(0, len(obs), 64)])
        elif args.zero_velocity:
            pred = metrics.zero_velocity(obs, h)
        else:
            pred = truth.copy()
        preds[action], truths[action] = pred, truth
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{args.metric}_{args.protocol}_{tag}"
    info = {"metric": args.metric, "protocol": args.protocol, "seed": args.seed, "predictor": tag,
            "split": args.split, "observed": t, "horizon_frames": h, "frame_rate_hz": hz}
    if args.metric == "mpjpe":
        table = metrics.horizon_table(preds, truths, hz, seed=args.seed)
        Path(str(stem) + ".csv").write_text(table.to_csv())
        payload = {**info, **table.to_json()}
        plotting.plot_horizon_table(table, str(stem) + ".png", f"MPJPE ({tag}, {args.protocol})")
    else:
        rows = {a: {b: metrics.npss(preds[a], truths[a], b, hz) for b in metrics.NPSS_BUCKETS}
                for a in preds}
        lines = ["action,count," + ",".join(metrics.NPSS_BUCKETS)]
        lines += [f"{a},{len(preds[a])}," + ",".join(f"{v:.6f}" for v in r.values())
                  for a, r in rows.items()]
        Path(str(stem) + ".csv").write_text("\n".join(lines) + "\n")
        payload = {**info, "rows": rows}
        plotting.plot_npss(rows, str(stem) + ".png", f"NPSS ({tag}, {args.protocol})")
    Path(str(stem) + ".json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    prov = ["action,source,start"] + [f"{w.action},{w.source},{w.start}" for w in windows]
    Path(str(stem) + ".provenance.csv").write_text("\n".join(prov) + "\n")
    extra = [f"predictor = {tag}", f"protocol = {args.protocol}", f"metric = {args.metric}",
             f"seed = {args.seed}"]
    if args.checkpoint:
        extra.append(f"checkpoint_sha256 = {file_hash(args.checkpoint)}")
    _write_run_log(out, f"eval_{args.metric}_{args.protocol}_{tag}", cfg, extra)
    print(Path(str(stem) + ".csv").read_text(), end="")
    return EXIT_OK


# -- export -------------------------------------------------------------------

def cmd_export(args) -> int:
    skel = formats.read_skeleton(args.skeleton)
    angles = formats.read_angle_csv(args.input)
    poses = forward_kinematics(skel, angles)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_pose_csv(out, poses)
    print(f"wrote {poses.num_frames} frames x {poses.num_joints} joints to {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--data-dir", help="dataset root (default: data_dir or $SYMFORE_DATA_ROOT)")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--label-dir", help="clustered label root")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symfore", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a toy corpus with ground-truth labels")
    p.add_argument("out_dir")
    p.add_argument("--kind", default="switch", choices=["switch", "sine-walk", "still"])
    p.add_argument("--train", type=int, default=8)
    p.add_argument("--val", type=int, default=2)
    p.add_argument("--test", type=int, default=4)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--joints", type=int, default=9)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="fit PCA + k-means labels on the train split")
    _add_run_args(p)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train the forecasting model")
    _add_run_args(p)
    p.add_argument("--epochs", type=int, help="train this many more epochs")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast poses and labels after an observed clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="observed pose CSV")
    p.add_argument("--horizon", type=int, help="frames to forecast (default: trained horizon)")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="MPJPE / NPSS tables on sampled test windows")
    _add_run_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--zero-velocity", action="store_true", help="evaluate the repeat-last-frame baseline")
    p.add_argument("--self-eval", action="store_true", help="use the ground truth as prediction")
    p.add_argument("--protocol", choices=sorted(PROTOCOLS), default="sub8")
    p.add_argument("--metric", choices=["mpjpe", "npss"], default="mpjpe")
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="convert an angle file to joint positions")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--input", required=True, help="angle CSV")
    p.add_argument("--out", required=True, help="pose CSV to write")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, formats.FormatError, CheckpointError, DimensionError,
            labeling.InsufficientLengthError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
