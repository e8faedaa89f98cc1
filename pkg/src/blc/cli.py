"""Command-line entry points.

    blc prepare-data  --toy --seed 7 --out data/toy7
    blc train-blrpn   --data data/toy7 --out runs/blrpn
    blc train         --data data/toy7 --background-vector runs/blrpn/v_b.json --out runs/full
    blc detect        --data data/toy7 --checkpoint runs/full/model.npz --out runs/full/dets.tsv
    blc eval          --data data/toy7 --detections runs/full/dets.tsv --out runs/full
    blc report        --inputs runs/full/eval_zsd.json --out runs/full/report
    blc ablation      --seeds 0,1,2,3,4 --out runs/ablation

Relative ``--out`` paths are placed under ``$BLC_OUTPUT_ROOT`` when it is
set.  Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from . import __version__
from .data import (
    DataError, ToyWorldConfig, builtin_splits, generate_toy_dataset, load_annotation_subset, load_split_file,
    load_toy_dataset, load_vocabulary_names, save_annotation_dataset, save_toy_dataset, world_config_from_dict,
)
from .detector import CascadeModel, ModelConfig, load_checkpoint, load_module_arrays, module_arrays, save_checkpoint
from .embeddings import EmbeddingError, load_word_vectors
from .evaluation import IOU_THRESHOLDS, MetricError, evaluate_gzsd, evaluate_zsd
from .inference import InferenceConfig, detect_dataset
from .pipeline import ARMS, arm_name, build_matrices, ground_truth, model_config_for, run_ablation
from .records import RecordError, read_detections, read_meta, write_detections
from .training import ProvenanceAudit, TrainConfig, TrainingDiverged, train_blrpn, train_cascade, train_rpn

log = logging.getLogger("blc")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
OUTPUT_ROOT_ENV = "BLC_OUTPUT_ROOT"


class InputError(Exception):
    pass


# -- provenance ----------------------------------------------------------------------

def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def provenance(seed: int, cfg: dict) -> dict:
    return {"version": version_string(), "seed": seed, "config_hash": config_hash(cfg)}


def resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


def _write_log(path: Path, records: List[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# -- dataset access --------------------------------------------------------------------

class Prepared:
    """A dataset directory written by ``prepare-data``."""

    def __init__(self, data_dir):
        d = Path(data_dir)
        if not d.is_dir():
            raise InputError(f"dataset directory not found: {d}")
        self.dir = d
        self.train, self.test, self.table, self.split, self.manifest = load_toy_dataset(d)
        self.vocabulary = load_vocabulary_names(d)

    def require_features(self):
        if self.table is None or not self.vocabulary:
            raise InputError(f"{self.dir}: no word vectors or vocabulary; training needs a --toy dataset")
        if any(im.features is None for im in self.train + self.test):
            raise InputError(f"{self.dir}: no feature maps; training and detection need a --toy dataset")

    def model_config(self, **overrides) -> ModelConfig:
        return model_config_for(world_config_from_dict(self.manifest["world_config"]), **overrides)

    def matrices(self):
        return build_matrices(self.table, self.split, self.vocabulary)


def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_dict(_read_json(args.config)) if getattr(args, "config", None) else TrainConfig()
    over = {}
    for key in ("lr", "epochs", "batch_size", "max_iters"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if getattr(args, "lr_decay_epochs", None) is not None:
        over["lr_decay_epochs"] = tuple(int(x) for x in args.lr_decay_epochs.split(",") if x)
    over["seed"] = args.seed
    try:
        return replace(base, **over)
    except ValueError as exc:
        raise InputError(str(exc)) from None


# -- commands -------------------------------------------------------------------------------

def cmd_prepare_data(args) -> int:
    out = resolve_out(args.out)
    if args.toy == bool(args.annotations):
        raise InputError("give exactly one of --toy or --annotations FILE")
    if args.toy:
        if args.split not in (None, "toy"):
            raise InputError("a toy world defines its own split; --split applies to --annotations only")
        world = ToyWorldConfig(seed=args.seed, num_seen=args.num_seen, num_unseen=args.num_unseen)
        ds = generate_toy_dataset(world, args.n_train, args.n_test)
        cfg = {"world": asdict(world), "n_train": args.n_train, "n_test": args.n_test}
        manifest = save_toy_dataset(ds, out, provenance(args.seed, cfg))
    else:
        name = args.split or "coco-48-17"
        splits = builtin_splits()
        if name in splits:
            split = splits[name]
        elif Path(name).is_file():
            split = load_split_file(name)
        else:
            raise InputError(f"unknown split {name!r}: use {sorted(splits)} or a split file")
        train, test = load_annotation_subset(args.annotations, split)
        table = load_word_vectors(args.word_vectors, args.embed_dim) if args.word_vectors else None
        cfg = {"annotations": str(args.annotations), "split": split.name}
        manifest = save_annotation_dataset(train, test, split, out, table, provenance(args.seed, cfg))
    print(f"wrote {out} ({manifest['n_train']} train / {manifest['n_test']} test, "
          f"split {manifest['split']}, content {manifest['content_hash'][:16]})")
    return EXIT_OK


def cmd_train_blrpn(args) -> int:
    data = Prepared(args.data)
    data.require_features()
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tc = _train_config(args)
    model_cfg = data.model_config()
    mats = data.matrices()
    audit = ProvenanceAudit(data.split)
    res = train_blrpn(data.train, data.split, mats.seen, mats.vocab, model_cfg, tc, audit)
    cfg = {"train": tc.to_dict(), "model": model_cfg.to_dict(), "data": data.manifest["content_hash"]}
    prov = provenance(args.seed, cfg)
    _write_json(out / "v_b.json", {"v_b": res.v_b, "initial_v_b": res.initial_v_b, "dim": len(res.v_b),
                                   "iterations": len(res.log.losses()), "unseen_boxes_used": audit.unseen_boxes_used,
                                   **prov})
    save_checkpoint(out / "blrpn.npz", module_arrays(res.blrpn), {"kind": "blrpn", "train_config": tc.to_dict(),
                                                                   "model_config": model_cfg.to_dict(), **prov})
    _write_log(out / "blrpn_log.jsonl", res.log.records)
    print(f"v_b ({len(res.v_b)}-d) -> {out / 'v_b.json'}; {len(res.log.losses())} iterations")
    return EXIT_OK


def load_background(path, dim: int) -> np.ndarray:
    rec = _read_json(path)
    if "v_b" not in rec:
        raise InputError(f"{path}: no 'v_b' entry")
    v_b = np.asarray(rec["v_b"], dtype=np.float64)
    if v_b.shape != (dim,) or not np.all(np.isfinite(v_b)):
        raise InputError(f"{path}: background vector must be {dim} finite numbers")
    return v_b


def _sha(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


def cmd_train(args) -> int:
    data = Prepared(args.data)
    data.require_features()
    use_flow, use_bg = not args.no_flow, not args.no_blrpn_bg
    if args.background_vector and not use_bg:
        raise InputError("--background-vector conflicts with --no-blrpn-bg")
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tc = _train_config(args)
    model_cfg = data.model_config(use_flow=use_flow)
    mats = data.matrices()
    audit = ProvenanceAudit(data.split)
    v_b = None
    if use_bg:
        if args.background_vector:
            v_b = load_background(args.background_vector, mats.seen.dim)
        else:
            log.info("no --background-vector given; training the BLRPN first")
            v_b = train_blrpn(data.train, data.split, mats.seen, mats.vocab, model_cfg, tc, audit).v_b
        mats = mats.with_background(v_b)
    rpn, rpn_log = train_rpn(data.train, data.split, model_cfg, tc, audit)
    model, tlog = train_cascade(data.train, data.split, mats.seen, mats.vocab, model_cfg, tc, rpn=rpn, audit=audit)
    column0 = model.W_s[:, 0].detach().numpy()
    if v_b is not None and _sha(column0) != _sha(torch.tensor(v_b, dtype=model.W_s.dtype).numpy()):
        raise TrainingDiverged("W_s column 0 does not match the background vector")
    arm = arm_name(use_flow, use_bg)
    cfg = {"train": tc.to_dict(), "model": model_cfg.to_dict(), "arm": arm, "data": data.manifest["content_hash"],
           "background": None if v_b is None else _sha(v_b)}
    meta = {"kind": "cascade", "arm": arm, "train_config": tc.to_dict(), "model_config": model_cfg.to_dict(),
            "background_sha": _sha(column0), "unseen_boxes_used": audit.unseen_boxes_used,
            "boxes_used": audit.boxes_used, **provenance(args.seed, cfg)}
    save_checkpoint(out / "model.npz", module_arrays(model), meta)
    _write_log(out / "train_log.jsonl", tlog.records)
    _write_log(out / "rpn_log.jsonl", rpn_log.records)
    print(f"arm {arm}: {len(tlog.losses())} iterations, final loss {tlog.losses()[-1]:.4f} -> {out / 'model.npz'}")
    return EXIT_OK


def load_cascade(path) -> tuple:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"checkpoint not found: {p}")
    arrays, meta = load_checkpoint(p)
    if meta.get("kind") != "cascade":
        raise InputError(f"{p}: not a cascade checkpoint")
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = CascadeModel(cfg, torch.as_tensor(arrays["W_s"]), torch.as_tensor(arrays["D"]),
                         dtype=torch.as_tensor(arrays["W_s"]).dtype)
    load_module_arrays(model, arrays)
    model.eval()
    return model, meta


def cmd_detect(args) -> int:
    data = Prepared(args.data)
    data.require_features()
    model, meta = load_cascade(args.checkpoint)
    mats = data.matrices().with_background(model.W_s[:, 0].double().numpy())
    icfg = InferenceConfig(stage_ensemble=args.stage_ensemble)
    dets = detect_dataset(data.test, model, mats.seen, mats.unseen, args.mode, icfg)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg = {"checkpoint": meta["config_hash"], "mode": args.mode, "inference": icfg.__dict__}
    write_detections(out, dets, {"mode": args.mode, "arm": meta["arm"], "model_seed": meta["seed"],
                                 **provenance(args.seed if args.seed is not None else meta["seed"], cfg)})
    print(f"{len(dets)} {args.mode} detections on {len(data.test)} images -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = Prepared(args.data)
    path = Path(args.detections)
    if not path.is_file():
        raise InputError(f"detections not found: {path}")
    dets = read_detections(path)
    dmeta = read_meta(path)
    mode = args.mode or dmeta.get("mode", "zsd")
    gts = ground_truth(data.test, data.split)
    if mode == "zsd":
        report = evaluate_zsd(dets, gts, data.split.unseen)
    else:
        report = evaluate_gzsd(dets, gts, data.split.seen, data.split.unseen)
    seed = args.seed if args.seed is not None else int(dmeta.get("seed", 0))
    report.meta.update({"mode": mode, "detections": path.name, "detections_config": dmeta.get("config_hash"),
                        "arm": dmeta.get("arm"), **provenance(seed, {"mode": mode, "dets": dmeta})})
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{mode}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / f"eval_{mode}.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


# -- report -------------------------------------------------------------------------------

def _recall_table(evals: Dict[str, dict]) -> List[str]:
    ths = [f"{t:.1f}" for t in IOU_THRESHOLDS]
    lines = [f"{'run':<24}" + "".join(f"{'R@100/' + t:>11}" for t in ths) + f"{'mAP/0.5':>9}"]
    for name, ev in evals.items():
        r = ev.get("recall_at_100", {})
        cells = "".join(f"{r[t]:11.2f}" if t in r else f"{'-':>11}" for t in ths)
        m = ev.get("map_50")
        lines.append(f"{name:<24}{cells}{m:9.2f}" if m is not None else f"{name:<24}{cells}{'-':>9}")
    return lines


def _gzsd_table(evals: Dict[str, dict]) -> List[str]:
    rows = [(n, e["gzsd"]) for n, e in evals.items() if e.get("gzsd")]
    if not rows:
        return []
    lines = [f"{'run':<24}{'seen mAP':>9}{'seen R':>8}{'unseen mAP':>11}{'unseen R':>9}{'HM mAP':>8}{'HM R':>7}"]
    for name, g in rows:
        vals = [g["seen"]["map"], g["seen"]["recall"], g["unseen"]["map"], g["unseen"]["recall"],
                g["hm"]["map"], g["hm"]["recall"]]
        widths = [9, 8, 11, 9, 8, 7]
        lines.append(f"{name:<24}" + "".join(f"{v:{w}.2f}" for v, w in zip(vals, widths)))
    return lines


def _ablation_table(ab: dict) -> List[str]:
    lines = [f"{'arm':<10}{'flow':>6}{'v_b':>9}{'R@100/0.5':>11}{'std':>7}{'mAP/0.5':>9}  per-seed R@100/0.5"]
    for arm, vals in ab["recalls"].items():
        flags = ARMS[arm]
        maps = ab["maps"][arm]
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        lines.append(f"{arm:<10}{'yes' if flags['use_flow'] else 'no':>6}"
                     f"{'learned' if flags['use_blrpn_background'] else 'mean':>9}{np.mean(vals):11.2f}{std:7.2f}"
                     f"{np.mean(maps):9.2f}  " + " ".join(f"{v:.2f}" for v in vals))
    lines.append(f"seeds {ab['seeds']}, {ab['seconds']:.0f} s, unseen boxes used in training: "
                 f"{ab['unseen_boxes_used']}")
    return lines


def _plot_recall(evals: Dict[str, dict], path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, ev in evals.items():
        r = ev.get("recall_at_100", {})
        ts = sorted(r, key=float)
        if ts:
            ax.plot([float(t) for t in ts], [r[t] for t in ts], marker="o", label=name)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("Recall@100 (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _plot_ablation(ab: dict, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    arms = list(ab["recalls"])
    means = [np.mean(ab["recalls"][a]) for a in arms]
    stds = [np.std(ab["recalls"][a], ddof=1) if len(ab["recalls"][a]) > 1 else 0.0 for a in arms]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(arms, means, yerr=stds, capsize=4, color="#7a9cc6")
    ax.set_ylabel("unseen Recall@100, IoU 0.5 (%)")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_report(args) -> int:
    evals, ablations = {}, []
    for p in args.inputs:
        rec = _read_json(p)
        if "recalls" in rec and "maps" in rec:
            ablations.append(rec)
        elif "recall_at_100" in rec:
            meta = rec.get("meta", {})
            name = f"{meta.get('arm') or Path(p).parent.name}/{meta.get('mode', 'zsd')}"
            evals[name] = rec
        else:
            raise InputError(f"{p}: neither an evaluation report nor an ablation result")
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    zsd = {n: e for n, e in evals.items() if e.get("recall_at_100")}
    if zsd:
        lines += ["Recall@100 and mAP on unseen classes (ZSD)", *_recall_table(zsd), ""]
        _plot_recall(zsd, out / "recall_vs_iou.png")
    if evals:
        g = _gzsd_table(evals)
        if g:
            lines += ["GZSD", *g, ""]
    for i, ab in enumerate(ablations):
        lines += ["Component ablation", *_ablation_table(ab), ""]
        _plot_ablation(ab, out / (f"ablation_{i}.png" if len(ablations) > 1 else "ablation.png"))
    text = "\n".join(lines)
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_ablation(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if not seeds:
        raise InputError("--seeds needs at least one seed")
    tc = _train_config(args)
    arms = tuple(args.arms.split(",")) if args.arms else tuple(ARMS)
    unknown = [a for a in arms if a not in ARMS]
    if unknown:
        raise InputError(f"unknown arms {unknown}; choose from {list(ARMS)}")

    def progress(seed, arm, res):
        print(f"seed {seed} {arm:<9} R@100/0.5 {res.report.recall[0.5]:6.2f}  ({res.seconds:.0f} s)", flush=True)

    res = run_ablation(seeds, args.n_train, args.n_test, train_cfg=tc, arms=arms, progress=progress)
    cfg = {"train": tc.to_dict(), "n_train": args.n_train, "n_test": args.n_test, "arms": arms}
    out = resolve_out(args.out)
    _write_json(out / "ablation.json", {"recalls": res.recalls, "maps": res.maps, "seeds": res.seeds,
                                        "seconds": res.seconds, "unseen_boxes_used": res.unseen_boxes_used,
                                        "boxes_used": res.boxes_used, "train_config": tc.to_dict(),
                                        **provenance(seeds[0], cfg)})
    print(res.summary())
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------

def _add_train_options(p):
    p.add_argument("--config", help="JSON file of training options (key: value)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay-epochs", help="comma-separated epochs after which the rate drops x0.1")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-iters", type=int, help="stop after this many optimizer steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blc", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="generate the toy dataset or ingest a COCO-style annotation file")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--annotations", help="COCO-style JSON; images tagged \"subset\": train|test")
    p.add_argument("--word-vectors", help="plain-text word vectors for --annotations data")
    p.add_argument("--embed-dim", type=int, default=300)
    p.add_argument("--split", help="coco-48-17, coco-65-15 or a split file (annotation data only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--num-seen", type=int, default=12)
    p.add_argument("--num-unseen", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-blrpn", help="train the BLRPN and write the learned background vector")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_train_options(p)
    p.set_defaults(func=cmd_train_blrpn)

    p = sub.add_parser("train", help="train the cascade (one ablation arm)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--background-vector", help="v_b.json from train-blrpn")
    p.add_argument("--no-flow", action="store_true", help="drop the semantic flow between stages")
    p.add_argument("--no-blrpn-bg", action="store_true", help="keep the seen-mean background vector")
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="write ZSD or GZSD detections for the test images")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("zsd", "gzsd"), default="zsd")
    p.add_argument("--stage-ensemble", action="store_true", help="average the three stages' class scores")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a detection dump against the test ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("zsd", "gzsd"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render tables and plots from eval or ablation JSON files")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablation", help="train and evaluate the four arms over several toy seeds")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--arms", help=f"comma-separated subset of {','.join(ARMS)}")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    _add_train_options(p)
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, DataError, EmbeddingError, RecordError, MetricError, FileNotFoundError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
