"""End-to-end runs: matrices from a dataset, the four ablation arms, evaluation.

The arms are the rows of the component study:

========  =====  ===================
arm       flow   background vector
========  =====  ===================
baseline  no     seen mean
flow      yes    seen mean
blrpn     no     learned by BLRPN
full      yes    learned by BLRPN
========  =====  ===================
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .data import AnnotatedImage, SplitConfig, ToyDataset, ToyWorldConfig, generate_toy_dataset
from .detector import CascadeModel, ModelConfig
from .embeddings import (
    EmbeddingTable, SeenMatrix, UnseenMatrix, VocabularyMatrix, build_seen_matrix, build_unseen_matrix,
    build_vocabulary_matrix, mean_background, replace_background,
)
from .evaluation import EvalReport, evaluate_gzsd, evaluate_zsd
from .inference import InferenceConfig, detect_dataset
from .records import GroundTruth
from .training import ProvenanceAudit, TrainConfig, propose_all, train_blrpn, train_cascade, train_rpn

log = logging.getLogger(__name__)

ARMS = {
    "baseline": dict(use_flow=False, use_blrpn_background=False),
    "flow": dict(use_flow=True, use_blrpn_background=False),
    "blrpn": dict(use_flow=False, use_blrpn_background=True),
    "full": dict(use_flow=True, use_blrpn_background=True),
}


def arm_name(use_flow: bool, use_blrpn_background: bool) -> str:
    for name, flags in ARMS.items():
        if flags == dict(use_flow=use_flow, use_blrpn_background=use_blrpn_background):
            return name
    raise KeyError((use_flow, use_blrpn_background))


@dataclass
class SemanticMatrices:
    seen: SeenMatrix
    unseen: UnseenMatrix
    vocab: VocabularyMatrix

    def with_background(self, v_b) -> "SemanticMatrices":
        return SemanticMatrices(replace_background(self.seen, v_b), replace_background(self.unseen, v_b), self.vocab)


def build_matrices(table: EmbeddingTable, split: SplitConfig, vocabulary: Sequence[str]) -> SemanticMatrices:
    """Seen/unseen matrices with the seen-mean background, plus the vocabulary."""
    v_b = mean_background([table[c] for c in split.seen])
    return SemanticMatrices(
        build_seen_matrix(table, split.seen, v_b),
        build_unseen_matrix(table, split.unseen, v_b),
        build_vocabulary_matrix(table, vocabulary, exclude=split.classes),
    )


def ground_truth(images: Sequence[AnnotatedImage], split: SplitConfig) -> List[GroundTruth]:
    return [GroundTruth(im.image_id, lab, tuple(float(v) for v in box), split.group_of(lab))
            for im in images for box, lab in zip(im.boxes, im.labels)]


def model_config_for(world_cfg: ToyWorldConfig, **overrides) -> ModelConfig:
    cfg = ModelConfig(feature_channels=world_cfg.feature_channels, stride=world_cfg.stride,
                      embed_dim=world_cfg.embed_dim, vocab_size=world_cfg.vocab_size)
    return replace(cfg, **overrides)


@dataclass
class ArmResult:
    arm: str
    seed: int
    report: EvalReport
    background: np.ndarray
    seconds: float
    audit: ProvenanceAudit
    model: Optional[CascadeModel] = None
    gzsd: Optional[EvalReport] = None


@dataclass
class SeedRun:
    """Everything shared by the arms of one seed: data, RPN, learned background."""

    dataset: ToyDataset
    matrices: SemanticMatrices
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    rpn: object
    learned_v_b: Optional[np.ndarray]
    audit: ProvenanceAudit
    seconds: float
    proposals: Dict[str, torch.Tensor] = field(default_factory=dict)   # image id -> RPN boxes


def prepare_seed(world_cfg: ToyWorldConfig, n_train: int, n_test: int, train_cfg: TrainConfig,
                 blrpn_cfg: Optional[TrainConfig] = None, model_overrides: Optional[dict] = None,
                 need_blrpn: bool = True) -> SeedRun:
    t0 = time.perf_counter()
    ds = generate_toy_dataset(world_cfg, n_train, n_test)
    mats = build_matrices(ds.table, ds.split, ds.world.vocabulary)
    model_cfg = model_config_for(world_cfg, **(model_overrides or {}))
    audit = ProvenanceAudit(ds.split)
    rpn, _ = train_rpn(ds.train, ds.split, model_cfg, train_cfg, audit)
    proposals = propose_all(list(ds.train) + list(ds.test), rpn, model_cfg)
    v_b = None
    if need_blrpn:
        res = train_blrpn(ds.train, ds.split, mats.seen, mats.vocab, model_cfg, blrpn_cfg or train_cfg, audit)
        v_b = res.v_b
    return SeedRun(ds, mats, model_cfg, train_cfg, rpn, v_b, audit, time.perf_counter() - t0, proposals)


def run_arm(run: SeedRun, arm: str, keep_model: bool = False, gzsd: bool = False,
            infer_cfg: InferenceConfig = InferenceConfig()) -> ArmResult:
    flags = ARMS[arm]
    t0 = time.perf_counter()
    mats = run.matrices
    if flags["use_blrpn_background"]:
        if run.learned_v_b is None:
            raise ValueError("arm needs a BLRPN background vector")
        mats = mats.with_background(run.learned_v_b)
    model_cfg = replace(run.model_cfg, use_flow=flags["use_flow"])
    ds = run.dataset
    model, _ = train_cascade(ds.train, ds.split, mats.seen, mats.vocab, model_cfg, run.train_cfg,
                             rpn=run.rpn, audit=run.audit, proposals=run.proposals or None)
    gts = ground_truth(ds.test, ds.split)
    props = run.proposals or None
    dets = detect_dataset(ds.test, model, mats.seen, mats.unseen, "zsd", infer_cfg, props)
    report = evaluate_zsd(dets, gts, ds.split.unseen)
    gz = None
    if gzsd:
        gz = evaluate_gzsd(detect_dataset(ds.test, model, mats.seen, mats.unseen, "gzsd", infer_cfg, props),
                           gts, ds.split.seen, ds.split.unseen)
    return ArmResult(arm, run.train_cfg.seed, report, mats.seen.background.copy(),
                     time.perf_counter() - t0, run.audit, model if keep_model else None, gz)


@dataclass
class AblationResult:
    recalls: Dict[str, List[float]] = field(default_factory=dict)     # arm -> per-seed unseen R@100@0.5
    maps: Dict[str, List[float]] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    seconds: float = 0.0
    unseen_boxes_used: int = 0
    boxes_used: int = 0

    def mean(self, arm: str) -> float:
        return float(np.mean(self.recalls[arm]))

    def std(self, arm: str) -> float:
        return float(np.std(self.recalls[arm], ddof=1)) if len(self.recalls[arm]) > 1 else 0.0

    def summary(self) -> str:
        lines = [f"{'arm':<10} {'R@100/0.5 mean':>15} {'std':>7} {'mAP/0.5':>8}  per-seed"]
        for arm in self.recalls:
            per = " ".join(f"{v:6.2f}" for v in self.recalls[arm])
            lines.append(f"{arm:<10} {self.mean(arm):15.2f} {self.std(arm):7.2f} "
                         f"{np.mean(self.maps[arm]):8.2f}  {per}")
        lines.append(f"seeds={self.seeds} seconds={self.seconds:.1f} "
                     f"boxes_used={self.boxes_used} unseen_boxes_used={self.unseen_boxes_used}")
        return "\n".join(lines)


def run_ablation(seeds: Sequence[int], n_train: int = 2000, n_test: int = 500,
                 world: Optional[ToyWorldConfig] = None, train_cfg: Optional[TrainConfig] = None,
                 blrpn_cfg: Optional[TrainConfig] = None, arms: Sequence[str] = tuple(ARMS),
                 model_overrides: Optional[dict] = None, progress=None) -> AblationResult:
    """Train and evaluate every arm for every seed; the seed drives data, init and sampling."""
    world = world or ToyWorldConfig()
    train_cfg = train_cfg or TrainConfig()
    result = AblationResult(recalls={a: [] for a in arms}, maps={a: [] for a in arms}, seeds=list(seeds))
    t0 = time.perf_counter()
    need_blrpn = any(ARMS[a]["use_blrpn_background"] for a in arms)
    for seed in seeds:
        tc = replace(train_cfg, seed=seed)
        bc = replace(blrpn_cfg or train_cfg, seed=seed)
        run = prepare_seed(replace(world, seed=seed), n_train, n_test, tc, bc, model_overrides, need_blrpn)
        for arm in arms:
            res = run_arm(run, arm)
            result.recalls[arm].append(res.report.recall[0.5])
            result.maps[arm].append(res.report.map50)
            if progress:
                progress(seed, arm, res)
        result.unseen_boxes_used += run.audit.unseen_boxes_used
        result.boxes_used += run.audit.boxes_used
    result.seconds = time.perf_counter() - t0
    return result
