"""Datasets: the synthetic attribute-shapes world and COCO-style annotation subsets.

The toy world builds every class from four attribute axes (shape, color,
size, texture).  Visually, an object paints the sum of its attribute
prototypes over the feature cells it covers; semantically, its word vector
is the normalized concatenation of its attribute embeddings.  Unseen classes
recombine attribute values that seen classes already use, so a
visual-to-semantic map learned on seen classes transfers.  Background clutter
paints one or two attribute prototypes without being an object, which is
what makes background and unseen objects easy to confuse.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embeddings import EmbeddingTable, l2_normalize, load_word_vectors, save_word_vectors


class DataError(ValueError):
    pass


class ZeroShotLeakError(RuntimeError):
    """An unseen-class annotation reached a training operation."""


# -- splits -----------------------------------------------------------------

COCO_CLASSES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich",
    "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
    "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book",
    "clock", "vase", "scissors", "teddy bear", "hair drier", "toothbrush",
)

COCO_48_17_UNSEEN = (
    "bus", "dog", "cow", "elephant", "umbrella", "tie", "skateboard", "cup", "knife", "cake",
    "couch", "keyboard", "sink", "scissors", "airplane", "cat", "snowboard",
)
COCO_48_17_SEEN = (
    "toilet", "bicycle", "apple", "train", "laptop", "carrot", "motorcycle", "oven", "chair",
    "mouse", "boat", "kite", "sheep", "horse", "sandwich", "clock", "tv", "backpack", "toaster",
    "bowl", "microwave", "bench", "book", "orange", "bird", "pizza", "fork", "frisbee", "bear",
    "vase", "toothbrush", "spoon", "giraffe", "handbag", "broccoli", "refrigerator", "remote",
    "surfboard", "car", "bed", "banana", "donut", "skis", "person", "truck", "bottle",
    "suitcase", "zebra",
)
COCO_65_15_UNSEEN = (
    "airplane", "train", "parking meter", "cat", "bear", "suitcase", "frisbee", "snowboard",
    "fork", "sandwich", "hot dog", "toilet", "mouse", "toaster", "hair drier",
)
COCO_65_15_SEEN = tuple(c for c in COCO_CLASSES if c not in COCO_65_15_UNSEEN)

EXCLUDE_UNSEEN = "exclude-images-with-unseen"


@dataclass(frozen=True)
class SplitConfig:
    seen: Tuple[str, ...]
    unseen: Tuple[str, ...]
    filter_policy: str = EXCLUDE_UNSEEN
    name: str = "custom"

    def __post_init__(self):
        if not self.seen or not self.unseen:
            raise DataError("split needs at least one seen and one unseen class")
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise DataError(f"classes both seen and unseen: {sorted(overlap)}")
        if len(set(self.seen)) != len(self.seen) or len(set(self.unseen)) != len(self.unseen):
            raise DataError("duplicate class names in split")
        if self.filter_policy != EXCLUDE_UNSEEN:
            raise DataError(f"unknown filter policy {self.filter_policy!r}")

    @property
    def classes(self) -> Tuple[str, ...]:
        return self.seen + self.unseen

    def group_of(self, name: str) -> str:
        if name in self.seen:
            return "seen"
        if name in self.unseen:
            return "unseen"
        raise DataError(f"class {name!r} not in split {self.name}")


def builtin_splits() -> Dict[str, SplitConfig]:
    return {
        "coco-48-17": SplitConfig(COCO_48_17_SEEN, COCO_48_17_UNSEEN, name="coco-48-17"),
        "coco-65-15": SplitConfig(COCO_65_15_SEEN, COCO_65_15_UNSEEN, name="coco-65-15"),
    }


def load_split_file(path, name: Optional[str] = None) -> SplitConfig:
    """Parse ``[seen]`` / ``[unseen]`` sections with one class name per line."""
    sections: Dict[str, List[str]] = {"seen": [], "unseen": []}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if s.startswith("[") and s.endswith("]"):
                current = s[1:-1].strip().lower()
                if current not in sections:
                    raise DataError(f"{path}:{lineno}: unknown section [{current}]")
                continue
            if current is None:
                raise DataError(f"{path}:{lineno}: class name outside a section")
            sections[current].append(s)
    return SplitConfig(tuple(sections["seen"]), tuple(sections["unseen"]), name=name or Path(path).stem)


def save_split_file(path, split: SplitConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[seen]\n" + "".join(c + "\n" for c in split.seen))
        fh.write("[unseen]\n" + "".join(c + "\n" for c in split.unseen))


# -- images -------------------------------------------------------------------

@dataclass
class AnnotatedImage:
    """One image: oracle feature map (if any) plus its boxes and class names.

    ``labels`` doubles as the provenance tag of every box; training code
    checks it against the split before a box may produce a gradient.
    """

    image_id: str
    height: int
    width: int
    boxes: np.ndarray                         # (n, 4) x1 y1 x2 y2
    labels: Tuple[str, ...]
    features: Optional[np.ndarray] = None     # (C, H / stride, W / stride)
    attributes: Optional[Tuple[Tuple[str, ...], ...]] = None
    clutter: Optional[np.ndarray] = None      # (m, 4) distractor regions, never annotated

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.labels) != len(self.boxes):
            raise DataError(f"{self.image_id}: {len(self.boxes)} boxes but {len(self.labels)} labels")
        if len(self.boxes):
            b = self.boxes
            if (b[:, 2] <= b[:, 0]).any() or (b[:, 3] <= b[:, 1]).any():
                raise DataError(f"{self.image_id}: degenerate box")
            if (b[:, :2] < 0).any() or (b[:, 2] > self.width).any() or (b[:, 3] > self.height).any():
                raise DataError(f"{self.image_id}: box outside image bounds")

    def contains_any(self, classes: Sequence[str]) -> bool:
        wanted = set(classes)
        return any(l in wanted for l in self.labels)

    def subset(self, classes: Sequence[str]) -> "AnnotatedImage":
        keep = [i for i, l in enumerate(self.labels) if l in set(classes)]
        return AnnotatedImage(self.image_id, self.height, self.width, self.boxes[keep],
                              tuple(self.labels[i] for i in keep), self.features,
                              None if self.attributes is None else tuple(self.attributes[i] for i in keep),
                              self.clutter)


def filter_training_images(images: Sequence[AnnotatedImage], split: SplitConfig) -> List[AnnotatedImage]:
    """Drop every training image that contains an unseen-class object."""
    return [im for im in images if not im.contains_any(split.unseen)]


# -- toy world ------------------------------------------------------------------

DEFAULT_ATTRIBUTES = {
    "shape": ("round", "square", "triangular", "star"),
    "color": ("red", "green", "blue", "yellow"),
    "size": ("small", "medium", "large"),
    "texture": ("plain", "striped", "dotted"),
}
SIZE_RANGES = {"small": (10.0, 16.0), "medium": (16.0, 24.0), "large": (24.0, 34.0)}
AXES = ("shape", "color", "size", "texture")


@dataclass(frozen=True)
class ToyWorldConfig:
    image_size: int = 64
    stride: int = 4
    feature_channels: int = 16
    attr_embed_dim: int = 8
    vocab_size: int = 64
    num_seen: int = 12
    num_unseen: int = 4
    objects_per_image: Tuple[int, int] = (1, 3)
    clutter_per_image: Tuple[int, int] = (2, 5)
    clutter_amplitude: float = 0.8
    object_amplitude: float = 1.0
    edge_amplitude: float = 1.0
    noise_std: float = 0.1
    embedding_jitter: float = 0.15
    max_object_iou: float = 0.2
    seed: int = 0

    @property
    def embed_dim(self) -> int:
        return self.attr_embed_dim * len(AXES)

    @property
    def feature_size(self) -> int:
        return self.image_size // self.stride


@dataclass
class ToyWorld:
    """Sampled world: class definitions, prototypes and word vectors."""

    cfg: ToyWorldConfig
    classes: Dict[str, Tuple[str, ...]]           # name -> attribute value per axis
    split: SplitConfig
    visual_prototypes: Dict[str, np.ndarray]       # attribute value -> (C,)
    attribute_embeddings: Dict[str, np.ndarray]    # attribute value -> (attr_embed_dim,)
    table: EmbeddingTable                          # class and vocabulary vectors
    vocabulary: Tuple[str, ...]
    edge_prototype: np.ndarray                     # (C,) response along any object border


def class_name(attrs: Sequence[str]) -> str:
    return "-".join(attrs)


def _axis_embeddings(rng, values, dim, jitter):
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    out = {}
    for i, v in enumerate(values):
        vec = basis[:, i] + jitter * rng.normal(size=dim) / np.sqrt(dim)
        out[v] = l2_normalize(vec, v)
    return out


def _concat_embedding(attr_emb, attrs: Sequence[Optional[str]], dim: int) -> np.ndarray:
    parts = [attr_emb[a] if a is not None else np.zeros(dim) for a in attrs]
    return np.concatenate(parts)


def _choose_classes(rng, cfg: ToyWorldConfig):
    combos = list(itertools.product(*(DEFAULT_ATTRIBUTES[a] for a in AXES)))
    if cfg.num_seen + cfg.num_unseen > len(combos):
        raise DataError("more classes requested than attribute combinations")
    for _ in range(1000):
        order = rng.permutation(len(combos))
        seen = [combos[i] for i in order[: cfg.num_seen]]
        covered = [{c[k] for c in seen} for k in range(len(AXES))]
        if all(covered[k] == set(DEFAULT_ATTRIBUTES[a]) for k, a in enumerate(AXES)):
            unseen = [combos[i] for i in order[cfg.num_seen: cfg.num_seen + cfg.num_unseen]]
            return seen, unseen
    raise DataError("could not find seen classes covering every attribute value")


def build_toy_world(cfg: ToyWorldConfig) -> ToyWorld:
    rng = np.random.default_rng([cfg.seed, 0xC1A55])
    seen, unseen = _choose_classes(rng, cfg)
    attr_emb: Dict[str, np.ndarray] = {}
    protos: Dict[str, np.ndarray] = {}
    for axis in AXES:
        attr_emb.update(_axis_embeddings(rng, DEFAULT_ATTRIBUTES[axis], cfg.attr_embed_dim, cfg.embedding_jitter))
    for axis in AXES:
        for v in DEFAULT_ATTRIBUTES[axis]:
            # non-negative, like post-ReLU backbone activations
            protos[v] = np.abs(rng.normal(size=cfg.feature_channels)) / np.sqrt(cfg.feature_channels)

    edge = np.abs(rng.normal(size=cfg.feature_channels)) / np.sqrt(cfg.feature_channels)

    vectors: Dict[str, np.ndarray] = {}
    classes = {}
    for attrs in seen + unseen:
        name = class_name(attrs)
        classes[name] = tuple(attrs)
        vectors[name] = _concat_embedding(attr_emb, attrs, cfg.attr_embed_dim)

    # external vocabulary: partial attribute descriptions, never a full class
    vocab: List[str] = []
    while len(vocab) < cfg.vocab_size:
        n_axes = int(rng.integers(1, len(AXES)))
        axes = sorted(rng.choice(len(AXES), size=n_axes, replace=False).tolist())
        attrs = [None] * len(AXES)
        for k in axes:
            vals = DEFAULT_ATTRIBUTES[AXES[k]]
            attrs[k] = vals[int(rng.integers(len(vals)))]
        name = "w:" + "+".join(a for a in attrs if a is not None)
        if name in vectors:
            continue
        vec = _concat_embedding(attr_emb, attrs, cfg.attr_embed_dim)
        vec = vec + 0.1 * rng.normal(size=vec.shape) / np.sqrt(vec.size)
        vectors[name] = vec
        vocab.append(name)

    split = SplitConfig(tuple(class_name(a) for a in seen), tuple(class_name(a) for a in unseen), name="toy")
    table = EmbeddingTable.from_vectors(vectors, cfg.embed_dim)
    return ToyWorld(cfg, classes, split, protos, attr_emb, table, tuple(vocab), edge)


def _coverage(boxes: np.ndarray, fsize: int, stride: int) -> np.ndarray:
    """Fraction of each feature cell covered by each box: (n, fsize, fsize)."""
    edges = np.arange(fsize + 1) * stride
    lo, hi = edges[:-1], edges[1:]
    ox = np.clip(np.minimum(boxes[:, 2:3], hi) - np.maximum(boxes[:, 0:1], lo), 0, None) / stride
    oy = np.clip(np.minimum(boxes[:, 3:4], hi) - np.maximum(boxes[:, 1:2], lo), 0, None) / stride
    return oy[:, :, None] * ox[:, None, :]


def _border(boxes: np.ndarray, fsize: int, stride: int) -> np.ndarray:
    """Coverage of the one-cell-wide band just inside each box outline."""
    inner = boxes + np.array([stride, stride, -stride, -stride], dtype=float)
    inner[:, 2] = np.maximum(inner[:, 2], inner[:, 0])
    inner[:, 3] = np.maximum(inner[:, 3], inner[:, 1])
    return _coverage(boxes, fsize, stride) - _coverage(inner, fsize, stride)


def _paint(feats, cfg, box_arr, visual, amplitude, edge):
    fs = cfg.feature_size
    feats += amplitude * visual[:, None, None] * _coverage(box_arr, fs, cfg.stride)[0][None]
    feats += cfg.edge_amplitude * edge[:, None, None] * _border(box_arr, fs, cfg.stride)[0][None]


def _place_box(rng, size_range, image_size, existing, max_iou, tries=50):
    from .boxes import iou_matrix
    for _ in range(tries):
        w = rng.uniform(*size_range)
        h = w * rng.uniform(0.8, 1.25)
        h = min(h, image_size - 1.0)
        x1 = rng.uniform(0, image_size - w)
        y1 = rng.uniform(0, image_size - h)
        box = np.array([x1, y1, x1 + w, y1 + h])
        if not existing or iou_matrix(box[None], np.array(existing)).max() <= max_iou:
            return box
    return None


def render_toy_image(world: ToyWorld, rng, class_names: Sequence[str], image_id: str) -> AnnotatedImage:
    cfg = world.cfg
    fs = cfg.feature_size
    boxes, labels = [], []
    for name in class_names:
        size = world.classes[name][AXES.index("size")]
        box = _place_box(rng, SIZE_RANGES[size], cfg.image_size, boxes, cfg.max_object_iou)
        if box is None:
            continue
        boxes.append(box)
        labels.append(name)
    boxes_arr = np.array(boxes).reshape(-1, 4)

    feats = cfg.noise_std * rng.normal(size=(cfg.feature_channels, fs, fs))
    for box, name in zip(boxes_arr, labels):
        visual = sum(world.visual_prototypes[v] for v in world.classes[name])
        _paint(feats, cfg, box[None], visual, cfg.object_amplitude, world.edge_prototype)

    n_clutter = int(rng.integers(cfg.clutter_per_image[0], cfg.clutter_per_image[1] + 1))
    clutter = []
    for _ in range(n_clutter):
        box = _place_box(rng, (8.0, 30.0), cfg.image_size, boxes, cfg.max_object_iou)
        if box is None:
            continue
        n_attr = int(rng.integers(1, 3))
        axes = rng.choice(len(AXES), size=n_attr, replace=False)
        visual = np.zeros(cfg.feature_channels)
        for k in axes:
            vals = DEFAULT_ATTRIBUTES[AXES[k]]
            visual += world.visual_prototypes[vals[int(rng.integers(len(vals)))]]
        _paint(feats, cfg, box[None], visual, cfg.clutter_amplitude, world.edge_prototype)
        clutter.append(box)

    return AnnotatedImage(
        image_id=image_id, height=cfg.image_size, width=cfg.image_size,
        boxes=boxes_arr, labels=tuple(labels), features=feats.astype(np.float32),
        attributes=tuple(world.classes[n] for n in labels),
        clutter=np.array(clutter).reshape(-1, 4),
    )


def _sample_image(world: ToyWorld, base_seed: int, subset: str, index: int, include_unseen: bool) -> AnnotatedImage:
    cfg = world.cfg
    rng = np.random.default_rng([base_seed, 1 if subset == "train" else 2, index])
    lo, hi = cfg.objects_per_image
    n = int(rng.integers(lo, hi + 1))
    seen, unseen = world.split.seen, world.split.unseen
    if include_unseen:
        names = [unseen[int(rng.integers(len(unseen)))]]
        pool = seen + unseen
        names += [pool[int(rng.integers(len(pool)))] for _ in range(n - 1)]
    else:
        names = [seen[int(rng.integers(len(seen)))] for _ in range(n)]
    img = render_toy_image(world, rng, names, f"{subset}-{index:05d}")
    if include_unseen and not img.contains_any(unseen):
        raise DataError(f"{img.image_id}: unseen object could not be placed")
    return img


@dataclass
class ToyDataset:
    world: ToyWorld
    train: List[AnnotatedImage]
    test: List[AnnotatedImage]
    seed: int

    @property
    def table(self) -> EmbeddingTable:
        return self.world.table

    @property
    def split(self) -> SplitConfig:
        return self.world.split


def generate_toy_dataset(cfg: ToyWorldConfig, n_train: int, n_test: int,
                         split: Optional[SplitConfig] = None) -> ToyDataset:
    """Sample train (seen objects only) and test (every image holds an unseen object) sets."""
    world = build_toy_world(cfg)
    if split is not None:
        unknown = [c for c in split.classes if c not in world.classes]
        if unknown:
            raise DataError(f"split classes not defined by the world: {unknown}")
        world.split = split
    train = [_sample_image(world, cfg.seed, "train", i, False) for i in range(n_train)]
    test = [_sample_image(world, cfg.seed, "test", i, True) for i in range(n_test)]
    return ToyDataset(world, train, test, cfg.seed)


def toy_split_from_world(cfg: ToyWorldConfig) -> SplitConfig:
    return build_toy_world(cfg).split


# -- hashing and persistence ----------------------------------------------------------

def content_hash(images: Sequence[AnnotatedImage], extra: Optional[dict] = None) -> str:
    h = hashlib.sha256()
    if extra is not None:
        h.update(json.dumps(extra, sort_keys=True).encode())
    for im in images:
        h.update(im.image_id.encode())
        h.update(np.ascontiguousarray(im.boxes, dtype=np.float64).tobytes())
        h.update("\x00".join(im.labels).encode())
        if im.features is not None:
            h.update(np.ascontiguousarray(im.features).tobytes())
    return h.hexdigest()


def _coco_dict(images: Sequence[AnnotatedImage], classes: Sequence[str], subset: str) -> dict:
    cat_ids = {c: i + 1 for i, c in enumerate(classes)}
    out = {"images": [], "annotations": [], "categories": [{"id": i, "name": c} for c, i in cat_ids.items()]}
    ann_id = 1
    for idx, im in enumerate(images):
        out["images"].append({"id": idx + 1, "file_name": im.image_id, "width": im.width,
                              "height": im.height, "subset": subset})
        for box, lab in zip(im.boxes, im.labels):
            x1, y1, x2, y2 = (float(v) for v in box)
            out["annotations"].append({"id": ann_id, "image_id": idx + 1, "category_id": cat_ids[lab],
                                       "bbox": [x1, y1, x2 - x1, y2 - y1]})
            ann_id += 1
    return out


def save_toy_dataset(ds: ToyDataset, out_dir, extra_meta: Optional[dict] = None) -> dict:
    """Write features, annotations, word vectors, split and a manifest; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes = ds.split.classes
    for subset, imgs in (("train", ds.train), ("test", ds.test)):
        np.save(out / f"features_{subset}.npy", np.stack([im.features for im in imgs]) if imgs
                else np.zeros((0,), np.float32))
        with open(out / f"annotations_{subset}.json", "w", encoding="utf-8") as fh:
            json.dump(_coco_dict(imgs, classes, subset), fh, indent=1, sort_keys=True)
    save_word_vectors(out / "word_vectors.txt", ds.table.entries)
    with open(out / "vocabulary.txt", "w", encoding="utf-8") as fh:
        fh.write("".join(v + "\n" for v in ds.world.vocabulary))
    save_split_file(out / "split.txt", ds.split)
    cfg = asdict(ds.world.cfg)
    manifest = {
        "format_version": 1,
        "kind": "toy",
        "split": ds.split.name,
        "seed": ds.seed,
        "world_config": cfg,
        "n_train": len(ds.train),
        "n_test": len(ds.test),
        "content_hash": content_hash(ds.train + ds.test, {"world": cfg, "split": [ds.split.seen, ds.split.unseen]}),
    }
    if extra_meta:
        manifest.update(extra_meta)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _parse_coco(data: dict, source: str):
    cats = {c["id"]: c["name"] for c in data.get("categories", [])}
    anns: Dict[int, list] = {}
    for a in data.get("annotations", []):
        if a["category_id"] not in cats:
            raise DataError(f"{source}: annotation {a.get('id')} has unknown category id {a['category_id']}")
        anns.setdefault(a["image_id"], []).append(a)
    return cats, anns


def _images_from_coco(data: dict, source: str, features: Optional[np.ndarray] = None):
    cats, anns = _parse_coco(data, source)
    out = []
    for idx, meta in enumerate(data["images"]):
        boxes, labels = [], []
        for a in anns.get(meta["id"], []):
            x, y, w, h = a["bbox"]
            boxes.append([x, y, x + w, y + h])
            labels.append(cats[a["category_id"]])
        out.append((meta, AnnotatedImage(
            image_id=str(meta.get("file_name", meta["id"])), height=int(meta["height"]),
            width=int(meta["width"]), boxes=np.array(boxes).reshape(-1, 4), labels=tuple(labels),
            features=None if features is None else features[idx],
        )))
    return out


def save_annotation_dataset(train: Sequence[AnnotatedImage], test: Sequence[AnnotatedImage], split: SplitConfig,
                            out_dir, word_vectors: Optional[EmbeddingTable] = None,
                            extra_meta: Optional[dict] = None) -> dict:
    """Same layout as :func:`save_toy_dataset` for annotation-only data (no feature maps)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for subset, imgs in (("train", train), ("test", test)):
        np.save(out / f"features_{subset}.npy", np.zeros((0,), np.float32))
        with open(out / f"annotations_{subset}.json", "w", encoding="utf-8") as fh:
            json.dump(_coco_dict(imgs, split.classes, subset), fh, indent=1, sort_keys=True)
    if word_vectors is not None:
        save_word_vectors(out / "word_vectors.txt", word_vectors.entries)
    save_split_file(out / "split.txt", split)
    manifest = {
        "format_version": 1,
        "kind": "annotations",
        "split": split.name,
        "embed_dim": None if word_vectors is None else word_vectors.dim,
        "n_train": len(train),
        "n_test": len(test),
        "content_hash": content_hash(list(train) + list(test), {"split": [split.seen, split.unseen]}),
    }
    if extra_meta:
        manifest.update(extra_meta)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_toy_dataset(data_dir) -> Tuple[List[AnnotatedImage], List[AnnotatedImage], Optional[EmbeddingTable],
                                        SplitConfig, dict]:
    """Read a directory written by :func:`save_toy_dataset` or :func:`save_annotation_dataset`."""
    d = Path(data_dir)
    if not (d / "manifest.json").is_file():
        raise DataError(f"{d}: not a prepared dataset (manifest.json missing)")
    with open(d / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    split = load_split_file(d / "split.txt", name=manifest.get("split"))
    if "world_config" in manifest:
        dim = manifest["world_config"]["attr_embed_dim"] * len(AXES)
    else:
        dim = manifest.get("embed_dim")
    table = load_word_vectors(d / "word_vectors.txt", dim) if dim else None
    subsets = []
    for subset in ("train", "test"):
        feats = np.load(d / f"features_{subset}.npy")
        with open(d / f"annotations_{subset}.json", encoding="utf-8") as fh:
            data = json.load(fh)
        subsets.append([im for _, im in _images_from_coco(data, str(d), feats if feats.ndim == 4 else None)])
    return subsets[0], subsets[1], table, split, manifest


def load_vocabulary_names(data_dir) -> List[str]:
    path = Path(data_dir) / "vocabulary.txt"
    if not path.is_file():
        return []
    with open(path, encoding="utf-8") as fh:
        return [l.rstrip("\n") for l in fh if l.strip()]


def load_annotation_subset(path, split: SplitConfig) -> Tuple[List[AnnotatedImage], List[AnnotatedImage]]:
    """Load a COCO-style file whose images carry ``"subset": "train" | "test"`` (default train).

    Training images holding any unseen-class object are dropped; the test
    set is returned untouched.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    cats, anns = _parse_coco(data, str(path))
    used = {cats[a["category_id"]] for img_anns in anns.values() for a in img_anns}
    unknown = sorted(used - set(split.classes))
    if unknown:
        raise DataError(f"{path}: classes not in split {split.name}: {unknown}")
    train, test = [], []
    for meta, im in _images_from_coco(data, str(path)):
        subset = meta.get("subset", "train")
        if subset == "train":
            train.append(im)
        elif subset == "test":
            test.append(im)
        else:
            raise DataError(f"{path}: image {meta['id']} has unknown subset {subset!r}")
    return filter_training_images(train, split), test


def world_config_from_dict(d: dict) -> ToyWorldConfig:
    d = dict(d)
    for k in ("objects_per_image", "clutter_per_image"):
        if k in d:
            d[k] = tuple(d[k])
    return ToyWorldConfig(**d)
