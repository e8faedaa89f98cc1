"""Word-vector tables and the fixed semantic matrices built from them.

Every matrix stores one word vector per column, so a matrix over ``k`` names
has shape ``(d, k)``.  Column 0 of the seen and unseen matrices is reserved
for the background vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

NORM_TOLERANCE = 1e-6


class EmbeddingError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def l2_normalize(vec, name: str = "<vector>") -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if not np.isfinite(norm) or norm == 0.0:
        raise EmbeddingError(f"zero-norm vector: {name}")
    return vec / norm


@dataclass(frozen=True)
class EmbeddingTable:
    """Named, unit-norm word vectors of a shared dimension."""

    entries: Dict[str, np.ndarray]
    dim: int

    def __post_init__(self):
        if self.dim <= 0:
            raise EmbeddingError(f"dimension must be positive, got {self.dim}")
        for name, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise EmbeddingError(f"entry {name!r} has shape {vec.shape}, expected ({self.dim},)")

    @classmethod
    def from_vectors(cls, vectors: Dict[str, Sequence[float]], dim: Optional[int] = None) -> "EmbeddingTable":
        if dim is None:
            if not vectors:
                raise EmbeddingError("cannot infer dimension of an empty table")
            dim = len(next(iter(vectors.values())))
        entries = {name: _frozen(l2_normalize(vec, name)) for name, vec in vectors.items()}
        return cls(entries=entries, dim=dim)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> List[str]:
        return list(self.entries)

    def stack(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.entries]
        if missing:
            raise EmbeddingError(f"names missing from embedding table: {missing}")
        return np.stack([self.entries[n] for n in names], axis=1)


def load_word_vectors(path, dim: int) -> EmbeddingTable:
    """Read a plain-text embedding dump.

    One record per line: the name followed by ``dim`` decimals.  Names may
    contain spaces (``hair drier``) because the last ``dim`` tokens are
    always the coordinates.  Blank lines and ``#`` comments are skipped.
    """
    vectors: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) < dim + 1:
                raise EmbeddingError(f"{path}:{lineno}: expected a name and {dim} numbers")
            name = " ".join(tokens[:-dim])
            try:
                coords = np.array([float(t) for t in tokens[-dim:]])
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: malformed number in record {name!r}") from None
            if not np.all(np.isfinite(coords)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite value in record {name!r}")
            if name in vectors:
                raise EmbeddingError(f"{path}:{lineno}: duplicate name {name!r}")
            vectors[name] = _frozen(l2_normalize(coords, name))
    return EmbeddingTable(entries=vectors, dim=dim)


def save_word_vectors(path, vectors: Dict[str, Sequence[float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, vec in vectors.items():
            fh.write(name + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def mean_background(seen_vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """Plain arithmetic mean of the seen-class vectors (deliberately not re-normalized)."""
    if len(seen_vectors) == 0:
        raise EmbeddingError("mean background needs at least one seen vector")
    arr = np.stack([np.asarray(v, dtype=np.float64) for v in seen_vectors])
    return _frozen(arr.mean(axis=0))


@dataclass(frozen=True)
class ClassMatrix:
    """``(d, n+1)`` matrix whose column 0 is background and column i is ``class_order[i-1]``."""

    columns: np.ndarray
    class_order: Tuple[str, ...]

    def __post_init__(self):
        d, k = self.columns.shape
        if k != len(self.class_order) + 1:
            raise EmbeddingError(f"{k} columns for {len(self.class_order)} classes + background")

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def background(self) -> np.ndarray:
        return self.columns[:, 0]

    @property
    def num_classes(self) -> int:
        return len(self.class_order)

    def column(self, name: str) -> np.ndarray:
        return self.columns[:, self.class_order.index(name) + 1]


class SeenMatrix(ClassMatrix):
    pass


class UnseenMatrix(ClassMatrix):
    pass


def _build(cls, table: EmbeddingTable, classes: Sequence[str], background) -> ClassMatrix:
    if len(classes) == 0:
        raise EmbeddingError("class list is empty")
    background = np.asarray(background, dtype=np.float64)
    if background.shape != (table.dim,):
        raise EmbeddingError(f"background has shape {background.shape}, expected ({table.dim},)")
    missing = [c for c in classes if c not in table]
    if missing:
        raise EmbeddingError(f"classes missing from embedding table: {missing}")
    if len(set(classes)) != len(classes):
        raise EmbeddingError("duplicate class names")
    cols = np.concatenate([background[:, None], table.stack(classes)], axis=1)
    return cls(columns=_frozen(cols), class_order=tuple(classes))


def build_seen_matrix(table: EmbeddingTable, seen_classes: Sequence[str], background) -> SeenMatrix:
    return _build(SeenMatrix, table, seen_classes, background)


def build_unseen_matrix(table: EmbeddingTable, unseen_classes: Sequence[str], background) -> UnseenMatrix:
    return _build(UnseenMatrix, table, unseen_classes, background)


def replace_background(matrix: ClassMatrix, learned) -> ClassMatrix:
    """Return a copy of ``matrix`` with column 0 replaced by ``learned``."""
    learned = np.asarray(learned, dtype=np.float64)
    if learned.shape != (matrix.dim,):
        raise EmbeddingError(f"background of shape {learned.shape} does not fit dimension {matrix.dim}")
    cols = np.array(matrix.columns)
    cols[:, 0] = learned
    return type(matrix)(columns=_frozen(cols), class_order=matrix.class_order)


@dataclass(frozen=True)
class VocabularyMatrix:
    """External vocabulary ``D`` of shape ``(d, v)``; never trained."""

    columns: np.ndarray
    names: Tuple[str, ...] = field(default=())

    @property
    def size(self) -> int:
        return self.columns.shape[1]


def build_vocabulary_matrix(table: EmbeddingTable, names: Optional[Iterable[str]] = None,
                            exclude: Iterable[str] = ()) -> VocabularyMatrix:
    """Stack vocabulary vectors, dropping any name listed in ``exclude`` (e.g. class names)."""
    excluded = set(exclude)
    names = [n for n in (table.names() if names is None else names) if n not in excluded]
    if not names:
        raise EmbeddingError("vocabulary is empty")
    return VocabularyMatrix(columns=_frozen(table.stack(names)), names=tuple(names))


@dataclass(frozen=True)
class ForegroundBackgroundMatrix:
    """The two-column ``W_fb``: column 0 is background, column 1 foreground."""

    v_b: np.ndarray
    v_f: np.ndarray

    @property
    def columns(self) -> np.ndarray:
        return np.stack([self.v_b, self.v_f], axis=1)

    @classmethod
    def initial(cls, seen_vectors: Sequence[Sequence[float]], rng: np.random.Generator) -> "ForegroundBackgroundMatrix":
        # background starts at the seen mean, foreground uniformly at random
        v_b = mean_background(seen_vectors)
        bound = 1.0 / np.sqrt(v_b.shape[0])
        v_f = rng.uniform(-bound, bound, size=v_b.shape[0])
        return cls(v_b=v_b, v_f=_frozen(v_f))
