"""Dataset types, text-format ingestion, and the two-class synthetic generator.

All downstream geometry (collision law, greedy selection, the relaxed QP)
assumes unit-norm vectors, so loaders normalize by default and reject zero
rows outright instead of letting NaNs leak into the hash stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MISSING = -1  # sentinel for an absent category/subtopic label


class ParseError(ValueError):
    """Malformed input file; message carries the 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class DataPoint:
    """One database point (or query). `vector` is a 1-d dense array or a
    1 x d CSR row for sparse datasets; `labels` holds the multi-label set
    parsed from sparse files."""

    id: int
    vector: np.ndarray | sp.csr_matrix
    category: int | None = None
    subtopic: int | None = None
    labels: frozenset[int] | None = None

    def dense(self) -> np.ndarray:
        if sp.issparse(self.vector):
            return np.asarray(self.vector.todense()).ravel()
        return self.vector

    def coords(self) -> list[tuple[int, float]]:
        """Sparse view: sorted (index, value) pairs of the nonzeros."""
        if sp.issparse(self.vector):
            row = self.vector.tocsr()
            return list(zip(row.indices.tolist(), row.data.tolist()))
        idx = np.flatnonzero(self.vector)
        return list(zip(idx.tolist(), self.vector[idx].tolist()))


@dataclass
class Dataset:
    """Immutable-after-construction collection of points with ids 0..n-1.

    `vectors` is an (n, d) dense array or CSR matrix; row i is point i.
    Safe for concurrent reads.
    """

    vectors: np.ndarray | sp.csr_matrix
    categories: np.ndarray | None = None
    subtopics: np.ndarray | None = None
    label_sets: tuple[frozenset[int], ...] | None = None

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be 2-d (n points x d dims)")
        n = self.vectors.shape[0]
        for name in ("categories", "subtopics"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=int)
                if arr.shape != (n,):
                    raise ValueError(f"{name} must have one entry per point")
                setattr(self, name, arr)
        if self.label_sets is not None and len(self.label_sets) != n:
            raise ValueError("label_sets must have one entry per point")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.vectors)

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> DataPoint:
        if not 0 <= i < self.n:
            raise IndexError(f"point id {i} out of range [0, {self.n})")
        vec = self.vectors[i] if self.is_sparse else self.vectors[i, :]
        cat = sub = None
        if self.categories is not None and self.categories[i] != MISSING:
            cat = int(self.categories[i])
        if self.subtopics is not None and self.subtopics[i] != MISSING:
            sub = int(self.subtopics[i])
        labels = self.label_sets[i] if self.label_sets is not None else None
        return DataPoint(id=i, vector=vec, category=cat, subtopic=sub, labels=labels)

    def __iter__(self):
        return (self.point(i) for i in range(self.n))

    def dense_rows(self, ids) -> np.ndarray:
        """Densified (len(ids), d) slice; selectors always work dense."""
        rows = self.vectors[np.asarray(ids, dtype=int)]
        if sp.issparse(rows):
            return np.asarray(rows.todense())
        return rows

    @cached_property
    def subtopic_count_per_category(self) -> dict[int, int]:
        """Distinct observed subtopics per category (the metric denominator m)."""
        if self.categories is None or self.subtopics is None:
            return {}
        counts: dict[int, set[int]] = {}
        for c, s in zip(self.categories, self.subtopics):
            if c == MISSING or s == MISSING:
                continue
            counts.setdefault(int(c), set()).add(int(s))
        return {c: len(subs) for c, subs in counts.items()}


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; zero rows raise."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise ValueError(f"zero vector at row {bad} cannot be normalized")
    return x / norms[:, None]


def load_dense(path, normalize: bool = True) -> Dataset:
    """Read a dense CSV dataset: one point per line, comma-separated values,
    with an optional ``category:subtopic:`` prefix fused onto the first field
    (e.g. ``0:3:0.12,0.5,...``). LF or CRLF, UTF-8.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows: list[list[float]] = []
    cats: list[int] = []
    subs: list[int] = []
    arity = None
    labeled = False
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        cat = sub = MISSING
        if ":" in fields[0]:
            parts = fields[0].split(":")
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 'category:subtopic:value' prefix, got {fields[0]!r}")
            try:
                cat, sub = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, line_no, f"non-integer label in prefix {fields[0]!r}") from None
            fields[0] = parts[2]
            labeled = True
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(path, line_no, "non-numeric value") from None
        if arity is None:
            arity = len(values)
        elif len(values) != arity:
            raise ParseError(path, line_no, f"ragged row: {len(values)} values, expected {arity}")
        if normalize:
            norm = float(np.linalg.norm(values))
            if norm == 0.0:
                raise ParseError(path, line_no, "zero vector cannot be normalized")
            values = [v / norm for v in values]
        rows.append(values)
        cats.append(cat)
        subs.append(sub)
    vectors = np.array(rows, dtype=float).reshape(len(rows), arity or 0)
    return Dataset(
        vectors=vectors,
        categories=np.array(cats, dtype=int) if labeled else None,
        subtopics=np.array(subs, dtype=int) if labeled else None,
    )


def save_dense(dataset: Dataset, path) -> None:
    """Inverse of load_dense; floats written with shortest-roundtrip repr."""
    if dataset.is_sparse:
        raise ValueError("save_dense requires a dense dataset")
    lines = []
    for i in range(dataset.n):
        prefix = ""
        if dataset.categories is not None and dataset.categories[i] != MISSING:
            sub = dataset.subtopics[i] if dataset.subtopics is not None else MISSING
            prefix = f"{int(dataset.categories[i])}:{int(sub)}:"
        body = ",".join(repr(float(v)) for v in dataset.vectors[i])
        lines.append(prefix + body)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_sparse(path, d: int, normalize: bool = True) -> Dataset:
    """Read a LIBSVM-style multi-label file: ``lab1,lab2 idx:val idx:val ...``
    per line, feature indices 1-based in the file and stored 0-based.
    Indices must be strictly increasing and < d.
    """
    if d <= 0:
        raise ValueError("dimension d must be positive")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    label_sets: list[frozenset[int]] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        start = 0
        labels: frozenset[int] = frozenset()
        if tokens and ":" not in tokens[0]:
            try:
                labels = frozenset(int(t) for t in tokens[0].split(","))
            except ValueError:
                raise ParseError(path, line_no, f"bad label field {tokens[0]!r}") from None
            start = 1
        prev = -1
        row_idx: list[int] = []
        row_val: list[float] = []
        for tok in tokens[start:]:
            try:
                i_str, v_str = tok.split(":")
                idx = int(i_str) - 1  # 1-based in file
                val = float(v_str)
            except ValueError:
                raise ParseError(path, line_no, f"bad feature token {tok!r}") from None
            if idx < 0 or idx >= d:
                raise ParseError(path, line_no, f"index out of range: {idx + 1} (d={d})")
            if idx <= prev:
                raise ParseError(path, line_no, f"indices must be strictly increasing, got {idx + 1} after {prev + 1}")
            prev = idx
            row_idx.append(idx)
            row_val.append(val)
        if normalize:
            norm = float(np.linalg.norm(row_val))
            if norm == 0.0:
                raise ParseError(path, line_no, "zero vector cannot be normalized")
            row_val = [v / norm for v in row_val]
        indices.extend(row_idx)
        values.extend(row_val)
        indptr.append(len(indices))
        label_sets.append(labels)
    vectors = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int32), np.array(indptr, dtype=np.int64)),
        shape=(len(label_sets), d),
    )
    return Dataset(vectors=vectors, label_sets=tuple(label_sets))


def save_sparse(dataset: Dataset, path) -> None:
    """Inverse of load_sparse (1-based indices, labels sorted ascending)."""
    if not dataset.is_sparse:
        raise ValueError("save_sparse requires a sparse dataset")
    csr = dataset.vectors.tocsr()
    lines = []
    for i in range(dataset.n):
        parts = []
        if dataset.label_sets is not None and dataset.label_sets[i]:
            parts.append(",".join(str(lab) for lab in sorted(dataset.label_sets[i])))
        lo, hi = csr.indptr[i], csr.indptr[i + 1]
        for j, v in zip(csr.indices[lo:hi], csr.data[lo:hi]):
            parts.append(f"{j + 1}:{repr(float(v))}")
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class ToyConfig:
    """Two isotropic Gaussian clouds on the unit sphere, one per class."""

    n_per_class: int
    class_centers: tuple = ((1.0, 0.0), (-1.0, 0.0))
    spread: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 0:
            raise ValueError("n_per_class must be >= 0")
        if self.spread <= 0:
            raise ValueError("spread must be > 0")
        centers = np.asarray(self.class_centers, dtype=float)
        if centers.shape[0] != 2:
            raise ValueError("exactly two class centers required")
        if np.allclose(centers[0], centers[1]):
            raise ValueError("class centers must be distinct")


def make_toy(config: ToyConfig) -> Dataset:
    """Pure function of its config: same seed, same bits out. Category is
    the class index (0/1); points are unit-normalized after sampling."""
    centers = np.asarray(config.class_centers, dtype=float)
    d = centers.shape[1]
    n = config.n_per_class
    rng = np.random.default_rng(config.seed)
    clouds = [centers[c] + config.spread * rng.standard_normal((n, d)) for c in range(2)]
    vectors = np.vstack(clouds) if n > 0 else np.empty((0, d))
    if n > 0:
        vectors = normalize_rows(vectors)
    categories = np.repeat(np.arange(2), n)
    return Dataset(vectors=vectors, categories=categories)
