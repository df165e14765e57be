"""Sign-random-projection hash families.

Three kinds:
  * "plain"       — Gaussian hyperplanes in the ambient space,
  * "pca"         — Gaussian hyperplanes drawn in the span of the data's top
                    principal components (random directions *within* the top
                    subspace, bit = sign(r . (U^T x))),
  * "pca_direct"  — the principal directions themselves as hyperplanes
                    (the PCA-hash baseline; no randomness beyond the basis).

Bit b of table t is 1 iff the projection is >= 0; the tie at exactly 0 is a
measure-zero event for continuous data but the convention is fixed so keys
are reproducible. A key packs l <= 64 bits into one uint64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .linalg import TruncatedBasis, truncated_svd

PLAIN = "plain"
PCA = "pca"
PCA_DIRECT = "pca_direct"
KINDS = (PLAIN, PCA, PCA_DIRECT)

_MAGIC = b"HDVF"
_KIND_CODE = {PLAIN: 0, PCA: 1, PCA_DIRECT: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass(frozen=True)
class HashFamily:
    """L tables of l sign-projection bits each, fully determined by
    (kind, l, L, d, alpha, seed) plus the PCA basis for the pca kinds.

    hyperplanes has shape (L, l, d) for "plain" and (L, l, alpha) for the
    projected kinds (the effective ambient-space normal is then U @ r).
    Immutable after construction; hashing is pure.
    """

    kind: str
    l: int
    L: int
    d: int
    alpha: int | None
    seed: int
    hyperplanes: np.ndarray
    basis: TruncatedBasis | None = None


def _hyperplane(seed: int, table: int, bit: int, dim: int) -> np.ndarray:
    # Counter-based generator keyed by (seed, table, bit): hyperplane (t, b)
    # is reproducible independent of construction order, which also makes an
    # (l, L) family a bit-exact prefix of any larger family with the same seed.
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(table, bit))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(dim)


def new_family(
    kind: str,
    l: int,
    L: int,
    d: int,
    *,
    alpha: int | None = None,
    seed: int = 0,
    dataset: Dataset | None = None,
    basis: TruncatedBasis | None = None,
) -> HashFamily:
    """Construct a hash family; deterministic for a fixed seed.

    The pca kinds need either a precomputed basis or a dataset to compute
    the truncated SVD from. alpha defaults to min(200, d, n) when derived
    from a dataset.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown hash kind {kind!r}, expected one of {KINDS}")
    if not 1 <= l <= 64:
        raise ValueError(f"l={l} out of range [1, 64] (keys pack into one machine word)")
    if L < 1:
        raise ValueError("L must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")

    if kind == PLAIN:
        planes = np.stack([np.stack([_hyperplane(seed, t, b, d) for b in range(l)]) for t in range(L)])
        return HashFamily(kind=kind, l=l, L=L, d=d, alpha=None, seed=seed, hyperplanes=planes)

    if basis is None:
        if dataset is None:
            raise ValueError(f"kind {kind!r} requires a dataset or a precomputed basis")
        if dataset.d != d:
            raise ValueError(f"dataset dimension {dataset.d} != family dimension {d}")
        if alpha is None:
            alpha = min(200, d, dataset.n)
        basis = truncated_svd(dataset.vectors.T, alpha)
    else:
        if basis.U.shape[0] != d:
            raise ValueError(f"basis dimension {basis.U.shape[0]} != family dimension {d}")
        if alpha is None:
            alpha = basis.U.shape[1]
    if alpha != basis.U.shape[1]:
        raise ValueError(f"alpha={alpha} does not match basis with {basis.U.shape[1]} columns")

    if kind == PCA:
        planes = np.stack([np.stack([_hyperplane(seed, t, b, alpha) for b in range(l)]) for t in range(L)])
    else:  # PCA_DIRECT: r = standard basis vectors, distinct directions per table
        if alpha < l:
            raise ValueError(f"pca_direct needs alpha >= l, got alpha={alpha}, l={l}")
        planes = np.zeros((L, l, alpha))
        for t in range(L):
            for b in range(l):
                planes[t, b, (t * l + b) % alpha] = 1.0
    return HashFamily(kind=kind, l=l, L=L, d=d, alpha=alpha, seed=seed, hyperplanes=planes, basis=basis)


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack (..., l) booleans into uint64 keys, bit b at position b."""
    l = bits.shape[-1]
    padded = np.zeros(bits.shape[:-1] + (64,), dtype=bool)
    padded[..., :l] = bits
    return np.packbits(padded, axis=-1, bitorder="little").view(np.uint64)[..., 0]


def _project(family: HashFamily, x):
    """Map points into the space the hyperplanes live in (U^T x for pca kinds)."""
    if family.kind == PLAIN:
        return x
    return x @ family.basis.U


def hash_matrix(family: HashFamily, vectors) -> np.ndarray:
    """Keys for every row of `vectors` under every table: (n, L) uint64."""
    if vectors.shape[1] != family.d:
        raise ValueError(f"point dimension {vectors.shape[1]} != family dimension {family.d}")
    z = _project(family, vectors)
    if sp.issparse(z):
        z = np.asarray(z.todense())
    # one fused projection against all L*l hyperplanes
    planes = family.hyperplanes.reshape(family.L * family.l, -1)
    bits = (z @ planes.T >= 0.0).reshape(z.shape[0], family.L, family.l)
    return _pack_bits(bits)


def hash_vector(family: HashFamily, x) -> np.ndarray:
    """Keys of a single point for all L tables."""
    x = x.reshape(1, -1) if not sp.issparse(x) else x
    return hash_matrix(family, x)[0]


def hash_point(family: HashFamily, table: int, x) -> int:
    """Key of point x in one table; bit b = [r_{table,b} . x >= 0]."""
    if not 0 <= table < family.L:
        raise ValueError(f"table {table} out of range [0, {family.L})")
    vec = x.vector if hasattr(x, "vector") else x
    return int(hash_vector(family, vec)[table])


def collision_probability(a, b) -> float:
    """Per-bit agreement probability of two points under a random sign
    projection: 1 - arccos(a.b / (|a||b|)) / pi."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("collision probability undefined for zero vectors")
    cos = np.clip(a @ b / (na * nb), -1.0, 1.0)
    return 1.0 - float(np.arccos(cos)) / np.pi


def estimate_collision_rate(a, b, trials: int, seed: int = 0) -> float:
    """Monte Carlo check of the collision law: fraction of `trials`
    independent Gaussian hyperplanes on which sign(r.a) == sign(r.b)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    r = np.random.default_rng(seed).standard_normal((trials, a.size))
    return float(np.mean((r @ a >= 0.0) == (r @ b >= 0.0)))


def family_to_bytes(family: HashFamily) -> bytes:
    """Binary sidecar: header (kind, l, L, d, alpha, seed) plus the basis for
    the pca kinds. Hyperplanes regenerate bit-identically from the seed."""
    alpha = family.alpha or 0
    out = [_MAGIC, struct.pack("<BIIQQq", _KIND_CODE[family.kind], family.l, family.L, family.d, alpha, family.seed)]
    if family.basis is not None:
        b = family.basis
        out.append(struct.pack("<BQI", 1, b.iterations, int(b.converged)))
        out.append(np.ascontiguousarray(b.U, dtype=np.float64).tobytes())
        out.append(np.ascontiguousarray(b.singular_values, dtype=np.float64).tobytes())
    else:
        out.append(struct.pack("<BQI", 0, 0, 0))
    return b"".join(out)


def family_from_bytes(blob: bytes) -> HashFamily:
    if blob[:4] != _MAGIC:
        raise ValueError("not a hash-family blob (bad magic)")
    off = 4
    code, l, L, d, alpha, seed = struct.unpack_from("<BIIQQq", blob, off)
    off += struct.calcsize("<BIIQQq")
    has_basis, iterations, conv = struct.unpack_from("<BQI", blob, off)
    off += struct.calcsize("<BQI")
    basis = None
    if has_basis:
        u_bytes = d * alpha * 8
        U = np.frombuffer(blob, dtype=np.float64, count=d * alpha, offset=off).reshape(d, alpha).copy()
        off += u_bytes
        sv = np.frombuffer(blob, dtype=np.float64, count=alpha, offset=off).copy()
        off += alpha * 8
        basis = TruncatedBasis(U=U, singular_values=sv, converged=bool(conv), iterations=int(iterations))
    kind = _CODE_KIND[code]
    return new_family(kind, int(l), int(L), int(d), alpha=int(alpha) or None, seed=int(seed), basis=basis)


def save_family(family: HashFamily, path) -> None:
    with open(path, "wb") as fh:
        fh.write(family_to_bytes(family))


def load_family(path) -> HashFamily:
    with open(path, "rb") as fh:
        return family_from_bytes(fh.read())
