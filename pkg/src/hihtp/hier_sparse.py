"""Hierarchically sparse vectors and the exact projections onto them.

A two-level hierarchically sparse vector is a block vector with at most
``s`` active blocks, each carrying at most ``sigma`` active entries.  A
three-level vector adds an outer layer of at most ``S`` active users, each
holding such a two-level pattern.  The projections here are the exact
Euclidean projections onto these sets and run in time linear in the size
of the input (k-selection per block, no full sort).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "SparsityLevels",
    "HiSupport",
    "HiSparseVector",
    "project_hisparse",
    "project_three_level",
    "restrict",
    "restrict_array",
]


@dataclass(frozen=True)
class SparsityLevels:
    """Per-level sparsity budget: ``s`` active blocks, ``sigma`` entries per
    block, and optionally ``S`` active users for three-level problems."""

    s: int
    sigma: int
    S: int | None = None

    def __post_init__(self):
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.sigma < 1:
            raise ValueError(f"sigma must be >= 1, got {self.sigma}")
        if self.S is not None and self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")

    @property
    def levels(self) -> int:
        return 2 if self.S is None else 3

    def check_shape(self, shape: tuple[int, ...]) -> None:
        """Raise if the budget does not fit a block vector of this shape."""
        if self.S is None:
            if len(shape) != 2:
                raise ValueError(f"expected a (mu, n) block vector, got shape {shape}")
            mu, n = shape
        else:
            if len(shape) != 3:
                raise ValueError(f"expected a (N, mu, n) block vector, got shape {shape}")
            N, mu, n = shape
            if self.S > N:
                raise ValueError(f"S={self.S} exceeds user count N={N}")
        if self.s > mu:
            raise ValueError(f"s={self.s} exceeds block count mu={mu}")
        if self.sigma > n:
            raise ValueError(f"sigma={self.sigma} exceeds block length n={n}")


def _check_strictly_increasing(indices, what: str) -> None:
    prev = -1
    for i in indices:
        if int(i) != i or i < 0:
            raise ValueError(f"{what} must be non-negative integers, got {i!r}")
        if i <= prev:
            raise ValueError(f"{what} must be strictly increasing, got {tuple(indices)}")
        prev = i


@dataclass(frozen=True)
class HiSupport:
    """Nested support pattern of a hierarchically sparse vector.

    Two-level supports list active blocks with their active entries:
    ``blocks = ((block_index, (entry, ...)), ...)``.  Three-level supports
    instead list active users, each with a two-level sub-support:
    ``users = ((user_index, HiSupport), ...)``.  All index lists are
    strictly increasing.
    """

    blocks: tuple[tuple[int, tuple[int, ...]], ...] = ()
    users: tuple[tuple[int, "HiSupport"], ...] | None = None

    def __post_init__(self):
        if self.users is not None:
            if self.blocks:
                raise ValueError("a three-level support must not set `blocks` directly")
            _check_strictly_increasing([u for u, _ in self.users], "user indices")
            for _, sub in self.users:
                if sub.levels != 2:
                    raise ValueError("per-user sub-supports must be two-level")
        else:
            _check_strictly_increasing([k for k, _ in self.blocks], "block indices")
            for k, entries in self.blocks:
                _check_strictly_increasing(entries, f"entry indices of block {k}")
        # normalize to plain int tuples so equality and hashing are stable
        if self.users is not None:
            object.__setattr__(
                self, "users", tuple((int(u), sub) for u, sub in self.users)
            )
        else:
            object.__setattr__(
                self,
                "blocks",
                tuple((int(k), tuple(int(i) for i in e)) for k, e in self.blocks),
            )

    @property
    def levels(self) -> int:
        return 2 if self.users is None else 3

    @property
    def n_blocks(self) -> int:
        if self.users is not None:
            return sum(sub.n_blocks for _, sub in self.users)
        return len(self.blocks)

    @property
    def total(self) -> int:
        """Total cardinality: the sum of per-block cardinalities."""
        if self.users is not None:
            return sum(sub.total for _, sub in self.users)
        return sum(len(entries) for _, entries in self.blocks)

    def block_indices(self) -> tuple[int, ...]:
        if self.users is not None:
            raise ValueError("block_indices is only defined for two-level supports")
        return tuple(k for k, _ in self.blocks)

    def user_indices(self) -> tuple[int, ...]:
        if self.users is None:
            raise ValueError("user_indices is only defined for three-level supports")
        return tuple(u for u, _ in self.users)

    def fits(self, levels: SparsityLevels) -> bool:
        """Whether this support stays within the given sparsity budget."""
        if self.users is not None:
            if levels.S is None or len(self.users) > levels.S:
                return False
            return all(sub.fits(SparsityLevels(levels.s, levels.sigma)) for _, sub in self.users)
        if levels.S is not None:
            return False
        if len(self.blocks) > levels.s:
            return False
        return all(len(entries) <= levels.sigma for _, entries in self.blocks)

    def mask(self, shape: tuple[int, ...]) -> np.ndarray:
        """Boolean mask of the supported positions for a given block-vector shape."""
        out = np.zeros(shape, dtype=bool)
        if self.users is not None:
            if len(shape) != 3:
                raise ValueError(f"three-level support needs a (N, mu, n) shape, got {shape}")
            N = shape[0]
            for u, sub in self.users:
                if u >= N:
                    raise ValueError(f"user index {u} out of range for N={N}")
                out[u] = sub.mask(shape[1:])
            return out
        if len(shape) != 2:
            raise ValueError(f"two-level support needs a (mu, n) shape, got {shape}")
        mu, n = shape
        for k, entries in self.blocks:
            if k >= mu:
                raise ValueError(f"block index {k} out of range for mu={mu}")
            for i in entries:
                if i >= n:
                    raise ValueError(f"entry index {i} out of range for n={n}")
                out[k, i] = True
        return out

    @staticmethod
    def from_nonzeros(w: np.ndarray) -> "HiSupport":
        """Support of the nonzero pattern of a dense block vector."""
        w = np.asarray(w)
        if w.ndim == 2:
            blocks = []
            for k in np.flatnonzero(np.any(w != 0, axis=1)):
                blocks.append((int(k), tuple(int(i) for i in np.flatnonzero(w[k]))))
            return HiSupport(blocks=tuple(blocks))
        if w.ndim == 3:
            users = []
            for u in np.flatnonzero(np.any(w != 0, axis=(1, 2))):
                users.append((int(u), HiSupport.from_nonzeros(w[u])))
            return HiSupport(users=tuple(users))
        raise ValueError(f"expected a 2-d or 3-d block vector, got ndim={w.ndim}")


@dataclass(frozen=True)
class HiSparseVector:
    """Dense block vector of shape (mu, n) or (N, mu, n) with optional
    support metadata; entries outside a declared support are exactly zero."""

    data: np.ndarray
    support: HiSupport | None = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim not in (2, 3):
            raise ValueError(f"expected a 2-d or 3-d block vector, got ndim={data.ndim}")
        if not np.all(np.isfinite(data)):
            raise ValueError("block vector entries must be finite")
        object.__setattr__(self, "data", data)
        if self.support is not None:
            if self.support.levels != data.ndim:
                raise ValueError(
                    f"support has {self.support.levels} levels but data is {data.ndim}-d"
                )
            mask = self.support.mask(data.shape)
            if np.any(data[~mask] != 0):
                raise ValueError("entries outside the declared support must be exactly zero")

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.data.astype(dtype)
        return self.data

    def __eq__(self, other):
        if not isinstance(other, HiSparseVector):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.all(self.data == other.data))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def levels(self) -> int:
        return self.data.ndim

    @property
    def n_users(self) -> int | None:
        return self.data.shape[0] if self.data.ndim == 3 else None

    @property
    def mu(self) -> int:
        return self.data.shape[-2]

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def _top_k_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken toward the lower index.

    Linear-time selection via np.partition; returned indices are sorted.
    """
    m = scores.shape[0]
    if k >= m:
        return np.arange(m)
    thresh = np.partition(scores, m - k)[m - k]
    above = np.flatnonzero(scores > thresh)
    at = np.flatnonzero(scores == thresh)[: k - above.size]
    return np.sort(np.concatenate([above, at]))


def _keep_top_entries(w: np.ndarray, sigma: int) -> np.ndarray:
    """Per-block mask keeping the sigma largest-magnitude entries of each row.

    Ties keep the lower entry index.  Linear in the size of ``w``.
    """
    mu, n = w.shape
    if sigma >= n:
        return np.ones((mu, n), dtype=bool)
    mag = np.abs(w)
    kth = np.partition(mag, n - sigma, axis=1)[:, n - sigma]
    above = mag > kth[:, None]
    eq = mag == kth[:, None]
    need = sigma - above.sum(axis=1)
    keep_eq = eq & (np.cumsum(eq, axis=1) <= need[:, None])
    return above | keep_eq


def _blocks_from_mask(keep: np.ndarray, kept_blocks: np.ndarray):
    return tuple(
        (int(k), tuple(int(i) for i in np.flatnonzero(keep[k]))) for k in kept_blocks
    )


def project_hisparse(w: np.ndarray, levels: SparsityLevels):
    """Exact Euclidean projection onto the two-level sparse set.

    Within each block the ``sigma`` largest-magnitude entries are kept;
    blocks are then scored by the squared norm of their kept entries and all
    but the ``s`` best-scoring blocks are zeroed.  Ties (entry magnitudes or
    block scores) keep the lower index.  A kept block may be all-zero; it
    still occupies one of the ``s`` slots, which is what the exact projection
    does.

    Parameters
    ----------
    w : ndarray, shape (mu, n)
        Dense block vector.
    levels : SparsityLevels
        Budget with ``S`` unset.

    Returns
    -------
    (HiSparseVector, HiSupport)
        The projected vector and the support of the kept positions.
    """
    w = np.asarray(w, dtype=np.float64)
    if levels.S is not None:
        raise ValueError("project_hisparse handles two-level budgets; use project_three_level")
    levels.check_shape(w.shape)

    keep = _keep_top_entries(w, levels.sigma)
    kept_vals = np.where(keep, w, 0.0)
    scores = np.einsum("ij,ij->i", kept_vals, kept_vals)
    kept_blocks = _top_k_rows(scores, levels.s)

    out = np.zeros_like(w)
    out[kept_blocks] = kept_vals[kept_blocks]
    support = HiSupport(blocks=_blocks_from_mask(keep, kept_blocks))
    return HiSparseVector(out, support), support


def project_three_level(w: np.ndarray, levels: SparsityLevels):
    """Exact Euclidean projection onto the three-level sparse set.

    Projects each user block onto the two-level set, scores users by the
    squared norm of their projection and keeps the ``S`` best (lower index on
    ties).

    Parameters
    ----------
    w : ndarray, shape (N, mu, n)
    levels : SparsityLevels
        Budget with ``S`` set.

    Returns
    -------
    (HiSparseVector, HiSupport)
    """
    w = np.asarray(w, dtype=np.float64)
    if levels.S is None:
        raise ValueError("project_three_level needs a budget with S set")
    levels.check_shape(w.shape)
    inner = SparsityLevels(levels.s, levels.sigma)

    projected = [project_hisparse(w[u], inner) for u in range(w.shape[0])]
    scores = np.array([vec.data.ravel() @ vec.data.ravel() for vec, _ in projected])
    kept_users = _top_k_rows(scores, levels.S)

    out = np.zeros_like(w)
    users = []
    for u in kept_users:
        vec, sub = projected[u]
        out[u] = vec.data
        users.append((int(u), sub))
    support = HiSupport(users=tuple(users))
    return HiSparseVector(out, support), support


@lru_cache(maxsize=1024)
def cached_mask(support: HiSupport, shape: tuple[int, ...]) -> np.ndarray:
    """Memoized boolean mask of a support; the array is marked read-only."""
    mask = support.mask(shape)
    mask.setflags(write=False)
    return mask


def restrict_array(w: np.ndarray, support: HiSupport) -> np.ndarray:
    """Dense array with every entry outside ``support`` zeroed."""
    w = np.asarray(w, dtype=np.float64)
    return np.where(support.mask(w.shape), w, 0.0)


def restrict(w: np.ndarray, support: HiSupport) -> HiSparseVector:
    """Zero all entries of ``w`` outside ``support``."""
    return HiSparseVector(restrict_array(w, support), support)
