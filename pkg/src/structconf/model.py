"""Sparse feature vectors, factored instances and the linear model container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class DimensionError(ValueError):
    """A feature id falls outside the model dimension."""


class ShapeError(ValueError):
    """Two labelings that should align do not."""


def _canonical(indices: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # sum duplicate ids, sort, drop exact zeros
    if indices.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
    uniq, inverse = np.unique(indices, return_inverse=True)
    summed = np.bincount(inverse, weights=values, minlength=uniq.size)
    keep = summed != 0.0
    return uniq[keep].astype(np.int64), summed[keep]


class SparseVector:
    """Immutable map from non-negative feature id to a non-zero weight.

    Stored as two parallel sorted arrays. Arithmetic always returns a
    canonical vector: ids are unique and no explicit zeros are kept.
    """

    __slots__ = ("indices", "values")

    def __init__(self, indices=(), values=(), *, _trusted: bool = False):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        val = np.asarray(values, dtype=np.float64).ravel()
        if not _trusted:
            if idx.shape != val.shape:
                raise ValueError("indices and values differ in length")
            if idx.size and idx.min() < 0:
                raise ValueError("feature ids must be non-negative")
            idx, val = _canonical(idx, val)
        idx.flags.writeable = False
        val.flags.writeable = False
        self.indices = idx
        self.values = val

    @classmethod
    def from_dict(cls, entries: Mapping[int, float]) -> "SparseVector":
        return cls(list(entries.keys()), list(entries.values()))

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls()

    def to_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def items(self) -> Iterable[tuple[int, float]]:
        return self.to_dict().items()

    def __len__(self) -> int:
        return int(self.indices.size)

    def __bool__(self) -> bool:
        return self.indices.size > 0

    def __getitem__(self, key: int) -> float:
        pos = np.searchsorted(self.indices, key)
        if pos < self.indices.size and self.indices[pos] == key:
            return float(self.values[pos])
        return 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __hash__(self):
        return hash((self.indices.tobytes(), self.values.tobytes()))

    def __add__(self, other: "SparseVector") -> "SparseVector":
        idx, val = _canonical(
            np.concatenate([self.indices, other.indices]),
            np.concatenate([self.values, other.values]),
        )
        return SparseVector(idx, val, _trusted=True)

    def __neg__(self) -> "SparseVector":
        return SparseVector(self.indices.copy(), -self.values, _trusted=True)

    def __sub__(self, other: "SparseVector") -> "SparseVector":
        return self + (-other)

    def __mul__(self, scalar: float) -> "SparseVector":
        if scalar == 0.0:
            return SparseVector()
        return SparseVector(self.indices.copy(), self.values * float(scalar), _trusted=True)

    __rmul__ = __mul__

    def dot(self, other: "SparseVector") -> float:
        common, ia, ib = np.intersect1d(self.indices, other.indices, return_indices=True)
        return float(np.dot(self.values[ia], other.values[ib]))

    def norm_sq(self) -> float:
        return float(np.dot(self.values, self.values))

    def max_index(self) -> int:
        return int(self.indices[-1]) if self.indices.size else -1

    def to_dense(self, dimension: int) -> np.ndarray:
        out = np.zeros(dimension)
        out[self.indices] = self.values
        return out

    def __repr__(self) -> str:
        return f"SparseVector({self.to_dict()!r})"


def dot(v: SparseVector, m: np.ndarray) -> float:
    """Inner product of a sparse vector with a dense weight vector."""
    if v.indices.size and v.indices[-1] >= len(m):
        raise DimensionError(
            f"feature id {int(v.indices[-1])} outside dimension {len(m)}"
        )
    return float(np.dot(v.values, m[v.indices]))


@dataclass(frozen=True)
class FeatureTable:
    """A stack of sparse rows in CSR layout; row ``r`` is one factor's Φ."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.asarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))
        # cached for repeated scoring
        object.__setattr__(self, "_row_ids", np.repeat(np.arange(self.n_rows), np.diff(self.indptr)))
        object.__setattr__(self, "_max_index", int(self.indices.max()) if self.indices.size else -1)

    @classmethod
    def from_rows(cls, rows: Iterable[SparseVector | Mapping[int, float]]) -> "FeatureTable":
        indptr = [0]
        idx_parts, val_parts = [], []
        for row in rows:
            if not isinstance(row, SparseVector):
                row = SparseVector.from_dict(row)
            idx_parts.append(row.indices)
            val_parts.append(row.values)
            indptr.append(indptr[-1] + len(row))
        if idx_parts:
            indices = np.concatenate(idx_parts)
            data = np.concatenate(val_parts)
        else:
            indices, data = np.zeros(0, np.int64), np.zeros(0)
        return cls(np.array(indptr), indices, data)

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    def row(self, r: int) -> SparseVector:
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return SparseVector(self.indices[lo:hi], self.data[lo:hi])

    def max_index(self) -> int:
        return self._max_index

    def row_ids(self) -> np.ndarray:
        return self._row_ids

    def scores(self, weights: np.ndarray) -> np.ndarray:
        """Dot product of every row with ``weights``."""
        if self._max_index >= len(weights):
            raise DimensionError(f"feature id {self._max_index} outside dimension {len(weights)}")
        contrib = weights[self.indices] * self.data
        return np.bincount(self._row_ids, weights=contrib, minlength=self.n_rows)

    def gather(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated (ids, values) of the given rows."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            return np.zeros(0, np.int64), np.zeros(0)
        starts = self.indptr[rows]
        lengths = self.indptr[rows + 1] - starts
        total = int(lengths.sum())
        if total == 0:
            return np.zeros(0, np.int64), np.zeros(0)
        offsets = np.repeat(starts - np.cumsum(lengths) + lengths, lengths)
        pos = offsets + np.arange(total)
        return self.indices[pos], self.data[pos]


@dataclass(frozen=True)
class ChainInstance:
    """A sentence for sequence labeling with factored feature tables.

    ``node`` has ``n * L`` rows, row ``p * L + y`` holding Φ(x, y at p).
    ``trans`` has ``(n - 1) * L * L`` rows, row ``q * L * L + y * L + y2``
    holding the pair feature for label ``y`` at ``q`` and ``y2`` at ``q + 1``.
    """

    n: int
    L: int
    node: FeatureTable
    trans: FeatureTable
    gold: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1 or self.L < 1:
            raise ValueError("chain instances need n >= 1 and L >= 1")
        if self.node.n_rows != self.n * self.L:
            raise ValueError("node table does not cover every (position, label)")
        if self.trans.n_rows != max(self.n - 1, 0) * self.L * self.L:
            raise ValueError("transition table does not cover every label pair")
        if self.gold is not None:
            gold = np.asarray(self.gold, dtype=np.int64)
            if gold.shape != (self.n,) or gold.min() < 0 or gold.max() >= self.L:
                raise ValueError("gold labels must be a length-n sequence in [0, L)")
            object.__setattr__(self, "gold", gold)

    @property
    def units(self) -> int:
        return self.n

    def max_index(self) -> int:
        return max(self.node.max_index(), self.trans.max_index())

    def with_gold(self, gold) -> "ChainInstance":
        return ChainInstance(self.n, self.L, self.node, self.trans, gold)

    def phi(self, labels) -> SparseVector:
        labels = np.asarray(labels, dtype=np.int64)
        idx, val = self._rows_for(labels, np.arange(self.n), np.arange(self.n - 1))
        return SparseVector(idx, val)

    def _rows_for(self, labels, positions, pairs):
        node_rows = positions * self.L + labels[positions]
        ni, nv = self.node.gather(node_rows)
        if len(pairs):
            trans_rows = pairs * self.L * self.L + labels[pairs] * self.L + labels[pairs + 1]
            ti, tv = self.trans.gather(trans_rows)
            return np.concatenate([ni, ti]), np.concatenate([nv, tv])
        return ni, nv


@dataclass(frozen=True)
class TreeInstance:
    """A sentence for dependency parsing with one feature row per edge.

    ``edges`` has ``(n + 1) ** 2`` rows; row ``h * (n + 1) + d`` holds
    Φ(x, h -> d). Rows with ``d == 0`` or ``h == d`` are unused (empty).
    ``gold`` has length ``n``: ``gold[d - 1]`` is the head of word ``d``.
    """

    n: int
    edges: FeatureTable
    gold: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("tree instances need n >= 1")
        if self.edges.n_rows != (self.n + 1) ** 2:
            raise ValueError("edge table must have (n + 1)^2 rows")
        if self.gold is not None:
            gold = np.asarray(self.gold, dtype=np.int64)
            if not is_arborescence(gold):
                raise ValueError("gold heads do not form a single-root arborescence")
            object.__setattr__(self, "gold", gold)

    @property
    def units(self) -> int:
        return self.n

    def max_index(self) -> int:
        return self.edges.max_index()

    def with_gold(self, gold) -> "TreeInstance":
        return TreeInstance(self.n, self.edges, gold)

    def phi(self, heads) -> SparseVector:
        heads = np.asarray(heads, dtype=np.int64)
        rows = heads * (self.n + 1) + np.arange(1, self.n + 1)
        return SparseVector(*self.edges.gather(rows))


def is_arborescence(heads) -> bool:
    """True when ``heads`` (head of word d at index d-1) is a tree with one root child."""
    heads = np.asarray(heads, dtype=np.int64)
    n = len(heads)
    if n == 0 or heads.min() < 0 or heads.max() > n:
        return False
    if np.any(heads == np.arange(1, n + 1)):
        return False
    if int(np.sum(heads == 0)) != 1:
        return False
    for d in range(1, n + 1):
        seen = 0
        node = d
        while node != 0:
            node = heads[node - 1]
            seen += 1
            if seen > n:
                return False
    return True


def hamming_loss(y, y_hat) -> int:
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"labelings differ in shape: {y.shape} vs {y_hat.shape}")
    return int(np.count_nonzero(y != y_hat))


def feature_difference(x: ChainInstance | TreeInstance, y, y_hat) -> SparseVector:
    """Φ(x, y) − Φ(x, ŷ), built only from the factors where the two differ."""
    y = np.asarray(y, dtype=np.int64)
    y_hat = np.asarray(y_hat, dtype=np.int64)
    if y.shape != y_hat.shape or len(y) != x.n:
        raise ShapeError("labelings must both match the instance length")
    if isinstance(x, ChainInstance):
        diff = np.flatnonzero(y != y_hat)
        if diff.size == 0:
            return SparseVector()
        pairs = np.flatnonzero((y[:-1] != y_hat[:-1]) | (y[1:] != y_hat[1:]))
        gi, gv = x._rows_for(y, diff, pairs)
        pi, pv = x._rows_for(y_hat, diff, pairs)
    else:
        diff = np.flatnonzero(y != y_hat)
        if diff.size == 0:
            return SparseVector()
        deps = diff + 1
        gi, gv = x.edges.gather(y[diff] * (x.n + 1) + deps)
        pi, pv = x.edges.gather(y_hat[diff] * (x.n + 1) + deps)
    return SparseVector(np.concatenate([gi, pi]), np.concatenate([gv, -pv]))


@dataclass
class LinearModel:
    """Dense mean weights, optional diagonal covariance and a running average.

    The average of post-update snapshots is kept lazily: ``_wsum`` holds
    Σ_t (t − 1)·Δ_t, so after T steps the mean of μ_1..μ_T equals
    μ_T − _wsum / T. Every call to :meth:`begin_step` is one snapshot.
    """

    dimension: int
    mu: np.ndarray = None
    sigma_diag: np.ndarray | None = None
    update_count: int = 0
    averaging: bool = True
    _wsum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mu is None:
            self.mu = np.zeros(self.dimension)
        if self._wsum is None:
            self._wsum = np.zeros(self.dimension)
        if len(self.mu) != self.dimension:
            raise DimensionError("mu length differs from dimension")
        if self.sigma_diag is not None and np.any(self.sigma_diag <= 0):
            raise ValueError("sigma_diag must be strictly positive")

    @classmethod
    def zeros(cls, dimension: int, initial_variance: float | None = None, averaging=True):
        sigma = None if initial_variance is None else np.full(dimension, float(initial_variance))
        return cls(dimension, sigma_diag=sigma, averaging=averaging)

    @property
    def avg_mu(self) -> np.ndarray:
        if self.update_count == 0:
            return self.mu.copy()
        return self.mu - self._wsum / self.update_count

    def weights(self) -> np.ndarray:
        """The vector used for prediction."""
        return self.avg_mu if self.averaging else self.mu

    def begin_step(self) -> None:
        self.update_count += 1

    def add(self, v: SparseVector, scale: float = 1.0) -> None:
        """μ += scale·v, recorded against the current step for averaging."""
        if not v:
            return
        if v.indices[-1] >= self.dimension:
            raise DimensionError(f"feature id {v.max_index()} outside dimension {self.dimension}")
        delta = scale * v.values
        self.mu[v.indices] += delta
        if self.update_count > 1:
            self._wsum[v.indices] += (self.update_count - 1) * delta

    def copy(self) -> "LinearModel":
        return LinearModel(
            self.dimension,
            self.mu.copy(),
            None if self.sigma_diag is None else self.sigma_diag.copy(),
            self.update_count,
            self.averaging,
            self._wsum.copy(),
        )
