"""Dynamic programming over first-order label chains.

All decoders share one tie rule: among equal scores the lowest label index
wins, and k-best lists order equal scores lexicographically by labeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import ChainInstance


class InfeasibleConstraint(ValueError):
    pass


@dataclass(frozen=True)
class PotentialTable:
    """Node scores ``node[p, y]`` and pair scores ``trans[q, y, y2]``."""

    node: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        node = np.asarray(self.node, dtype=np.float64)
        if node.ndim != 2 or node.shape[0] < 1 or node.shape[1] < 1:
            raise ValueError("node potentials must be a non-empty n x L matrix")
        n, L = node.shape
        trans = np.asarray(self.trans, dtype=np.float64).reshape(max(n - 1, 0), L, L)
        if not (np.all(np.isfinite(node)) and np.all(np.isfinite(trans))):
            raise ValueError("potentials must be finite")
        object.__setattr__(self, "node", node)
        object.__setattr__(self, "trans", trans)

    @property
    def n(self) -> int:
        return self.node.shape[0]

    @property
    def L(self) -> int:
        return self.node.shape[1]

    def score(self, labels) -> float:
        labels = np.asarray(labels, dtype=np.int64)
        total = self.node[np.arange(self.n), labels].sum()
        if self.n > 1:
            total += self.trans[np.arange(self.n - 1), labels[:-1], labels[1:]].sum()
        return float(total)


def build_potentials(x: ChainInstance, weights: np.ndarray) -> PotentialTable:
    node = x.node.scores(weights).reshape(x.n, x.L)
    trans = x.trans.scores(weights).reshape(max(x.n - 1, 0), x.L, x.L)
    return PotentialTable(node, trans)


def viterbi(t: PotentialTable) -> tuple[np.ndarray, float]:
    node, trans = t.node, t.trans
    n, L = node.shape
    cols = np.arange(L)
    back = np.zeros((n, L), dtype=np.int64)
    delta = node[0]
    for p in range(1, n):
        cand = trans[p - 1] + delta[:, None]
        arg = cand.argmax(axis=0)
        back[p] = arg
        delta = cand[arg, cols] + node[p]
    labels = np.empty(n, dtype=np.int64)
    y = int(delta.argmax())
    best = float(delta[y])
    labels[-1] = y
    # python ints are cheaper than array indexing for the short backtrace
    rows = back.tolist()
    for p in range(n - 1, 0, -1):
        y = rows[p][y]
        labels[p - 1] = y
    return labels, best


def viterbi_batch(node: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Viterbi for a stack of tables: node (B, n, L), trans (B, n-1, L, L)."""
    B, n, L = node.shape
    delta = node[:, 0]
    back = np.zeros((B, n, L), dtype=np.int64)
    batch = np.arange(B)
    rows = batch[:, None]
    cols = np.arange(L)[None, :]
    for p in range(1, n):
        cand = trans[:, p - 1] + delta[:, :, None]
        arg = np.argmax(cand, axis=1)
        back[:, p] = arg
        delta = cand[rows, arg, cols] + node[:, p]
    labels = np.empty((B, n), dtype=np.int64)
    labels[:, -1] = np.argmax(delta, axis=1)
    for p in range(n - 1, 0, -1):
        labels[:, p - 1] = back[batch, p, labels[:, p]]
    return labels


def kbest_viterbi(t: PotentialTable, K: int) -> list[tuple[np.ndarray, float]]:
    """The ``K`` highest-scoring distinct labelings, best first.

    Each state keeps its own k-list of partial paths. Partial paths also
    carry a global lexicographic rank so score ties resolve exactly as a
    sort of complete labelings by (−score, labeling) would.
    """
    if K < 1:
        raise ValueError("K must be positive")
    n, L = t.node.shape
    # scores[y, k]; invalid slots are -inf and never outrank valid ones
    scores = np.full((L, K), -np.inf)
    scores[:, 0] = t.node[0]
    valid = np.zeros((L, K), dtype=bool)
    valid[:, 0] = True
    lex = np.full((L, K), np.iinfo(np.int64).max, dtype=np.int64)
    lex[:, 0] = np.arange(L)
    backs = []
    for p in range(1, n):
        # candidates for state y: all (prev y', k) slots
        cand = scores[:, :, None] + t.trans[p - 1][:, None, :] + t.node[p][None, None, :]
        cand_valid = np.broadcast_to(valid[:, :, None], cand.shape)
        flat_scores = cand.reshape(L * K, L)
        flat_valid = cand_valid.reshape(L * K, L)
        flat_lex = lex.reshape(L * K)
        new_scores = np.full((L, K), -np.inf)
        new_valid = np.zeros((L, K), dtype=bool)
        new_back = np.zeros((L, K), dtype=np.int64)
        for y in range(L):
            s = flat_scores[:, y]
            v = flat_valid[:, y]
            order = np.lexsort((flat_lex, -s, ~v))
            take = order[:K]
            take = take[v[take]]
            m = len(take)
            new_scores[y, :m] = s[take]
            new_valid[y, :m] = True
            new_back[y, :m] = take
        # global lexicographic rank of the new partial paths: (prefix rank, y)
        prefix_rank = np.where(new_valid, flat_lex[new_back], np.iinfo(np.int64).max)
        ys = np.broadcast_to(np.arange(L)[:, None], (L, K))
        order = np.lexsort((ys.ravel(), prefix_rank.ravel()))
        rank = np.empty(L * K, dtype=np.int64)
        rank[order] = np.arange(L * K)
        lex = np.where(new_valid, rank.reshape(L, K), np.iinfo(np.int64).max)
        scores, valid = new_scores, new_valid
        backs.append(new_back)
    flat_s = scores.ravel()
    flat_v = valid.ravel()
    order = np.lexsort((lex.ravel(), -flat_s, ~flat_v))
    out = []
    for slot in order[:K]:
        if not flat_v[slot]:
            break
        labels = np.empty(n, dtype=np.int64)
        y, k = divmod(int(slot), K)
        labels[-1] = y
        for p in range(n - 1, 0, -1):
            prev = int(backs[p - 1][y, k])
            y, k = divmod(prev, K)
            labels[p - 1] = y
        out.append((labels, float(flat_s[slot])))
    return out


def forward_backward_marginals(t: PotentialTable, c: float = 1.0) -> np.ndarray:
    """Per-position label marginals of P(z|x) ∝ exp(c·score(z)), in log space."""
    if c <= 0:
        raise ValueError("c must be positive")
    node = c * t.node
    trans = c * t.trans
    n, L = node.shape
    alpha = np.empty((n, L))
    beta = np.zeros((n, L))
    alpha[0] = node[0]
    for p in range(1, n):
        alpha[p] = logsumexp(alpha[p - 1][:, None] + trans[p - 1], axis=0) + node[p]
    for p in range(n - 2, -1, -1):
        beta[p] = logsumexp(trans[p] + (node[p + 1] + beta[p + 1])[None, :], axis=1)
    log_z = logsumexp(alpha[-1])
    return np.exp(alpha + beta - log_z)


def max_marginals(t: PotentialTable) -> np.ndarray:
    """``out[p, y]`` = best total score among labelings with label ``y`` at ``p``.

    Max-product forward and backward passes, so every position and label
    costs one O(n·L²) sweep together.
    """
    n, L = t.node.shape
    fwd = np.empty((n, L))
    bwd = np.zeros((n, L))
    fwd[0] = t.node[0]
    for p in range(1, n):
        fwd[p] = np.max(fwd[p - 1][:, None] + t.trans[p - 1], axis=0) + t.node[p]
    for p in range(n - 2, -1, -1):
        bwd[p] = np.max(t.trans[p] + (t.node[p + 1] + bwd[p + 1])[None, :], axis=1)
    return fwd + bwd


def constrained_best_score(t: PotentialTable, p: int, mode: str, label: int) -> float:
    """Best score with position ``p`` forced to, or forbidden from, ``label``."""
    if not 0 <= p < t.n:
        raise IndexError(f"position {p} outside chain of length {t.n}")
    if not 0 <= label < t.L:
        raise IndexError(f"label {label} outside [0, {t.L})")
    mm = max_marginals(t)[p]
    if mode == "force":
        return float(mm[label])
    if mode == "forbid":
        if t.L < 2:
            raise InfeasibleConstraint("cannot forbid the only label")
        return float(np.max(np.delete(mm, label)))
    raise ValueError(f"unknown constraint mode {mode!r}")
