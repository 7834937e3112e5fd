"""Maximum spanning arborescences for non-projective dependency parsing.

Edge weights live in a square ``(n + 1) x (n + 1)`` matrix ``w[h, d]``
with node 0 the artificial root. Column 0 and the diagonal are forbidden
(``-inf``). Every returned tree has exactly one dependent of the root.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .model import TreeInstance

NEG_INF = -np.inf


class NoTreeError(ValueError):
    """No arborescence satisfies the constraints."""


@dataclass(frozen=True)
class Arborescence:
    heads: np.ndarray  # heads[d - 1] is the head of word d
    score: float

    @property
    def n(self) -> int:
        return len(self.heads)


def edge_weights(x: TreeInstance, weights: np.ndarray) -> np.ndarray:
    w = x.edges.scores(weights).reshape(x.n + 1, x.n + 1)
    return mask_invalid(w)


def mask_invalid(w: np.ndarray) -> np.ndarray:
    w = np.array(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 2:
        raise ValueError("edge weights must be a square (n + 1) x (n + 1) matrix")
    w[:, 0] = NEG_INF
    np.fill_diagonal(w, NEG_INF)
    return w


def tree_score(w: np.ndarray, heads) -> float:
    heads = np.asarray(heads, dtype=np.int64)
    vals = w[heads, np.arange(1, len(heads) + 1)]
    if not np.all(np.isfinite(vals)):
        return NEG_INF
    return float(vals.sum())


def _find_cycle(heads: np.ndarray) -> list[int] | None:
    # heads over nodes 0..m-1, heads[0] unused
    m = len(heads)
    color = np.zeros(m, dtype=np.int8)
    color[0] = 2
    for start in range(1, m):
        if color[start]:
            continue
        path = []
        node = start
        while color[node] == 0:
            color[node] = 1
            path.append(node)
            node = heads[node]
        if color[node] == 1:
            cycle = path[path.index(node):]
            for v in path:
                color[v] = 2
            return cycle
        for v in path:
            color[v] = 2
    return None


def _cle(w: np.ndarray) -> np.ndarray:
    """Unconstrained Chu-Liu-Edmonds; returns heads over all nodes (index 0 unused)."""
    m = w.shape[0]
    heads = np.zeros(m, dtype=np.int64)
    for d in range(1, m):
        col = w[:, d]
        h = int(np.argmax(col))
        if not np.isfinite(col[h]):
            raise NoTreeError(f"node {d} has no admissible head")
        heads[d] = h
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(m, dtype=bool)
    in_cycle[cycle] = True
    rest = [v for v in range(m) if not in_cycle[v]]
    c = len(rest)  # index of the contracted node in the new graph
    new_w = np.full((c + 1, c + 1), NEG_INF)
    # where contracted edges came from
    enter_at = {}
    leave_from = {}
    cyc = np.array(cycle)
    cyc_in = w[heads[cyc], cyc]
    for i, u in enumerate(rest):
        for j, v in enumerate(rest):
            if i != j:
                new_w[i, j] = w[u, v]
        # u -> cycle: best gain of breaking the cycle at one of its nodes
        gains = w[u, cyc] - cyc_in
        k = int(np.argmax(gains))
        if np.isfinite(gains[k]):
            new_w[i, c] = gains[k]
            enter_at[i] = int(cyc[k])
        # cycle -> u
        outs = w[cyc, u]
        k = int(np.argmax(outs))
        if np.isfinite(outs[k]):
            new_w[c, i] = outs[k]
            leave_from[i] = int(cyc[k])
    new_w[:, 0] = NEG_INF
    np.fill_diagonal(new_w, NEG_INF)

    sub = _cle(new_w)
    out = heads.copy()
    for j in range(1, c + 1):
        h = int(sub[j])
        if j == c:
            broken = enter_at[h]
            out[broken] = rest[h]
        else:
            v = rest[j]
            out[v] = leave_from[j] if h == c else rest[h]
    return out


def _decode_unconstrained(w: np.ndarray) -> np.ndarray:
    return _cle(w)[1:]


def cle_decode(w: np.ndarray) -> Arborescence:
    """Best arborescence with exactly one root dependent.

    Runs plain Chu-Liu-Edmonds first; when that attaches several words to
    the root, every admissible root child is tried in turn (lowest index
    wins ties).
    """
    w = mask_invalid(w)
    try:
        heads = _decode_unconstrained(w)
    except NoTreeError:
        heads = None
    if heads is not None and int(np.sum(heads == 0)) == 1:
        return Arborescence(heads, tree_score(w, heads))

    best = None
    n = w.shape[0] - 1
    for r in range(1, n + 1):
        if not np.isfinite(w[0, r]):
            continue
        masked = w.copy()
        masked[0, :] = NEG_INF
        masked[0, r] = w[0, r]
        try:
            cand = _decode_unconstrained(masked)
        except NoTreeError:
            continue
        score = tree_score(w, cand)
        if not np.isfinite(score):
            continue
        if best is None or score > best.score:
            best = Arborescence(cand, score)
    if best is None:
        raise NoTreeError("no single-root arborescence exists")
    return best


def constrain(w: np.ndarray, d: int, mode: str, head: int) -> np.ndarray:
    w = mask_invalid(w)
    n = w.shape[0] - 1
    if not 1 <= d <= n or not 0 <= head <= n:
        raise IndexError("dependent or head outside the sentence")
    if mode == "forbid":
        w[head, d] = NEG_INF
    elif mode == "force":
        keep = w[head, d]
        w[:, d] = NEG_INF
        w[head, d] = keep
    else:
        raise ValueError(f"unknown constraint mode {mode!r}")
    return w


def constrained_cle(w: np.ndarray, d: int, mode: str, head: int) -> Arborescence:
    """Best tree with word ``d``'s head forced to, or forbidden from, ``head``."""
    return cle_decode(constrain(w, d, mode, head))


def kbest_arborescences(w: np.ndarray, K: int) -> list[Arborescence]:
    """The ``K`` best distinct arborescences by branch-and-exclude partitioning.

    Each subproblem is a (required edges, banned edges) pair solved by
    masking. After popping the best subproblem its solution's free edges
    e_1..e_m split the rest of the space: branch i requires e_1..e_{i-1}
    and bans e_i.
    """
    if K < 1:
        raise ValueError("K must be positive")
    base = mask_invalid(w)
    n = base.shape[0] - 1
    counter = itertools.count()

    def solve(required, banned):
        masked = base.copy()
        for h, d in banned:
            masked[h, d] = NEG_INF
        for h, d in required:
            keep = base[h, d]
            masked[:, d] = NEG_INF
            masked[h, d] = keep
        try:
            return cle_decode(masked)
        except NoTreeError:
            return None

    heap = []
    first = solve((), ())
    if first is None:
        return []
    heapq.heappush(heap, (-first.score, next(counter), first, (), ()))
    out = []
    while heap and len(out) < K:
        _, _, tree, required, banned = heapq.heappop(heap)
        out.append(tree)
        fixed = {d for _, d in required}
        free = [(int(tree.heads[d - 1]), d) for d in range(1, n + 1) if d not in fixed]
        prefix = list(required)
        for edge in free:
            cand = solve(tuple(prefix), banned + (edge,))
            if cand is not None:
                heapq.heappush(
                    heap, (-cand.score, next(counter), cand, tuple(prefix), banned + (edge,))
                )
            prefix.append(edge)
    return out
