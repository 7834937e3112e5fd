"""Task-generic decoding on top of the chain and tree inference modules."""

from __future__ import annotations

import numpy as np

from . import chain, tree
from .model import ChainInstance, TreeInstance


def decode(x: ChainInstance | TreeInstance, weights: np.ndarray) -> tuple[np.ndarray, float]:
    if isinstance(x, ChainInstance):
        return chain.viterbi(chain.build_potentials(x, weights))
    best = tree.cle_decode(tree.edge_weights(x, weights))
    return best.heads, best.score


def kbest(x: ChainInstance | TreeInstance, weights: np.ndarray, K: int):
    """List of (labeling, score), best first."""
    if isinstance(x, ChainInstance):
        return chain.kbest_viterbi(chain.build_potentials(x, weights), K)
    return [(t.heads, t.score) for t in tree.kbest_arborescences(tree.edge_weights(x, weights), K)]


def decode_all(instances, weights: np.ndarray) -> list[np.ndarray]:
    return [decode(x, weights)[0] for x in instances]


def unit_accuracy(instances, predictions) -> float:
    total = sum(x.n for x in instances)
    right = sum(int(np.sum(x.gold == y)) for x, y in zip(instances, predictions))
    return right / total if total else 0.0
