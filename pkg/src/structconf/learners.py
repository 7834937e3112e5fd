"""Online learners for linear structured predictors.

Each update decodes with the current mean weights, forms the feature
difference g = Φ(x, y) − Φ(x, ŷ) and takes one step. A correct
prediction leaves the weights alone (the closed forms divide by ‖g‖²).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decoding import decode, kbest
from .model import LinearModel, SparseVector, feature_difference, hamming_loss

ALGORITHMS = ("perceptron", "pa", "cw", "nbest_pa")
# variances shrink quadratically fast on inseparable data; keep them representable
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "cw"
    C: float = 1.0
    phi: float = 1.0
    a: float = 1.0
    nbest_k: int = 5
    epochs: int = 10
    seed: int = 0
    averaging: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.C <= 0 or self.phi <= 0 or self.a <= 0:
            raise ValueError("C, phi and a must be positive")
        if self.nbest_k < 1 or self.epochs < 1:
            raise ValueError("nbest_k and epochs must be positive")


@dataclass(frozen=True)
class UpdateRecord:
    alpha: float = 0.0
    beta: float = 0.0
    loss: int = 0
    margin: float = 0.0
    variance: float = 0.0
    # margin variance of the rank-one posterior, before dropping off-diagonals
    post_variance: float = 0.0


def _gold(x, gold):
    g = x.gold if gold is None else np.asarray(gold, dtype=np.int64)
    if g is None:
        raise ValueError("instance has no gold labeling")
    return g


def perceptron_update(model: LinearModel, x, gold=None) -> UpdateRecord:
    gold = _gold(x, gold)
    model.begin_step()
    y_hat, _ = decode(x, model.mu)
    loss = hamming_loss(gold, y_hat)
    if loss == 0:
        return UpdateRecord()
    g = feature_difference(x, gold, y_hat)
    margin = float(np.dot(g.values, model.mu[g.indices]))
    model.add(g, 1.0)
    return UpdateRecord(alpha=1.0, loss=loss, margin=margin)


def _pa_step(model: LinearModel, g, loss: int, C: float) -> UpdateRecord:
    norm_sq = g.norm_sq()
    if norm_sq == 0.0:
        return UpdateRecord(loss=loss)
    margin = float(np.dot(g.values, model.mu[g.indices]))
    alpha = min(C, max(0.0, loss - margin) / norm_sq)
    model.add(g, alpha)
    return UpdateRecord(alpha=alpha, loss=loss, margin=margin)


def pa_update(model: LinearModel, x, gold=None, C: float = 1.0) -> UpdateRecord:
    """Structured PA-I: α = min{C, max{0, ℓ − μ·g} / ‖g‖²}."""
    if C <= 0:
        raise ValueError("C must be positive")
    gold = _gold(x, gold)
    model.begin_step()
    y_hat, _ = decode(x, model.mu)
    loss = hamming_loss(gold, y_hat)
    if loss == 0:
        return UpdateRecord()
    return _pa_step(model, feature_difference(x, gold, y_hat), loss, C)


def cw_coefficients(margin: float, variance: float, phi_l: float) -> tuple[float, float, float]:
    """(α, β, u) of the structured CW step; u is the post-update margin variance."""
    p1 = 1.0 + phi_l**2 / 2.0
    p2 = 1.0 + phi_l**2
    root = math.sqrt(margin**2 * phi_l**4 / 4.0 + variance * phi_l**2 * p2)
    alpha = max(0.0, (-margin * p1 + root) / (variance * p2))
    # sqrt(u) = (−αvφ + sqrt(α²v²φ² + 4v)) / 2, rearranged to avoid cancellation
    avp = alpha * variance * phi_l
    sqrt_u = 2.0 * variance / (avp + math.sqrt(avp**2 + 4.0 * variance))
    beta = alpha * phi_l / sqrt_u
    return alpha, beta, sqrt_u**2


def cw_update(model: LinearModel, x, gold=None, phi: float = 1.0) -> UpdateRecord:
    """Diagonal confidence-weighted step.

    μ ← μ + αΣg and Σ⁻¹ ← Σ⁻¹ + β·diag(g gᵀ), with α, β solving the
    probabilistic margin constraint at equality for the rank-one posterior.
    """
    if model.sigma_diag is None:
        raise ValueError("CW needs a model with sigma_diag")
    if phi <= 0:
        raise ValueError("phi must be positive")
    gold = _gold(x, gold)
    model.begin_step()
    y_hat, _ = decode(x, model.mu)
    loss = hamming_loss(gold, y_hat)
    if loss == 0:
        return UpdateRecord()
    g = feature_difference(x, gold, y_hat)
    if not g:
        return UpdateRecord(loss=loss)
    sig = model.sigma_diag[g.indices]
    variance = float(np.dot(g.values**2, sig))
    if variance <= 0.0:
        raise ArithmeticError("non-positive margin variance for a non-empty update")
    margin = float(np.dot(g.values, model.mu[g.indices]))
    phi_l = phi * loss
    alpha, beta, u = cw_coefficients(margin, variance, phi_l)
    if alpha > 0.0:
        step = SparseVector(g.indices, sig * g.values)
        model.add(step, alpha)
        model.sigma_diag[g.indices] = np.maximum(1.0 / (1.0 / sig + beta * g.values**2), SIGMA_FLOOR)
    return UpdateRecord(alpha, beta, loss, margin, variance, u)


def nbest_pa_update(model: LinearModel, x, gold=None, C: float = 1.0, K: int = 5) -> list[UpdateRecord]:
    """PA steps against each of the K best predictions of the pre-update model."""
    if K < 1:
        raise ValueError("K must be positive")
    gold = _gold(x, gold)
    model.begin_step()
    records = []
    for y_hat, _ in kbest(x, model.mu, K):
        loss = hamming_loss(gold, y_hat)
        if loss == 0:
            records.append(UpdateRecord())
            continue
        records.append(_pa_step(model, feature_difference(x, gold, y_hat), loss, C))
    return records


def new_model(dimension: int, config: TrainConfig) -> LinearModel:
    variance = config.a if config.algorithm == "cw" else None
    return LinearModel.zeros(dimension, variance, averaging=config.averaging)


def dataset_dimension(dataset) -> int:
    return max(x.max_index() for x in dataset) + 1


def train_step(model: LinearModel, x, config: TrainConfig):
    algo = config.algorithm
    if algo == "perceptron":
        return perceptron_update(model, x)
    if algo == "pa":
        return pa_update(model, x, C=config.C)
    if algo == "cw":
        return cw_update(model, x, phi=config.phi)
    return nbest_pa_update(model, x, C=config.C, K=config.nbest_k)


def train(dataset: Sequence, config: TrainConfig, dimension: int | None = None, model=None) -> LinearModel:
    """Run ``config.epochs`` passes over ``dataset`` in its given order."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if model is None:
        if dimension is None:
            dimension = dataset_dimension(dataset)
        model = new_model(dimension, config)
    for _ in range(config.epochs):
        for x in dataset:
            train_step(model, x, config)
    return model
