"""Per-unit confidence estimators for chains (per word) and trees (per head edge)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.stats import rankdata

from . import chain, tree
from .decoding import decode, kbest
from .model import ChainInstance, LinearModel, TreeInstance

METHODS = ("delta", "gamma", "kb", "wkb", "kd_fix", "kd_pc", "kd_fix_plus_delta", "random")
ABSOLUTE_METHODS = ("gamma", "kb", "wkb", "kd_fix", "kd_pc", "random")


class UnsupportedMethod(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DegenerateWeights(ValueError):
    pass


@dataclass(frozen=True)
class ConfidenceConfig:
    method: str = "kd_fix"
    K: int = 50
    s: float = 0.1
    c: float = 1.0
    combo_weight: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown confidence method {self.method!r}")
        if self.K < 1:
            raise ConfigError("K must be positive")
        if self.s <= 0 or self.c <= 0:
            raise ConfigError("s and c must be positive")
        if not 0.0 < self.combo_weight < 1.0:
            raise ConfigError("combo_weight must lie in (0, 1)")

    @property
    def absolute(self) -> bool:
        return self.method in ABSOLUTE_METHODS


@dataclass(frozen=True)
class ConfidenceAnnotation:
    unit: int
    predicted: int
    nu: float
    is_correct: bool | None = None


@dataclass(frozen=True)
class AlternativeSet:
    labelings: np.ndarray  # (K, n)
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        labelings = np.atleast_2d(np.asarray(self.labelings, dtype=np.int64))
        weights = self.weights
        weights = np.ones(len(labelings)) if weights is None else np.asarray(weights, dtype=float)
        if weights.shape != (len(labelings),) or np.any(weights < 0):
            raise ValueError("weights must be one non-negative value per labeling")
        object.__setattr__(self, "labelings", labelings)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.labelings)


def conf_delta(x, weights: np.ndarray) -> np.ndarray:
    """Margin of each unit: best score minus best score with that unit's value forbidden.

    Units with no admissible alternative get ``+inf``.
    """
    if isinstance(x, ChainInstance):
        t = chain.build_potentials(x, weights)
        labels, best = chain.viterbi(t)
        if t.L < 2:
            return np.full(t.n, np.inf)
        mm = chain.max_marginals(t)
        mm[np.arange(t.n), labels] = -np.inf
        return np.maximum(best - mm.max(axis=1), 0.0)
    w = tree.edge_weights(x, weights)
    best = tree.cle_decode(w)
    out = np.empty(x.n)
    for d in range(1, x.n + 1):
        try:
            alt = tree.constrained_cle(w, d, "forbid", int(best.heads[d - 1]))
            out[d - 1] = max(best.score - alt.score, 0.0)
        except tree.NoTreeError:
            out[d - 1] = np.inf
    return out


def conf_gamma(x, weights: np.ndarray, c: float) -> np.ndarray:
    """Marginal probability of the Viterbi label at each position."""
    if not isinstance(x, ChainInstance):
        raise UnsupportedMethod("marginal confidence is only defined for chains")
    t = chain.build_potentials(x, weights)
    labels, _ = chain.viterbi(t)
    marg = chain.forward_backward_marginals(t, c)
    return np.clip(marg[np.arange(t.n), labels], 0.0, 1.0)


def build_alternatives_kbest(x, weights: np.ndarray, K: int, weighted: bool = False) -> AlternativeSet:
    best = kbest(x, weights, K)
    labelings = np.array([y for y, _ in best])
    if weighted:
        return AlternativeSet(labelings, np.array([max(0.0, s) for _, s in best]))
    return AlternativeSet(labelings)


def instance_rng(seed: int, instance_id: int) -> np.random.Generator:
    """Generator for one instance's draws, independent of batch order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(instance_id)]))


def _active_features(x) -> np.ndarray:
    if isinstance(x, ChainInstance):
        return np.unique(np.concatenate([x.node.indices, x.trans.indices]))
    return np.unique(x.edges.indices)


def sample_weights(
    x, model: LinearModel, K: int, s: float, mode: str, seed: int, instance_id: int, weights=None
) -> tuple[np.ndarray, np.ndarray]:
    """K weight draws restricted to the features ``x`` can fire.

    Returns (active feature ids, draws of shape (K, n_active)). Only
    coordinates that can touch a score are sampled, which is equivalent in
    distribution to sampling the full vector. ``weights`` defaults to
    ``model.weights()``; pass it to avoid recomputing the average.
    """
    if s <= 0:
        raise ConfigError("s must be positive")
    active = _active_features(x)
    if weights is None:
        weights = model.weights()
    mean = weights[active]
    if mode == "fix":
        scale = np.full(active.size, np.sqrt(s))
    elif mode == "pc":
        if model.sigma_diag is None:
            raise ConfigError("kd_pc needs a model trained with a covariance (CW)")
        scale = np.sqrt(s * model.sigma_diag[active])
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    noise = instance_rng(seed, instance_id).standard_normal((K, active.size))
    return active, mean + scale * noise


def _local_table(table, active: np.ndarray):
    cols = np.searchsorted(active, table.indices)
    return sparse.csr_matrix((table.data, cols, table.indptr), shape=(table.n_rows, active.size))


def build_alternatives_sampled(
    x, model: LinearModel, K: int, s: float, mode: str = "fix", seed: int = 0, instance_id: int = 0, weights=None
) -> AlternativeSet:
    active, draws = sample_weights(x, model, K, s, mode, seed, instance_id, weights)
    if isinstance(x, ChainInstance):
        node = (_local_table(x.node, active) @ draws.T).T.reshape(K, x.n, x.L)
        trans = (_local_table(x.trans, active) @ draws.T).T.reshape(K, max(x.n - 1, 0), x.L, x.L)
        return AlternativeSet(chain.viterbi_batch(node, trans))
    scores = (_local_table(x.edges, active) @ draws.T).T.reshape(K, x.n + 1, x.n + 1)
    return AlternativeSet(np.array([tree.cle_decode(w).heads for w in scores]))


def agreement_confidence(alts: AlternativeSet, prediction) -> np.ndarray:
    """Weighted fraction of alternatives agreeing with the prediction at each unit."""
    total = alts.weights.sum()
    if total <= 0:
        raise DegenerateWeights("alternative weights sum to zero")
    agree = alts.labelings == np.asarray(prediction)[None, :]
    return np.clip((alts.weights @ agree) / total, 0.0, 1.0)


def rank_normalize(values: np.ndarray) -> np.ndarray:
    """Average ranks mapped into (0, 1); +inf ranks above every finite value."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    return rankdata(values, method="average") / (values.size + 1)


def combine(kd_nu: np.ndarray, delta: np.ndarray, a: float) -> np.ndarray:
    """a·ν(KD-Fix) + (1 − a)·rank-normalized δ over one scored batch."""
    return a * np.asarray(kd_nu) + (1.0 - a) * rank_normalize(delta)


def sentence_confidence(nu) -> float:
    nu = np.asarray(nu, dtype=float)
    if nu.size == 0:
        raise ValueError("sentence has no scored units")
    return float(nu.min())


def unit_scores(x, model: LinearModel, cfg: ConfidenceConfig, instance_id: int = 0, prediction=None, weights=None):
    """(prediction, per-unit score) for one instance under ``cfg``.

    ``kd_fix_plus_delta`` needs batch-level normalization; use
    :func:`score_batch` for it.
    """
    if weights is None:
        weights = model.weights()
    if prediction is None:
        prediction, _ = decode(x, weights)
    m = cfg.method
    if m == "delta":
        return prediction, conf_delta(x, weights)
    if m == "gamma":
        return prediction, conf_gamma(x, weights, cfg.c)
    if m in ("kb", "wkb"):
        alts = build_alternatives_kbest(x, weights, cfg.K, weighted=(m == "wkb"))
        return prediction, agreement_confidence(alts, prediction)
    if m in ("kd_fix", "kd_pc"):
        mode = "fix" if m == "kd_fix" else "pc"
        alts = build_alternatives_sampled(x, model, cfg.K, cfg.s, mode, cfg.seed, instance_id, weights)
        return prediction, agreement_confidence(alts, prediction)
    if m == "random":
        return prediction, instance_rng(cfg.seed, instance_id).random(x.n)
    raise UnsupportedMethod(f"{m} is scored per batch; use score_batch")


def score_batch(instances, model: LinearModel, cfg: ConfidenceConfig, ids=None, predictions=None):
    """Predictions and per-unit scores for a list of instances.

    Instance ``i`` uses ``ids[i]`` (default ``i``) to derive its sampling seeds.
    """
    ids = list(range(len(instances))) if ids is None else list(ids)
    weights = model.weights()
    if predictions is None:
        predictions = [decode(x, weights)[0] for x in instances]
    if cfg.method == "kd_fix_plus_delta":
        kd_cfg = replace(cfg, method="kd_fix")
        kd = [unit_scores(x, model, kd_cfg, i, y, weights)[1] for x, i, y in zip(instances, ids, predictions)]
        delta = [conf_delta(x, weights) for x in instances]
        return predictions, conf_combo(kd, delta, cfg.combo_weight)
    scores = [unit_scores(x, model, cfg, i, y, weights)[1] for x, i, y in zip(instances, ids, predictions)]
    return predictions, scores


def conf_combo(kd_nu: list, delta: list, a: float = 0.99) -> list[np.ndarray]:
    """Mix per-instance KD-Fix and Delta scores after rank-normalizing δ over the batch."""
    sizes = [len(v) for v in kd_nu]
    mixed = combine(np.concatenate(kd_nu), np.concatenate(delta), a)
    return np.split(mixed, np.cumsum(sizes)[:-1])


def annotate(instances, predictions, scores) -> list[list[ConfidenceAnnotation]]:
    out = []
    for x, y, nu in zip(instances, predictions, scores):
        gold = x.gold
        out.append(
            [
                ConfidenceAnnotation(
                    p, int(y[p]), float(nu[p]), None if gold is None else bool(gold[p] == y[p])
                )
                for p in range(len(y))
            ]
        )
    return out
