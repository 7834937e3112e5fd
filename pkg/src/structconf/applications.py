"""Confidence applications: precision/recall trading, active learning and tuning."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import chain
from .confidence import ConfidenceConfig, ConfigError, UnsupportedMethod, score_batch, sentence_confidence
from .corpus import OUTSIDE, entities, split_tag
from .decoding import decode_all, unit_accuracy
from .evaluation import average_precision
from .learners import TrainConfig, dataset_dimension, train

log = logging.getLogger(__name__)

MERGED_TYPE = "NE"


# -- entity scoring --------------------------------------------------------------


def entity_prf(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Exact-phrase precision, recall and F1 over a corpus of BIO sequences.

    A stray I-X opens a new phrase, as if it were B-X. With no predicted
    phrases precision is 1.0; with no gold phrases recall is 1.0.
    """
    if len(gold) != len(predicted):
        raise ValueError("gold and predicted corpora differ in length")
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, predicted):
        if len(g) != len(p):
            raise ValueError("gold and predicted sentences differ in length")
        gs, ps = entities(g), entities(p)
        tp += len(gs & ps)
        n_pred += len(ps)
        n_gold += len(gs)
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_gold if n_gold else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def tag_prf(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Word-level precision, recall and F1 of entity tags.

    A word counts as predicted when its tag is not the outside tag and as
    correct when that tag equals the gold tag. Same conventions as
    :func:`entity_prf` for empty denominators.
    """
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, predicted, strict=True):
        g, p = np.asarray(g, dtype=object), np.asarray(p, dtype=object)
        if g.shape != p.shape:
            raise ValueError("gold and predicted sentences differ in length")
        pred_ent = p != OUTSIDE
        tp += int(np.sum(pred_ent & (p == g)))
        n_pred += int(pred_ent.sum())
        n_gold += int(np.sum(g != OUTSIDE))
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_gold if n_gold else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def merge_categories(tags: Sequence[str]) -> list[str]:
    """Collapse every entity type into a single generic one."""
    out = []
    for tag in tags:
        prefix, kind = split_tag(tag)
        out.append(tag if kind is None else f"{prefix}-{MERGED_TYPE}")
    return out


# -- precision / recall trading ----------------------------------------------------


@dataclass(frozen=True)
class TradeoffConfig:
    t: float = 0.0
    direction: str = "precision_gain"
    merge_categories: bool = False

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        if self.direction not in ("precision_gain", "recall_gain"):
            raise ValueError("direction must be 'precision_gain' or 'recall_gain'")
        if self.merge_categories and self.direction != "recall_gain":
            raise ValueError("category merging only applies to recall_gain")


def _check_absolute(method: str | None) -> None:
    if method is not None and method not in ("gamma", "kb", "wkb", "kd_fix", "kd_pc", "random"):
        raise UnsupportedMethod(f"{method} scores are not probabilities; tradeoffs need absolute confidence")


def apply_precision_tradeoff(tags: Sequence[str], nu, t: float, method: str | None = None) -> tuple[list[str], set[int]]:
    """Entity tags with confidence below ``t`` become the outside tag.

    Returns the revised tags and the set of replaced positions.
    """
    _check_absolute(method)
    nu = np.asarray(nu, dtype=float)
    out = list(tags)
    replaced = set()
    for p, tag in enumerate(tags):
        if tag != OUTSIDE and nu[p] < t:
            out[p] = OUTSIDE
            replaced.add(p)
    return out, replaced


def runner_up_entity(x, weights: np.ndarray, labels: Sequence[str]) -> list[str]:
    """Best-scoring entity label at each position when that position is forced to it."""
    t = chain.build_potentials(x, weights)
    mm = chain.max_marginals(t)
    ent = np.array([lab != OUTSIDE for lab in labels])
    if not ent.any():
        raise ValueError("label set has no entity tags")
    mm = np.where(ent[None, :], mm, -np.inf)
    return [labels[int(i)] for i in np.argmax(mm, axis=1)]


def apply_recall_tradeoff(
    tags: Sequence[str], nu, runner_up: Sequence[str], t: float, merge: bool = False, method: str | None = None
) -> tuple[list[str], set[int]]:
    """Outside-tagged positions with confidence below ``t`` take the runner-up entity label.

    In merged mode every entity tag, original or replaced, is reduced to the
    single generic type so a replacement commits to no category.
    """
    _check_absolute(method)
    nu = np.asarray(nu, dtype=float)
    out = list(tags)
    replaced = set()
    for p, tag in enumerate(tags):
        if tag == OUTSIDE and nu[p] < t:
            out[p] = runner_up[p]
            replaced.add(p)
    if merge:
        out = merge_categories(out)
    return out, replaced


@dataclass
class TradeoffPoint:
    """Scores after thresholding at ``t``: word-level tag scores and exact-phrase scores."""

    t: float
    precision: float
    recall: float
    f1: float
    entity_precision: float
    entity_recall: float
    entity_f1: float
    replaced: int


def tradeoff_sweep(
    gold: Sequence[Sequence[str]],
    predicted: Sequence[Sequence[str]],
    nu: Sequence,
    ts: Sequence[float],
    direction: str = "precision_gain",
    runner_up: Sequence[Sequence[str]] | None = None,
    merge: bool = False,
    method: str | None = None,
) -> list[TradeoffPoint]:
    """Word-level and phrase-level P/R/F1 after applying the tradeoff at each threshold in ``ts``."""
    if direction == "recall_gain" and runner_up is None:
        raise ValueError("recall_gain needs runner-up labels")
    gold_eval = [merge_categories(g) for g in gold] if merge else list(gold)
    points = []
    for t in ts:
        cfg = TradeoffConfig(float(t), direction, merge)
        revised, n_rep = [], 0
        for i, (tags, v) in enumerate(zip(predicted, nu)):
            if cfg.direction == "precision_gain":
                new, rep = apply_precision_tradeoff(tags, v, cfg.t, method)
            else:
                new, rep = apply_recall_tradeoff(tags, v, runner_up[i], cfg.t, merge, method)
            revised.append(new)
            n_rep += len(rep)
        points.append(TradeoffPoint(cfg.t, *tag_prf(gold_eval, revised), *entity_prf(gold_eval, revised), n_rep))
    return points


# -- active learning ---------------------------------------------------------------


@dataclass(frozen=True)
class ActiveLearnConfig:
    """Pool-based selection protocol.

    ``pool_size`` caps how much of the supplied pool is used (0 means all).
    """

    initial_labeled: int = 50
    pool_size: int = 0
    candidate_sample: int = 1000
    batch: int = 10
    eval_every_sentences: int = 100
    stop_at: int = 5000
    scorer: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(algorithm="cw", epochs=5))
    seed: int = 0

    def __post_init__(self):
        if min(self.initial_labeled, self.candidate_sample, self.batch, self.eval_every_sentences) < 1:
            raise ValueError("sizes must be positive")
        if self.batch > self.candidate_sample:
            raise ValueError("batch must not exceed candidate_sample")
        if self.pool_size and self.candidate_sample > self.pool_size:
            raise ValueError("candidate_sample must not exceed pool_size")


@dataclass
class CurvePoint:
    sentences: int
    words: int
    metric: float


@dataclass
class LearningCurve:
    points: list[CurvePoint]
    exhausted: bool = False
    selected: list[int] = field(default_factory=list)

    @property
    def final(self) -> CurvePoint:
        return self.points[-1]


def evaluate_metric(model, test, labels: Sequence[str] | None) -> float:
    """Entity F1 for chains when label names are known, unit accuracy otherwise."""
    predictions = decode_all(test, model.weights())
    if labels is None:
        return unit_accuracy(test, predictions)
    gold = [[labels[i] for i in x.gold] for x in test]
    pred = [[labels[i] for i in y] for y in predictions]
    return entity_prf(gold, pred)[2]


def select_batch(scores, lengths, indices, batch: int) -> list[int]:
    """Least confident first; ties go to shorter sentences, then lower index."""
    order = np.lexsort((np.asarray(indices), np.asarray(lengths), np.asarray(scores)))
    return [int(indices[i]) for i in order[:batch]]


def _sentence_scores(cand, pool, model, config: ActiveLearnConfig, round_no: int) -> np.ndarray:
    scorer = config.scorer
    if scorer.method == "random":
        # one draw per sentence: selection is uniform among the candidates
        rng = np.random.default_rng([config.seed, 7, round_no])
        return rng.random(len(cand))
    instances = [pool[i] for i in cand]
    ids = [round_no * len(pool) + i for i in cand]
    _, scores = score_batch(instances, model, scorer, ids)
    return np.array([sentence_confidence(s) for s in scores])


def active_learning_run(pool, test, config: ActiveLearnConfig, labels: Sequence[str] | None = None, dimension=None) -> LearningCurve:
    """Simulate the annotate-retrain loop with gold labels as the oracle.

    Each round retrains from scratch on the labeled set, draws a random
    candidate subset of the remaining pool, and moves the ``batch`` least
    confident candidates into the labeled set. The test metric is recorded
    at the start, every ``eval_every_sentences`` added sentences, and at
    the end.
    """
    pool = list(pool[: config.pool_size] if config.pool_size else pool)
    if len(pool) == 0:
        raise ValueError("empty pool")
    if dimension is None:
        dimension = max(dataset_dimension(pool), dataset_dimension(test))
    rng = np.random.default_rng([config.seed, 0])
    order = rng.permutation(len(pool))
    labeled = [int(i) for i in order[: config.initial_labeled]]
    unlabeled = sorted(int(i) for i in order[config.initial_labeled :])
    lengths = np.array([x.n for x in pool])
    needs_model = config.scorer.method != "random"

    def fit():
        return train([pool[i] for i in labeled], config.train, dimension)

    def record(model):
        metric = evaluate_metric(model, test, labels)
        points.append(CurvePoint(len(labeled), int(lengths[labeled].sum()), metric))
        log.info("labeled %d sentences: metric %.4f", len(labeled), metric)

    points: list[CurvePoint] = []
    model = fit()
    record(model)
    last_eval = len(labeled)
    exhausted = False
    selected_all: list[int] = []
    round_no = 0
    while len(labeled) < config.stop_at:
        if not unlabeled:
            exhausted = True
            break
        m = min(config.candidate_sample, len(unlabeled))
        cand = np.sort(rng.choice(np.array(unlabeled), size=m, replace=False))
        scores = _sentence_scores(cand, pool, model, config, round_no)
        chosen = select_batch(scores, lengths[cand], cand, config.batch)
        labeled.extend(chosen)
        selected_all.extend(chosen)
        chosen_set = set(chosen)
        unlabeled = [i for i in unlabeled if i not in chosen_set]
        round_no += 1
        due = len(labeled) - last_eval >= config.eval_every_sentences
        done = len(labeled) >= config.stop_at or not unlabeled
        if needs_model or due or done:
            model = fit()
        if due or done:
            record(model)
            last_eval = len(labeled)
    if not unlabeled and len(labeled) < config.stop_at:
        exhausted = True
    if exhausted:
        log.warning("pool exhausted after %d sentences", len(labeled))
    return LearningCurve(points, exhausted, selected_all)


def words_to_reach(curve: LearningCurve, target: float) -> int | None:
    for pt in curve.points:
        if pt.metric >= target:
            return pt.words
    return None


def effort_reduction(curve: LearningCurve, baseline: LearningCurve) -> float:
    """1 − (words ``curve`` needs to match the baseline's final metric) / (baseline's words).

    Negative when the curve never reaches the target within its run.
    """
    target = baseline.final.metric
    needed = words_to_reach(curve, target)
    if needed is None:
        return -np.inf
    return 1.0 - needed / baseline.final.words


# -- tuning ------------------------------------------------------------------------


def unit_arrays(instances, predictions, scores) -> tuple[np.ndarray, np.ndarray]:
    """Flatten per-instance scores into (ν, is_error) in corpus order."""
    nu = np.concatenate([np.asarray(s, dtype=float) for s in scores])
    err = np.concatenate([np.asarray(x.gold) != np.asarray(y) for x, y in zip(instances, predictions)])
    return nu, err


def dev_average_precision(dev, model, cfg: ConfidenceConfig, predictions=None) -> float:
    predictions, scores = score_batch(dev, model, cfg, predictions=predictions)
    nu, err = unit_arrays(dev, predictions, scores)
    return average_precision(nu, err)


TUNABLE = ("K", "s", "c", "combo_weight")


def tune(dev, model, method: str, grids: dict, base: ConfidenceConfig | None = None):
    """Exhaustive search maximizing dev AP.

    ``grids`` maps parameter names to candidate values. Ties go to the
    smallest values, compared in the order the parameters are given.
    Returns (best config, list of (config, AP)).
    """
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("empty tuning grid")
    unknown = set(grids) - set(TUNABLE)
    if unknown:
        raise ConfigError(f"cannot tune {sorted(unknown)}")
    base = replace(base or ConfidenceConfig(), method=method)
    names = list(grids)
    axes = [sorted(set(grids[k])) for k in names]
    predictions = decode_all(dev, model.weights())
    results = []
    best, best_ap = None, -np.inf
    for values in itertools.product(*axes):
        cfg = replace(base, **dict(zip(names, values)))
        ap = dev_average_precision(dev, model, cfg, predictions)
        results.append((cfg, ap))
        if ap > best_ap:
            best, best_ap = cfg, ap
    return best, results
