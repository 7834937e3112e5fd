"""Command-line interface.

Every subcommand writes a table (CSV by default, JSON with
``--format json``) to stdout or ``--output``. Exit status is 0 on
success, 1 on usage errors and 2 on data errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .applications import (
    ActiveLearnConfig,
    active_learning_run,
    runner_up_entity,
    tradeoff_sweep,
    tune,
    unit_arrays,
)
from .confidence import METHODS, ConfidenceConfig, score_batch
from .corpus import CorpusError, Featurizer, SynthConfig, Token, generate_synthetic, read_corpus, write_corpus
from .decoding import decode_all, unit_accuracy
from .evaluation import (
    UndefinedMetric,
    average_precision,
    bernstein_epsilon,
    calibration_bins,
    calibration_rmse,
    chernoff_k,
    precision_recall_curve,
)
from .io import ModelFormatError, load_model, read_report, save_model, write_report
from .learners import ALGORITHMS, TrainConfig, train
from .model import DimensionError, ShapeError

log = logging.getLogger("structconf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p, suppress: bool):
    default = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=default if suppress else 0, help="random seed (default 0)")
    p.add_argument("--format", choices=("csv", "json"), default=default if suppress else "csv")
    p.add_argument("--output", "-o", default=default if suppress else None, help="report path (default stdout)")


def _add_confidence_args(p, default_method="kd_fix"):
    p.add_argument("--method", choices=METHODS, default=default_method)
    p.add_argument("--K", type=int, default=50, help="alternatives per instance")
    p.add_argument("--s", type=float, default=0.1, help="sampling variance scale")
    p.add_argument("--c", type=float, default=1.0, help="marginal temperature")
    p.add_argument("--combo-weight", type=float, default=0.99)


def _add_train_args(p):
    p.add_argument("--algorithm", choices=ALGORITHMS, default="cw")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0, help="initial CW variance")
    p.add_argument("--nbest-k", type=int, default=5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--no-averaging", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structconf", description="Confidence estimation for structured linear predictors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate synthetic train/dev/test corpora")
    _add_common(p, True)
    p.add_argument("--mode", choices=("chain", "tree"), default="chain")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--n-types", type=int, default=3)
    p.add_argument("--vocab-size", type=int, default=300)
    p.add_argument("--n-pos", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.2)

    p = sub.add_parser("train", help="train a model on a corpus")
    _add_common(p, True)
    p.add_argument("--task", choices=("chain", "tree"), default="chain")
    p.add_argument("--train", required=True, help="training corpus")
    p.add_argument("--model", required=True, help="model file to write")
    _add_train_args(p)

    p = sub.add_parser("predict", help="decode a corpus with a trained model")
    _add_common(p, True)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--write-corpus", help="also write predictions in the corpus format")

    p = sub.add_parser("confidence", help="per-unit confidence scores")
    _add_common(p, True)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    _add_confidence_args(p)

    p = sub.add_parser("eval-rank", help="error-detection AP and precision at recall deciles")
    _add_common(p, True)
    p.add_argument("--scores", required=True, help="report from the confidence command")

    p = sub.add_parser("eval-calib", help="20-bin calibration table and RMSE")
    _add_common(p, True)
    p.add_argument("--scores", required=True, help="report from the confidence command")

    p = sub.add_parser("bounds", help="sample-size and interval bounds")
    _add_common(p, True)
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--chernoff", action="store_true", help="K needed for accuracy eps with probability 1-delta")
    kind.add_argument("--bernstein", action="store_true", help="interval half-width for K draws")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--n", type=int, required=True, help="number of units")
    p.add_argument("--gamma", type=float)
    p.add_argument("--K", type=int)

    p = sub.add_parser("tradeoff", help="sweep the precision/recall threshold")
    _add_common(p, True)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--direction", choices=("precision_gain", "recall_gain"), default="precision_gain")
    p.add_argument("--merge", action="store_true", help="merge entity types (recall_gain only)")
    p.add_argument("--steps", type=int, default=21, help="number of thresholds in [0, 1]")
    _add_confidence_args(p)

    p = sub.add_parser("active-learn", help="simulate pool-based active learning")
    _add_common(p, True)
    p.add_argument("--pool", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--task", choices=("chain", "tree"), default="chain")
    p.add_argument("--initial", type=int, default=50)
    p.add_argument("--pool-size", type=int, default=0)
    p.add_argument("--candidates", type=int, default=1000)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--stop", type=int, default=5000)
    _add_train_args(p)
    _add_confidence_args(p)
    p.set_defaults(epochs=5)

    p = sub.add_parser("tune", help="grid-search confidence parameters on a dev corpus")
    _add_common(p, True)
    p.add_argument("--model", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--method", choices=METHODS, default="kd_fix")
    p.add_argument("--K-grid", type=_ints)
    p.add_argument("--s-grid", type=_floats)
    p.add_argument("--c-grid", type=_floats)
    p.add_argument("--combo-grid", type=_floats)
    return parser


# -- subcommands -----------------------------------------------------------------


def _emit(args, rows, columns=None):
    write_report(rows, args.output, args.format, columns)


def _confidence_config(args) -> ConfidenceConfig:
    return ConfidenceConfig(args.method, args.K, args.s, args.c, args.combo_weight, args.seed)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        args.algorithm, args.C, args.phi, args.a, args.nbest_k, args.epochs, args.seed, not args.no_averaging
    )


def _unit_label(feat, value) -> str:
    return feat.labels[int(value)] if feat.task == "chain" else str(int(value))


def _gold_label(feat, tok: Token):
    if feat.task == "chain":
        return tok.tag
    return None if tok.head is None else str(tok.head)


def cmd_synth(args):
    cfg = SynthConfig(
        args.mode,
        args.n_train,
        args.n_dev,
        args.n_test,
        args.min_len,
        args.max_len,
        args.n_types,
        args.vocab_size,
        args.n_pos,
        args.noise,
        args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "conll" if args.mode == "chain" else "conllx"
    rows = []
    for name, sents in zip(("train", "dev", "test"), generate_synthetic(cfg)):
        path = out / f"{name}.{ext}"
        write_corpus(sents, path, args.mode)
        rows.append({"split": name, "sentences": len(sents), "tokens": sum(len(s) for s in sents), "file": path.name})
    _emit(args, rows)


def cmd_train(args):
    sents = read_corpus(args.train, args.task)
    if not sents:
        raise CorpusError(f"{args.train}: no sentences")
    feat = Featurizer.fit(args.task, sents)
    data = feat.transform(sents)
    config = _train_config(args)
    model = train(data, config, feat.dimension)
    save_model(args.model, model, feat, config)
    acc = unit_accuracy(data, decode_all(data, model.weights()))
    _emit(
        args,
        [
            {
                "algorithm": config.algorithm,
                "epochs": config.epochs,
                "sentences": len(data),
                "dimension": model.dimension,
                "train_accuracy": acc,
            }
        ],
    )


def _load(args, path):
    saved = load_model(args.model)
    sents = read_corpus(path, saved.featurizer.task)
    return saved, sents, saved.featurizer.transform(sents)


def cmd_predict(args):
    saved, sents, data = _load(args, args.input)
    feat = saved.featurizer
    preds = decode_all(data, saved.model.weights())
    rows = []
    for i, (sent, y) in enumerate(zip(sents, preds)):
        for p, tok in enumerate(sent.tokens):
            rows.append(
                {
                    "sentence": i,
                    "unit": p + 1,
                    "form": tok.form,
                    "predicted": _unit_label(feat, y[p]),
                    "gold": _gold_label(feat, tok),
                }
            )
    if args.write_corpus:
        for sent, y in zip(sents, preds):
            for p, tok in enumerate(sent.tokens):
                if feat.task == "chain":
                    tok.tag = feat.labels[int(y[p])]
                else:
                    tok.head = int(y[p])
        write_corpus(sents, args.write_corpus, feat.task)
    _emit(args, rows, ["sentence", "unit", "form", "predicted", "gold"])


def cmd_confidence(args):
    saved, sents, data = _load(args, args.input)
    feat = saved.featurizer
    preds, scores = score_batch(data, saved.model, _confidence_config(args))
    rows = []
    for i, (sent, y, nu) in enumerate(zip(sents, preds, scores)):
        for p, tok in enumerate(sent.tokens):
            gold = _gold_label(feat, tok)
            pred = _unit_label(feat, y[p])
            rows.append(
                {
                    "sentence": i,
                    "unit": p + 1,
                    "form": tok.form,
                    "predicted": pred,
                    "gold": gold,
                    "correct": None if gold is None else gold == pred,
                    "nu": float(nu[p]),
                }
            )
    _emit(args, rows, ["sentence", "unit", "form", "predicted", "gold", "correct", "nu"])


def _truth(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("true", "1"):
        return True
    if s in ("false", "0"):
        return False
    raise CorpusError(f"correct column holds {v!r}; scores need gold labels")


def _read_scores(path):
    rows = read_report(path)
    try:
        nu = np.array([float(r["nu"]) for r in rows])
        correct = np.array([_truth(r["correct"]) for r in rows], dtype=bool)
    except KeyError as exc:
        raise CorpusError(f"{path}: missing column {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"{path}: {exc}") from None
    return nu, correct


def cmd_eval_rank(args):
    nu, correct = _read_scores(args.scores)
    err = ~correct
    rows = [{"metric": "average_precision", "recall": None, "value": average_precision(nu, err)}]
    for level, prec in precision_recall_curve(nu, err):
        rows.append({"metric": "precision", "recall": level, "value": prec})
    rows.append({"metric": "error_rate", "recall": None, "value": float(err.mean())})
    _emit(args, rows, ["metric", "recall", "value"])


def cmd_eval_calib(args):
    nu, correct = _read_scores(args.scores)
    bins = calibration_bins(nu, correct)
    rows = [{"bin": b.index, "center": b.center, "count": b.count, "accuracy": b.accuracy, "rmse": None} for b in bins]
    rows.append({"bin": "all", "center": None, "count": int(nu.size), "accuracy": float(correct.mean()), "rmse": calibration_rmse(bins)})
    _emit(args, rows, ["bin", "center", "count", "accuracy", "rmse"])


def cmd_bounds(args):
    if args.chernoff:
        if args.eps is None:
            raise UsageError("bounds --chernoff needs --eps")
        k = chernoff_k(args.eps, args.delta, args.n)
        _emit(args, [{"bound": "chernoff", "eps": args.eps, "delta": args.delta, "n": args.n, "K": k}])
    else:
        if args.gamma is None or args.K is None:
            raise UsageError("bounds --bernstein needs --gamma and --K")
        eps = bernstein_epsilon(args.gamma, args.K, args.n, args.delta)
        _emit(
            args,
            [{"bound": "bernstein", "gamma": args.gamma, "K": args.K, "n": args.n, "delta": args.delta, "eps": eps}],
        )


def cmd_tradeoff(args):
    saved, sents, data = _load(args, args.input)
    feat = saved.featurizer
    if feat.task != "chain":
        raise UsageError("tradeoff applies to chain (tagging) models")
    preds, scores = score_batch(data, saved.model, _confidence_config(args))
    labels = feat.labels
    gold = [s.tags for s in sents]
    if any(t is None for g in gold for t in g):
        raise CorpusError(f"{args.input}: tradeoff needs gold tags")
    predicted = [[labels[int(i)] for i in y] for y in preds]
    runner = None
    if args.direction == "recall_gain":
        w = saved.model.weights()
        runner = [runner_up_entity(x, w, labels) for x in data]
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    ts = np.linspace(0.0, 1.0, args.steps)
    points = tradeoff_sweep(gold, predicted, scores, ts, args.direction, runner, args.merge, args.method)
    rows = [asdict(p) for p in points]
    _emit(args, rows)


def cmd_active_learn(args):
    pool_s = read_corpus(args.pool, args.task)
    test_s = read_corpus(args.test, args.task)
    feat = Featurizer.fit(args.task, pool_s)
    pool, test = feat.transform(pool_s), feat.transform(test_s)
    cfg = ActiveLearnConfig(
        args.initial,
        args.pool_size,
        args.candidates,
        args.batch,
        args.eval_every,
        args.stop,
        _confidence_config(args),
        _train_config(args),
        args.seed,
    )
    labels = feat.labels if args.task == "chain" else None
    curve = active_learning_run(pool, test, cfg, labels, feat.dimension)
    metric = "entity_f1" if labels is not None else "accuracy"
    rows = [
        {"sentences": p.sentences, "words": p.words, "metric": metric, "value": p.metric, "exhausted": curve.exhausted}
        for p in curve.points
    ]
    _emit(args, rows)


def cmd_tune(args):
    saved = load_model(args.model)
    sents = read_corpus(args.dev, saved.featurizer.task)
    dev = saved.featurizer.transform(sents)
    grids = {}
    for name, values in (("K", args.K_grid), ("s", args.s_grid), ("c", args.c_grid), ("combo_weight", args.combo_grid)):
        if values is not None:
            grids[name] = values
    if not grids:
        raise UsageError("tune needs at least one of --K-grid, --s-grid, --c-grid, --combo-grid")
    best, results = tune(dev, saved.model, args.method, grids, ConfidenceConfig(args.method, seed=args.seed))
    rows = []
    for cfg, ap in results:
        rows.append(
            {"method": cfg.method, "K": cfg.K, "s": cfg.s, "c": cfg.c, "combo_weight": cfg.combo_weight, "ap": ap, "best": cfg == best}
        )
    _emit(args, rows)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "confidence": cmd_confidence,
    "eval-rank": cmd_eval_rank,
    "eval-calib": cmd_eval_calib,
    "bounds": cmd_bounds,
    "tradeoff": cmd_tradeoff,
    "active-learn": cmd_active_learn,
    "tune": cmd_tune,
}

DATA_ERRORS = (CorpusError, ModelFormatError, UndefinedMetric, DimensionError, ShapeError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"structconf {args.command}: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"structconf {args.command}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # bad parameter values (e.g. noise outside [0, 1]) are usage errors
        print(f"structconf {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
