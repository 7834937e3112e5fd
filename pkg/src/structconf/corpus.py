"""CoNLL readers and writers, feature templates, indexing and synthetic corpora."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import ChainInstance, FeatureTable, TreeInstance, is_arborescence

log = logging.getLogger(__name__)

OUTSIDE = "O"


class CorpusError(ValueError):
    """Malformed input data."""


@dataclass
class Token:
    form: str
    pos: str = "_"
    tag: str | None = None
    head: int | None = None


@dataclass
class RawSentence:
    tokens: list[Token]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def tags(self) -> list[str | None]:
        return [t.tag for t in self.tokens]

    @property
    def heads(self) -> list[int | None]:
        return [t.head for t in self.tokens]


# -- BIO ---------------------------------------------------------------------


def split_tag(tag: str) -> tuple[str, str | None]:
    if tag == OUTSIDE or "-" not in tag:
        return OUTSIDE, None
    prefix, kind = tag.split("-", 1)
    return prefix, kind


def repair_bio(tags: Sequence[str]) -> tuple[list[str], int]:
    """Turn every I-X that does not continue an X phrase into B-X."""
    out = list(tags)
    fixed = 0
    prev = OUTSIDE
    for i, tag in enumerate(out):
        prefix, kind = split_tag(tag)
        if prefix == "I":
            p_prefix, p_kind = split_tag(prev)
            if p_prefix == OUTSIDE or p_kind != kind:
                out[i] = f"B-{kind}"
                fixed += 1
        prev = out[i]
    return out, fixed


def entities(tags: Sequence[str]) -> set[tuple[int, int, str]]:
    """(start, end exclusive, type) phrases; a stray I opens a new phrase."""
    spans = set()
    start, kind = None, None
    for i, tag in enumerate(list(tags) + [OUTSIDE]):
        prefix, k = split_tag(tag)
        continues = prefix == "I" and start is not None and k == kind
        if start is not None and not continues:
            spans.add((start, i, kind))
            start, kind = None, None
        if prefix in ("B", "I") and not continues:
            start, kind = i, k
    return spans


# -- readers and writers -------------------------------------------------------


def _blocks(path) -> Iterable[list[tuple[int, str]]]:
    block = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                if block:
                    yield block
                    block = []
                continue
            block.append((lineno, line))
    if block:
        yield block


def read_conll_chain(path, columns: Sequence[str] = ("form", "pos", "tag")) -> list[RawSentence]:
    """Whitespace-separated columns, blank lines between sentences.

    ``columns`` names each column; recognised names are ``form``, ``pos``
    and ``tag``, anything else is ignored. The tag column is taken to be
    the last one when named ``tag``.
    """
    sentences = []
    for block in _blocks(path):
        tokens = []
        width = None
        for lineno, line in block:
            cols = line.split()
            if width is None:
                width = len(cols)
            if len(cols) != width or len(cols) < len(columns):
                raise CorpusError(f"{path}:{lineno}: expected {width} columns, got {len(cols)}")
            row = dict(zip(columns, cols))
            tokens.append(Token(row.get("form", cols[0]), row.get("pos", "_"), row.get("tag")))
        tags = [t.tag for t in tokens]
        if all(tag is not None for tag in tags):
            repaired, fixed = repair_bio(tags)
            if fixed:
                log.warning("%s: repaired %d stray I- tags near line %d", path, fixed, block[0][0])
                for tok, tag in zip(tokens, repaired):
                    tok.tag = tag
        sentences.append(RawSentence(tokens))
    return sentences


def write_conll_chain(sentences: Sequence[RawSentence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            for tok in sent.tokens:
                fh.write(f"{tok.form} {tok.pos} {tok.tag if tok.tag is not None else OUTSIDE}\n")
            fh.write("\n")


def read_conll_dependency(path) -> list[RawSentence]:
    """CoNLL-X: 10 tab-separated columns; FORM is column 2, POSTAG 5, HEAD 7."""
    sentences = []
    for block in _blocks(path):
        tokens = []
        for lineno, line in block:
            cols = line.split("\t")
            if len(cols) != 10:
                raise CorpusError(f"{path}:{lineno}: expected 10 tab-separated columns")
            try:
                idx, head = int(cols[0]), int(cols[6])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: ID and HEAD must be integers") from None
            if idx != len(tokens) + 1:
                raise CorpusError(f"{path}:{lineno}: token ids must run 1..n")
            tokens.append(Token(cols[1], cols[4], None, head))
        heads = [t.head for t in tokens]
        if not is_arborescence(heads):
            raise CorpusError(
                f"{path}:{block[0][0]}: gold heads are not a single-root acyclic tree"
            )
        sentences.append(RawSentence(tokens))
    return sentences


def write_conll_dependency(sentences: Sequence[RawSentence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            for i, tok in enumerate(sent.tokens, 1):
                cols = [str(i), tok.form, "_", tok.pos, tok.pos, "_", str(tok.head), "_", "_", "_"]
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")


# -- feature index ---------------------------------------------------------------


class FrozenIndexError(KeyError):
    pass


class FeatureIndex:
    """Bidirectional string <-> id map. A frozen index drops unseen strings."""

    def __init__(self, strings: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._strings: list[str] = []
        self.frozen = False
        for s in strings:
            self.add(s)

    def __len__(self) -> int:
        return len(self._strings)

    def __contains__(self, s: str) -> bool:
        return s in self._ids

    def add(self, s: str) -> int:
        fid = self._ids.get(s)
        if fid is None:
            if self.frozen:
                raise FrozenIndexError(s)
            fid = len(self._strings)
            self._ids[s] = fid
            self._strings.append(s)
        return fid

    def lookup(self, strings: Iterable[str]) -> list[int]:
        """Ids of ``strings``; unknown strings are added unless frozen, else skipped."""
        if self.frozen:
            ids = self._ids
            return [ids[s] for s in strings if s in ids]
        return [self.add(s) for s in strings]

    def string(self, fid: int) -> str:
        return self._strings[fid]

    def strings(self) -> list[str]:
        return list(self._strings)

    def freeze(self) -> "FeatureIndex":
        self.frozen = True
        return self


# -- templates -----------------------------------------------------------------

BOUNDARY = ("<s>", "</s>")


@dataclass(frozen=True)
class ChainTemplates:
    """Observation templates; each observation is conjoined with every label.

    Word and POS identity over a window, current-word affixes and
    orthographic flags (capitalized, all caps, has digit, has hyphen).
    """

    window: int = 2
    words: bool = True
    pos: bool = True
    affixes: tuple[int, ...] = (2, 3, 4)
    orthographic: bool = True
    bias: bool = True

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "words": self.words,
            "pos": self.pos,
            "affixes": list(self.affixes),
            "orthographic": self.orthographic,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainTemplates":
        return cls(d["window"], d["words"], d["pos"], tuple(d["affixes"]), d["orthographic"], d["bias"])


def _ortho(word: str) -> list[str]:
    flags = []
    if word[:1].isupper():
        flags.append("cap")
    if word.isupper() and any(ch.isalpha() for ch in word):
        flags.append("allcaps")
    if any(ch.isdigit() for ch in word):
        flags.append("digit")
    if "-" in word:
        flags.append("hyphen")
    return flags


def chain_observations(sent: RawSentence, tpl: ChainTemplates) -> list[list[str]]:
    forms = sent.forms
    tags = [t.pos for t in sent.tokens]
    n = len(forms)
    out = []
    for p in range(n):
        obs = ["bias"] if tpl.bias else []
        for o in range(-tpl.window, tpl.window + 1):
            q = p + o
            if q < 0:
                w, t = BOUNDARY[0], BOUNDARY[0]
            elif q >= n:
                w, t = BOUNDARY[1], BOUNDARY[1]
            else:
                w, t = forms[q].lower(), tags[q]
            if tpl.words:
                obs.append(f"w[{o}]={w}")
            if tpl.pos:
                obs.append(f"p[{o}]={t}")
        word = forms[p]
        for k in tpl.affixes:
            if len(word) >= k:
                obs.append(f"pre{k}={word[:k].lower()}")
                obs.append(f"suf{k}={word[-k:].lower()}")
        if tpl.orthographic:
            obs.extend(f"o={f}" for f in _ortho(word))
        out.append(obs)
    return out


@dataclass(frozen=True)
class TreeTemplates:
    """Edge templates: head/dependent word and POS, surrounding and
    in-between POS, each also conjoined with direction and bucketed distance."""

    context: bool = True
    between: bool = True

    def to_dict(self) -> dict:
        return {"context": self.context, "between": self.between}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeTemplates":
        return cls(d["context"], d["between"])


def _distance_bucket(dist: int) -> str:
    if dist <= 5:
        return str(dist)
    return "6-10" if dist <= 10 else "11+"


def edge_observations(forms, tags, h: int, d: int, tpl: TreeTemplates) -> list[str]:
    # forms/tags include the root at index 0
    hw, hp, dw, dp = forms[h], tags[h], forms[d], tags[d]
    base = [
        f"hw={hw}",
        f"hp={hp}",
        f"dw={dw}",
        f"dp={dp}",
        f"hw,hp={hw},{hp}",
        f"dw,dp={dw},{dp}",
        f"hw,dw={hw},{dw}",
        f"hp,dp={hp},{dp}",
        f"hw,hp,dp={hw},{hp},{dp}",
        f"hp,dw,dp={hp},{dw},{dp}",
    ]
    m = len(forms)
    if tpl.context:
        hn = tags[h + 1] if h + 1 < m else "</s>"
        hb = tags[h - 1] if h - 1 >= 0 else "<s>"
        dn = tags[d + 1] if d + 1 < m else "</s>"
        db = tags[d - 1] if d - 1 >= 0 else "<s>"
        base += [
            f"hp,hp+1,dp-1,dp={hp},{hn},{db},{dp}",
            f"hp-1,hp,dp,dp+1={hb},{hp},{dp},{dn}",
            f"hp,hp+1,dp,dp+1={hp},{hn},{dp},{dn}",
            f"hp-1,hp,dp-1,dp={hb},{hp},{db},{dp}",
        ]
    if tpl.between:
        lo, hi = min(h, d), max(h, d)
        for b in sorted({tags[i] for i in range(lo + 1, hi)}):
            base.append(f"hp,bp,dp={hp},{b},{dp}")
    direction = "R" if d > h else "L"
    dist = _distance_bucket(abs(h - d))
    attach = [f"dir={direction}", f"dir,dist={direction},{dist}", "bias"]
    return base + attach + [f"{f}&{direction}{dist}" for f in base]


# -- extraction -----------------------------------------------------------------


def label_index(sentences: Sequence[RawSentence]) -> list[str]:
    """Sorted tag inventory with the outside tag first."""
    tags = {t.tag for s in sentences for t in s.tokens if t.tag is not None}
    tags.add(OUTSIDE)
    return [OUTSIDE] + sorted(tags - {OUTSIDE})


def chain_dimension(n_obs: int, L: int) -> int:
    return L * L + n_obs * L


def _trans_table(n: int, L: int) -> FeatureTable:
    rows = max(n - 1, 0) * L * L
    ids = np.tile(np.arange(L * L), max(n - 1, 0))
    return FeatureTable(np.arange(rows + 1), ids, np.ones(rows))


def extract_chain(sent: RawSentence, tpl: ChainTemplates, index: FeatureIndex, labels: Sequence[str]) -> ChainInstance:
    """Factored chain features.

    Pair features take ids ``y * L + y2``; node features take
    ``L² + obs_id * L + y``, so the layout never depends on how large the
    index grows.
    """
    L = len(labels)
    n = len(sent)
    obs = [np.array(index.lookup(o), dtype=np.int64) for o in chain_observations(sent, tpl)]
    counts = np.array([len(o) for o in obs], dtype=np.int64)
    per_row = np.repeat(counts, L)
    indptr = np.concatenate([[0], np.cumsum(per_row)])
    parts = []
    for o in obs:
        for y in range(L):
            parts.append(L * L + o * L + y)
    ids = np.concatenate(parts) if parts else np.zeros(0, np.int64)
    node = FeatureTable(indptr, ids, np.ones(ids.size))
    gold = None
    if all(t.tag is not None for t in sent.tokens):
        lookup = {lab: i for i, lab in enumerate(labels)}
        try:
            gold = [lookup[t.tag] for t in sent.tokens]
        except KeyError as exc:
            raise CorpusError(f"unknown tag {exc.args[0]!r}") from None
    return ChainInstance(n, L, node, _trans_table(n, L), gold)


def extract_tree(sent: RawSentence, tpl: TreeTemplates, index: FeatureIndex) -> TreeInstance:
    n = len(sent)
    forms = ["<root>"] + [t.form.lower() for t in sent.tokens]
    tags = ["<root>"] + [t.pos for t in sent.tokens]
    indptr = [0]
    parts = []
    for h in range(n + 1):
        for d in range(n + 1):
            if d == 0 or h == d:
                indptr.append(indptr[-1])
                continue
            ids = index.lookup(edge_observations(forms, tags, h, d, tpl))
            parts.append(ids)
            indptr.append(indptr[-1] + len(ids))
    ids = np.array([i for p in parts for i in p], dtype=np.int64)
    gold = None
    if all(t.head is not None for t in sent.tokens):
        gold = [t.head for t in sent.tokens]
    return TreeInstance(n, FeatureTable(np.array(indptr), ids, np.ones(ids.size)), gold)


def extract_features(raw: RawSentence, templates, index: FeatureIndex, task: str, labels=None):
    if task == "chain":
        return extract_chain(raw, templates, index, labels)
    if task == "tree":
        return extract_tree(raw, templates, index)
    raise ValueError(f"unknown task {task!r}")


@dataclass
class Featurizer:
    """Templates, feature index and label inventory for one task."""

    task: str
    templates: ChainTemplates | TreeTemplates
    index: FeatureIndex = field(default_factory=FeatureIndex)
    labels: list[str] | None = None

    @classmethod
    def fit(cls, task: str, sentences: Sequence[RawSentence], templates=None) -> "Featurizer":
        """Build the index from a training set (first pass) and freeze it."""
        if templates is None:
            templates = ChainTemplates() if task == "chain" else TreeTemplates()
        labels = label_index(sentences) if task == "chain" else None
        feat = cls(task, templates, FeatureIndex(), labels)
        for s in sentences:
            feat._observe(s)
        feat.index.freeze()
        return feat

    def _observe(self, sent: RawSentence) -> None:
        if self.task == "chain":
            for obs in chain_observations(sent, self.templates):
                self.index.lookup(obs)
        else:
            extract_tree(sent, self.templates, self.index)

    @property
    def dimension(self) -> int:
        if self.task == "chain":
            return chain_dimension(len(self.index), len(self.labels))
        return len(self.index)

    def transform(self, sentences: Sequence[RawSentence]) -> list:
        return [extract_features(s, self.templates, self.index, self.task, self.labels) for s in sentences]


# -- synthetic corpora ------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Seeded generator settings.

    Chain mode samples NER-style BIO tag sequences from a fixed Markov
    chain over ``n_types`` entity types. Each label owns a vocabulary and a
    POS tag; with probability ``noise`` a token's word comes from a shared
    ambiguous pool and, independently, its POS is drawn at random.

    Tree mode samples POS sequences and derives gold trees from a seeded
    POS-pair affinity plus distance preference, perturbed by ``noise``.
    """

    mode: str = "chain"
    n_train: int = 1000
    n_dev: int = 200
    n_test: int = 200
    min_len: int = 5
    max_len: int = 20
    n_types: int = 3
    vocab_size: int = 300
    n_pos: int = 8
    noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("chain", "tree"):
            raise ValueError("mode must be 'chain' or 'tree'")
        if min(self.n_train, self.n_dev, self.n_test) < 0 or self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("sizes must be positive")
        if self.n_types < 1 or self.vocab_size < 1 or self.n_pos < 2:
            raise ValueError("inventory sizes must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")


_SYLLABLES = ["ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "zi", "da", "fe", "go", "hu", "ji", "pa", "qui", "ro", "su", "ba", "ce"]


def _word(rng, prefix: str, suffix: str, capital: bool) -> str:
    k = int(rng.integers(1, 3))
    body = prefix + "".join(rng.choice(_SYLLABLES, size=k)) + suffix
    return body.capitalize() if capital else body


class ChainGenerator:
    """The fixed-parameter generative chain behind chain-mode corpora."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 1])
        types = [f"T{i}" for i in range(cfg.n_types)]
        self.labels = [OUTSIDE] + [f"{p}-{t}" for t in types for p in ("B", "I")]
        L = len(self.labels)
        self.L = L
        # BIO-valid transitions: I-X only after B-X or I-X
        trans = np.zeros((L, L))
        for i, a in enumerate(self.labels):
            ap, at = split_tag(a)
            for j, b in enumerate(self.labels):
                bp, bt = split_tag(b)
                if bp == "I" and not (ap in ("B", "I") and at == bt):
                    continue
                trans[i, j] = rng.uniform(0.2, 1.0)
            if ap == OUTSIDE:
                trans[i, 0] *= 4.0
            elif ap == "B":
                trans[i, self.labels.index(f"I-{at}")] *= 2.0
        self.trans = trans / trans.sum(axis=1, keepdims=True)
        start = np.array([4.0 if split_tag(lab)[0] != "I" else 0.0 for lab in self.labels])
        start[0] = 8.0
        self.start = start / start.sum()

        self.pos_tags = [f"P{i}" for i in range(L)]
        self.vocab = []
        for i, lab in enumerate(self.labels):
            prefix, kind = split_tag(lab)
            suffix = "" if kind is None else ["son", "burg", "corp", "ix", "ard", "ova"][int(kind[1:]) % 6] + ("a" if prefix == "I" else "")
            capital = kind is not None
            words = {_word(rng, f"{lab[0].lower()}{i}", suffix, capital) for _ in range(cfg.vocab_size * 3)}
            words = sorted(words)[: cfg.vocab_size]
            rng.shuffle(words)
            self.vocab.append(words)
        shared = {_word(rng, "x", "", bool(rng.integers(0, 2))) for _ in range(cfg.vocab_size * 3)}
        self.shared = sorted(shared)[: cfg.vocab_size]
        ranks = np.arange(1, cfg.vocab_size + 1, dtype=float)
        zipf = 1.0 / ranks
        self.zipf = zipf / zipf.sum()

    def sample(self, rng, length: int) -> RawSentence:
        cfg = self.cfg
        tokens = []
        y = int(rng.choice(self.L, p=self.start))
        for p in range(length):
            if p > 0:
                y = int(rng.choice(self.L, p=self.trans[y]))
            if rng.random() < cfg.noise:
                words = self.shared
                word = words[int(rng.choice(len(words), p=self.zipf[: len(words)] / self.zipf[: len(words)].sum()))]
            else:
                words = self.vocab[y]
                word = words[int(rng.choice(len(words), p=self.zipf[: len(words)] / self.zipf[: len(words)].sum()))]
            pos = self.pos_tags[y] if rng.random() >= cfg.noise else self.pos_tags[int(rng.integers(self.L))]
            tokens.append(Token(word, pos, self.labels[y]))
        return RawSentence(tokens)

    def position_marginal(self, p: int) -> np.ndarray:
        dist = self.start.copy()
        for _ in range(p):
            dist = dist @ self.trans
        return dist


class TreeGenerator:
    """POS-pair affinities and a distance preference define gold trees."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 2])
        self.pos_tags = [f"P{i}" for i in range(cfg.n_pos)]
        self.affinity = rng.normal(0.0, 2.0, size=(cfg.n_pos + 1, cfg.n_pos))
        self.direction = rng.normal(0.0, 1.0, size=(cfg.n_pos, cfg.n_pos))
        self.vocab = []
        for i in range(cfg.n_pos):
            words = sorted({_word(rng, f"t{i}", "", False) for _ in range(cfg.vocab_size * 3)})[: cfg.vocab_size]
            rng.shuffle(words)
            self.vocab.append(words)
        self.pos_prior = rng.dirichlet(np.ones(cfg.n_pos) * 2.0)

    def sample(self, rng, length: int) -> RawSentence:
        from .tree import cle_decode

        cfg = self.cfg
        pos = rng.choice(cfg.n_pos, size=length, p=self.pos_prior)
        w = np.full((length + 1, length + 1), -np.inf)
        for d in range(1, length + 1):
            dp = pos[d - 1]
            w[0, d] = self.affinity[cfg.n_pos, dp]
            for h in range(1, length + 1):
                if h == d:
                    continue
                hp = pos[h - 1]
                sign = 1.0 if d > h else -1.0
                w[h, d] = self.affinity[hp, dp] + sign * self.direction[hp, dp] - 0.7 * abs(h - d)
        w[np.isfinite(w)] += cfg.noise * 3.0 * rng.gumbel(size=int(np.isfinite(w).sum()))
        heads = cle_decode(w).heads
        tokens = []
        for i in range(length):
            words = self.vocab[pos[i]]
            word = words[int(rng.integers(len(words)))]
            tokens.append(Token(word, self.pos_tags[pos[i]], None, int(heads[i])))
        return RawSentence(tokens)


def generate_synthetic(cfg: SynthConfig) -> tuple[list[RawSentence], list[RawSentence], list[RawSentence]]:
    """(train, dev, test) corpora with gold annotation, deterministic in ``cfg.seed``."""
    gen = ChainGenerator(cfg) if cfg.mode == "chain" else TreeGenerator(cfg)
    rng = np.random.default_rng([cfg.seed, 3])
    total = cfg.n_train + cfg.n_dev + cfg.n_test
    lengths = rng.integers(cfg.min_len, cfg.max_len + 1, size=total)
    sents = [gen.sample(rng, int(n)) for n in lengths]
    a, b = cfg.n_train, cfg.n_train + cfg.n_dev
    return sents[:a], sents[a:b], sents[b:]


def read_corpus(path, task: str) -> list[RawSentence]:
    path = Path(path)
    if task == "chain":
        return read_conll_chain(path)
    return read_conll_dependency(path)


def write_corpus(sentences, path, task: str) -> None:
    if task == "chain":
        write_conll_chain(sentences, path)
    else:
        write_conll_dependency(sentences, path)
