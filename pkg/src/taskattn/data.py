"""Corpus loading, splitting, embeddings, and the planted-lexicon synthetic corpus."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from taskattn.encoder import Vocab

PathLike = Union[str, Path]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and at punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TextExample:
    tokens: list[str]
    label: int
    task: int = 0


@dataclass
class LabeledSequence:
    tokens: list[str]
    tags: list[int]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise DataError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")


@dataclass
class TaskData:
    """One classification task: label names plus train/dev/test examples."""

    name: str
    labels: list[str]
    train: list[TextExample] = field(default_factory=list)
    dev: list[TextExample] = field(default_factory=list)
    test: list[TextExample] = field(default_factory=list)


@dataclass
class LabelingData:
    name: str
    tags: list[str]
    train: list[LabeledSequence] = field(default_factory=list)
    dev: list[LabeledSequence] = field(default_factory=list)
    test: list[LabeledSequence] = field(default_factory=list)


def load_classification(path: PathLike, task: int = 0,
                        labels: Optional[list[str]] = None) -> tuple[list[TextExample], list[str]]:
    """Read a JSONL file of ``{"text": ..., "label": ...}`` records.

    Labels are interned in first-seen order, extending ``labels`` when given so
    that several files of one task share an id mapping. Extra fields are ignored.
    """
    labels = [] if labels is None else labels
    index = {name: i for i, name in enumerate(labels)}
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict) or "text" not in record or "label" not in record:
                raise DataError(f"{path}:{lineno}: record needs 'text' and 'label' fields")
            tokens = tokenize(str(record["text"]))
            if not tokens:
                raise DataError(f"{path}:{lineno}: empty text")
            label = str(record["label"])
            if label not in index:
                index[label] = len(labels)
                labels.append(label)
            examples.append(TextExample(tokens, index[label], task))
    return examples, labels


def write_classification(path: PathLike, examples: Sequence[TextExample],
                         labels: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": " ".join(ex.tokens), "label": labels[ex.label]}) + "\n")


def split(dataset: Sequence, ratios: Sequence[float] = (0.70, 0.10, 0.20),
          seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle, then contiguous train/dev/test blocks.

    Dev and test sizes are floored; the remainder goes to train.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_dev = int(np.floor(n * ratios[1] + 1e-9))
    n_test = int(np.floor(n * ratios[2] + 1e-9))
    n_train = n - n_dev - n_test
    items = [dataset[i] for i in order]
    return items[:n_train], items[n_train:n_train + n_dev], items[n_train + n_dev:]


def shuffle_labels(examples: Sequence[TextExample], seed: int = 0) -> list[TextExample]:
    """Copies of ``examples`` with their labels permuted (a no-signal control)."""
    perm = np.random.default_rng(seed).permutation(len(examples))
    return [TextExample(list(ex.tokens), examples[j].label, ex.task)
            for ex, j in zip(examples, perm)]


def load_embeddings(path: PathLike, vocab: Vocab, dim: int = 200, seed: int = 0,
                    init_range: float = 0.1) -> np.ndarray:
    """Embedding matrix for ``vocab`` from a plain-text ``token v1 ... v_dim`` file.

    Rows for tokens missing from the file (and PAD/UNK) are uniform in
    ``[-init_range, init_range]``, drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-init_range, init_range, size=(len(vocab), dim))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(f"{path}:{lineno}: token {token!r} has {len(values)} values, "
                                f"expected {dim}")
            idx = vocab.stoi.get(token)
            if idx is None or idx < 2:
                continue
            try:
                matrix[idx] = np.array(values, dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value for token {token!r}") from None
    return matrix


CONLL_COLUMNS = {"pos": 1, "chunk": 2}


def load_conll(path: PathLike, column: str = "chunk",
               tags: Optional[list[str]] = None) -> tuple[list[LabeledSequence], list[str]]:
    """Read CoNLL-2000 ``token POS chunk`` rows with blank lines between sentences."""
    if column not in CONLL_COLUMNS:
        raise ValueError(f"column must be one of {sorted(CONLL_COLUMNS)}, got {column!r}")
    col = CONLL_COLUMNS[column]
    tags = [] if tags is None else tags
    index = {t: i for i, t in enumerate(tags)}
    sequences: list[LabeledSequence] = []
    tokens: list[str] = []
    ids: list[int] = []

    def flush():
        if tokens:
            sequences.append(LabeledSequence(list(tokens), list(ids)))
            tokens.clear()
            ids.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                flush()
                continue
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, found {len(fields)}")
            tag = fields[col]
            if tag not in index:
                index[tag] = len(tags)
                tags.append(tag)
            tokens.append(fields[0].lower())
            ids.append(index[tag])
    flush()
    return sequences, tags


def write_conll(path: PathLike, sequences: Sequence[LabeledSequence], tags: Sequence[str]) -> None:
    """Write sequences with the tag repeated in the POS and chunk columns."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            for tok, t in zip(seq.tokens, seq.tags):
                fh.write(f"{tok} {tags[t]} {tags[t]}\n")
            fh.write("\n")


# -- synthetic corpus ---------------------------------------------------------

SENTIMENT_LABELS = ["neg", "pos"]
SYNTHETIC_TAGS = ["FILL", "NOISE", "DOM", "POS", "NEG"]


@dataclass
class SyntheticTaskConfig:
    n_domains: int = 4
    domain_lexicon: int = 8  # words per domain
    sentiment_lexicon: int = 16  # shared; half positive, half negative
    filler_lexicon: int = 6
    noise_lexicon: int = 24
    min_len: int = 6
    max_len: int = 12
    noise_ratio: float = 0.5  # share of free slots given to noise words rather than filler
    conflict_rate: float = 0.0  # chance a sentence also carries one opposite-polarity word
    n_train: int = 500
    n_dev: int = 100
    n_test: int = 100
    n_labeling_train: int = 500
    n_labeling_dev: int = 100
    n_labeling_test: int = 100
    token_space: int = 10_000
    seed: int = 0

    def validate(self) -> None:
        if self.n_domains < 1:
            raise ValueError("n_domains must be at least 1")
        if min(self.domain_lexicon, self.filler_lexicon, self.noise_lexicon) < 1:
            raise ValueError("every lexicon needs at least one word")
        if self.sentiment_lexicon < 2 or self.sentiment_lexicon % 2:
            raise ValueError("sentiment_lexicon must be an even number >= 2")
        if not 0.0 <= self.noise_ratio <= 1.0 or not 0.0 <= self.conflict_rate <= 1.0:
            raise ValueError("noise_ratio and conflict_rate must lie in [0, 1]")
        # up to 2 domain words and 3 sentiment words are planted
        if self.min_len < 5 or self.max_len < self.min_len:
            raise ValueError("need 5 <= min_len <= max_len")
        total = (self.n_domains * self.domain_lexicon + self.sentiment_lexicon
                 + self.filler_lexicon + self.noise_lexicon)
        if total > self.token_space:
            raise ValueError(f"lexicons need {total} distinct tokens but token_space is "
                             f"{self.token_space}")


@dataclass
class SyntheticCorpus:
    config: SyntheticTaskConfig
    domains: list[TaskData]
    labeling: LabelingData
    lexicons: dict[str, list[str]]

    def lexicon_of(self) -> dict[str, str]:
        """Token -> lexicon name (``domainK``, ``pos``, ``neg``, ``filler``, ``noise``)."""
        return {tok: name for name, words in self.lexicons.items() for tok in words}

    @property
    def sentiment_words(self) -> set[str]:
        return set(self.lexicons["pos"]) | set(self.lexicons["neg"])

    @property
    def domain_words(self) -> set[str]:
        return {t for name, ws in self.lexicons.items() if name.startswith("domain") for t in ws}


def _lexicons(cfg: SyntheticTaskConfig) -> dict[str, list[str]]:
    half = cfg.sentiment_lexicon // 2
    lex = {f"domain{k}": [f"d{k}w{i}" for i in range(cfg.domain_lexicon)]
           for k in range(cfg.n_domains)}
    lex["pos"] = [f"pos{i}" for i in range(half)]
    lex["neg"] = [f"neg{i}" for i in range(half)]
    lex["filler"] = [f"f{i}" for i in range(cfg.filler_lexicon)]
    lex["noise"] = [f"n{i}" for i in range(cfg.noise_lexicon)]
    return lex


def _sentence(rng: np.random.Generator, cfg: SyntheticTaskConfig, lex: dict[str, list[str]],
              domain: int) -> tuple[list[str], int]:
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    label = int(rng.integers(2))
    major, minor = (lex["pos"], lex["neg"]) if label == 1 else (lex["neg"], lex["pos"])
    planted = [str(rng.choice(lex[f"domain{domain}"])) for _ in range(int(rng.integers(1, 3)))]
    if rng.random() < cfg.conflict_rate:
        planted += [str(rng.choice(major)), str(rng.choice(major)), str(rng.choice(minor))]
    else:
        planted += [str(rng.choice(major)) for _ in range(int(rng.integers(1, 3)))]
    free = length - len(planted)
    for _ in range(max(free, 0)):
        pool = lex["noise"] if rng.random() < cfg.noise_ratio else lex["filler"]
        planted.append(str(rng.choice(pool)))
    order = rng.permutation(len(planted))
    return [planted[i] for i in order], label


def gen_synthetic(config: SyntheticTaskConfig) -> SyntheticCorpus:
    """K sentiment tasks over disjoint domain lexicons plus a lexicon-tagging task.

    Every sentence holds one or two words of its domain's lexicon and sentiment
    words from the shared lexicon whose majority polarity is the label; the
    remaining slots are filler or noise words. The tagging task labels each
    token with the lexicon it was drawn from.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    lex = _lexicons(config)
    domains = []
    for k in range(config.n_domains):
        splits = []
        for n in (config.n_train, config.n_dev, config.n_test):
            splits.append([TextExample(*_sentence(rng, config, lex, k), task=k) for _ in range(n)])
        domains.append(TaskData(f"dom{k}", list(SENTIMENT_LABELS), *splits))
    origin = {tok: name for name, words in lex.items() for tok in words}
    tag_of = {"filler": 0, "noise": 1, "pos": 3, "neg": 4}
    labeling = LabelingData("lextag", list(SYNTHETIC_TAGS))
    for part, n in (("train", config.n_labeling_train), ("dev", config.n_labeling_dev),
                    ("test", config.n_labeling_test)):
        seqs = []
        for _ in range(n):
            tokens, _ = _sentence(rng, config, lex, int(rng.integers(config.n_domains)))
            seqs.append(LabeledSequence(tokens, [tag_of.get(origin[t], 2) for t in tokens]))
        setattr(labeling, part, seqs)
    return SyntheticCorpus(config, domains, labeling, lex)


def oracle_sentiment(tokens: Sequence[str], corpus: SyntheticCorpus) -> int:
    """Majority polarity of the planted sentiment words."""
    pos = sum(t in set(corpus.lexicons["pos"]) for t in tokens)
    neg = sum(t in set(corpus.lexicons["neg"]) for t in tokens)
    return int(pos > neg)


def oracle_domain(tokens: Sequence[str], corpus: SyntheticCorpus) -> int:
    origin = corpus.lexicon_of()
    for t in tokens:
        name = origin.get(t, "")
        if name.startswith("domain"):
            return int(name[len("domain"):])
    raise DataError("sentence carries no domain word")


def oracle_tags(tokens: Sequence[str], corpus: SyntheticCorpus) -> list[int]:
    origin = corpus.lexicon_of()
    tag_of = {"filler": 0, "noise": 1, "pos": 3, "neg": 4}
    return [tag_of.get(origin[t], 2) for t in tokens]


def write_synthetic(corpus: SyntheticCorpus, out_dir: PathLike) -> list[Path]:
    """Write ``<domain>.{train,dev,test}.jsonl`` and ``lextag.{train,dev,test}.conll``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task in corpus.domains:
        for part in ("train", "dev", "test"):
            p = out / f"{task.name}.{part}.jsonl"
            write_classification(p, getattr(task, part), task.labels)
            written.append(p)
    lab = corpus.labeling
    for part in ("train", "dev", "test"):
        p = out / f"{lab.name}.{part}.conll"
        write_conll(p, getattr(lab, part), lab.tags)
        written.append(p)
    return written
