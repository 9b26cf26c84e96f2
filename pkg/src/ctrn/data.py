"""Corpus ingestion: tokenization, vocabulary, embeddings, TSV datasets and batching."""

from __future__ import annotations

import re
import warnings
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from .encoder import OOV_ID, PAD_ID, EmbeddingTable
from .errors import LabelError, ParseError

PAD_TOKEN = "<pad>"
OOV_TOKEN = "<unk>"
YAHOO_LENGTH_RANGE = (5, 50)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token/id map with PAD at 0 and OOV at 1.

    Ids from 2 upward follow descending corpus frequency, ties broken
    lexicographically.
    """

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = [PAD_TOKEN, OOV_TOKEN]
        self.itos.extend(t for t in tokens if t not in (PAD_TOKEN, OOV_TOKEN))
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, sequences: Iterable[Iterable[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(tok for seq in sequences for tok in seq)
        ordered = sorted((t for t, c in counts.items() if c >= min_count),
                         key=lambda t: (-counts[t], t))
        return cls(ordered)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, OOV_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass(frozen=True)
class QAInstance:
    query_id: str
    question: tuple[str, ...]
    answer: tuple[str, ...]
    label: int


# --- files ---------------------------------------------------------------

def read_tsv(path, length_range: tuple[int, int] | None = None) -> list[QAInstance]:
    """Read ``query_id<TAB>label<TAB>question<TAB>answer`` lines.

    With ``length_range=(lo, hi)`` pairs whose question or answer falls outside
    ``lo..hi`` tokens are dropped.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", lineno)
            qid, label, question, answer = fields
            if label.strip() not in ("0", "1"):
                raise LabelError(f"line {lineno}: label must be 0 or 1, got {label!r}")
            q, a = tokenize(question), tokenize(answer)
            if not q or not a:
                raise ParseError("empty question or answer after tokenization", lineno)
            if length_range is not None:
                lo, hi = length_range
                if not (lo <= len(q) <= hi and lo <= len(a) <= hi):
                    continue
            out.append(QAInstance(qid, tuple(q), tuple(a), int(label)))
    return out


def write_tsv(path, instances: Iterable[QAInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(f"{inst.query_id}\t{inst.label}\t{' '.join(inst.question)}\t{' '.join(inst.answer)}\n")


def _oov_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    bound = 0.25 / np.sqrt(n)
    return rng.uniform(-bound, bound, size=n)


def random_embeddings(vocab: Vocabulary, n: int, seed: int = 0,
                      std: float | None = None) -> EmbeddingTable:
    """Frozen random table; ``std`` switches from the OOV uniform range to N(0, std^2)."""
    rng = np.random.default_rng(seed)
    table = np.zeros((len(vocab), n))
    for i in range(1, len(vocab)):
        table[i] = _oov_vector(rng, n) if std is None else rng.normal(0.0, std, size=n)
    return EmbeddingTable(table)


def load_embeddings(path, n: int, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Build a frozen table from a text file of ``token v1 ... vn`` lines.

    Vocabulary tokens missing from the file draw a seeded uniform vector in
    +-0.25/sqrt(n); PAD stays zero.
    """
    found: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != n + 1:
                raise ParseError(f"expected {n} values, got {len(parts) - 1}", lineno)
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx == PAD_ID:
                continue
            try:
                found[idx] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric embedding value", lineno) from None
    rng = np.random.default_rng(seed)
    table = np.zeros((len(vocab), n))
    for i in range(1, len(vocab)):
        # draw for every row so a row's random vector does not depend on the file
        rand = _oov_vector(rng, n)
        table[i] = found[i] if i in found else rand
    return EmbeddingTable(table)


# --- grouping and negatives ---------------------------------------------

def group_by_query(instances: Iterable[QAInstance]) -> dict[str, list[QAInstance]]:
    groups: dict[str, list[QAInstance]] = {}
    for inst in instances:
        groups.setdefault(inst.query_id, []).append(inst)
    return groups


def sample_negatives(positives: Sequence[QAInstance], pool: Sequence[QAInstance],
                     count: int = 4, seed: int = 0) -> list[QAInstance]:
    """Give every positive query ``count`` label-0 answers drawn from ``pool``.

    Pool entries sharing the query id are never drawn.  Draws are without
    replacement unless the eligible pool is too small.
    """
    rng = np.random.default_rng(seed)
    out = list(positives)
    if count == 0:
        return out
    seen = set()
    for inst in positives:
        if inst.label != 1 or inst.query_id in seen:
            continue
        seen.add(inst.query_id)
        eligible = [p for p in pool if p.query_id != inst.query_id]
        if not eligible:
            raise ValueError(f"no negatives available for query {inst.query_id}")
        replace = len(eligible) < count
        if replace:
            warnings.warn(f"pool of {len(eligible)} smaller than {count}; sampling with replacement",
                          stacklevel=2)
        picks = rng.choice(len(eligible), size=count, replace=replace)
        for j in picks:
            out.append(QAInstance(inst.query_id, inst.question, eligible[j].answer, 0))
    return out


# --- batching ------------------------------------------------------------

@dataclass
class SequenceBatch:
    q_ids: np.ndarray
    a_ids: np.ndarray
    q_len: np.ndarray
    a_len: np.ndarray
    labels: np.ndarray
    index: np.ndarray  # positions of the rows in the source instance list
    extra: np.ndarray | None = None

    @property
    def q_mask(self) -> np.ndarray:
        return np.arange(self.q_ids.shape[1])[None, :] < self.q_len[:, None]

    @property
    def a_mask(self) -> np.ndarray:
        return np.arange(self.a_ids.shape[1])[None, :] < self.a_len[:, None]

    def __len__(self) -> int:
        return len(self.labels)


def _pad(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lens.max())), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out, lens


def collate(instances: Sequence[QAInstance], vocab: Vocabulary, index=None,
            extra: np.ndarray | None = None) -> SequenceBatch:
    q, q_len = _pad([vocab.encode(x.question) for x in instances])
    a, a_len = _pad([vocab.encode(x.answer) for x in instances])
    labels = np.array([x.label for x in instances], dtype=np.int64)
    index = np.arange(len(instances)) if index is None else np.asarray(index)
    return SequenceBatch(q, a, q_len, a_len, labels, index, extra)


def make_batches(instances: Sequence[QAInstance], vocab: Vocabulary, batch_size: int,
                 seed: int | None = None, extra: np.ndarray | None = None) -> Iterator[SequenceBatch]:
    """Yield padded batches; ``seed=None`` keeps file order, otherwise a seeded permutation.

    The last partial batch is kept.  ``extra`` holds per-instance feature rows.
    """
    order = np.arange(len(instances))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(instances))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield collate([instances[i] for i in idx], vocab, idx,
                      None if extra is None else extra[idx])


# --- synthetic corpus ----------------------------------------------------

def synthetic_keyword_corpus(n_queries: int = 500, n_keywords: int = 20, n_filler: int = 200,
                             length: tuple[int, int] = (5, 9), negatives: int = 4,
                             seed: int = 0, prefix: str = "q") -> list[QAInstance]:
    """Toy ranking corpus where the positive answer repeats the question's keyword.

    Questions and answers draw filler from disjoint word lists, so the keyword
    is the only token a question can share with any answer.  Negatives are
    answers of other queries with a different keyword, which makes the corpus
    separable by word overlap.
    """
    rng = np.random.default_rng(seed)
    keywords = [f"key{i}" for i in range(n_keywords)]
    filler = {"q": [f"qw{i}" for i in range(n_filler)], "a": [f"aw{i}" for i in range(n_filler)]}

    def sentence(kw, side):
        n = int(rng.integers(length[0], length[1] + 1))
        toks = [filler[side][j] for j in rng.integers(0, n_filler, size=n - 1)]
        toks.insert(int(rng.integers(0, n)), kw)
        return tuple(toks)

    kw_of = {}
    positives = []
    for i in range(n_queries):
        qid = f"{prefix}{i:04d}"
        kw = keywords[int(rng.integers(0, n_keywords))]
        kw_of[qid] = kw
        positives.append(QAInstance(qid, sentence(kw, "q"), sentence(kw, "a"), 1))

    out = []
    for inst in positives:
        eligible = [p for p in positives if kw_of[p.query_id] != kw_of[inst.query_id]]
        out.extend(sample_negatives([inst], eligible, negatives, seed=int(rng.integers(0, 2**31))))
    return out
