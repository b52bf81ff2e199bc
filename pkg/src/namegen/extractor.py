"""Stage-1 keyword prediction over graph nodes plus comparison strategies
(random / TextRank / TF-IDF / reference)."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import nncore as nn
from .codegraph import CodeGraph, MethodRecord, body_subtokens
from .errors import DataError
from .ggnn import EncodedGraph, GgnnConfig, GraphEncoder
from .metrics import Score, score_pair
from .vocab import NO_KEYWORD, Vocab


@dataclass
class KeywordSet:
    keywords: list[str]
    provenance: str
    scores: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.keywords:
            self.keywords = [NO_KEYWORD]
            self.scores = [0.0]
        if len(self.scores) != len(self.keywords):
            self.scores = [0.0] * len(self.keywords)
        if len(set(self.keywords)) != len(self.keywords):
            raise DataError("duplicate keywords in KeywordSet")


def _dedupe_in_order(pairs: list[tuple[str, float]]) -> KeywordSet:
    seen = {}
    for s, score in pairs:
        if s not in seen:
            seen[s] = score
    return KeywordSet(list(seen), "", [seen[s] for s in seen])


def source_order_keys(graph: CodeGraph) -> list[tuple[int, int]]:
    """Sort key placing every node at its source position: token nodes by
    token index, subtoken nodes grouped under their parent token."""
    parent = {dst: src for src, dst in graph.edges.get("sub_token", [])}
    keys = []
    for i in range(len(graph.nodes)):
        anchor = parent.get(i, i)
        keys.append((anchor, i))
    return keys


class ExtractorModel:
    def __init__(self, store: nn.ParamStore, vocab_size: int, config: GgnnConfig):
        d = config.hidden_dim
        self.config = config
        self.embedding = store.add("embed", (vocab_size, d), init="uniform")
        self.encoder = GraphEncoder(store, config, self.embedding, prefix="extractor")
        self.W_e = store.add("extractor.head.W_e", (d, 1))
        self.b_e = store.add("extractor.head.b_e", (1, 1), init="zeros")

    def predict_keyword_probs(self, graph: CodeGraph, vocab: Vocab) -> tuple[EncodedGraph, nn.Tensor]:
        enc = self.encoder.encode(graph, vocab)
        probs = nn.sigmoid(enc.h @ self.W_e + self.b_e)
        return enc, probs


def extractor_loss(
    probs: nn.Tensor,
    labels: list[int] | np.ndarray,
    pos_weight: float | None = None,
    variant: str = "full",
) -> nn.Tensor:
    """Mean binary cross entropy over nodes. variant='positive-only' keeps
    just the positive-label term (degenerate; for study only)."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if y.shape[0] != probs.data.shape[0]:
        raise DataError(f"labels ({y.shape[0]}) vs probs ({probs.data.shape[0]}) length mismatch")
    p = nn.clamp(probs, 1e-12, 1.0 - 1e-12)
    yt = nn.Tensor(y)
    w = 1.0 if pos_weight is None else pos_weight
    pos = yt * nn.log(p) * w
    if variant == "positive-only":
        total = pos
    else:
        total = pos + (1.0 - yt) * nn.log(1.0 - p)
    return -nn.tmean(total)


def batch_pos_weight(label_lists: list[list[int]]) -> float | None:
    pos = sum(sum(ls) for ls in label_lists)
    neg = sum(len(ls) for ls in label_lists) - pos
    if pos == 0:
        return None
    return neg / pos


def select_keywords(
    probs: np.ndarray,
    graph: CodeGraph,
    threshold: float = 0.5,
    fallback_k: int = 4,
) -> KeywordSet:
    """Candidate nodes above threshold; if none, top-k candidates by score.
    Deduplicated by surface, first source occurrence first."""
    cand = graph.candidate_indices()
    if not graph.lexical_indices():
        raise DataError("graph has no lexical nodes")
    if not cand:
        return KeywordSet([], "extractor")
    p = np.asarray(probs).reshape(-1)
    keys = source_order_keys(graph)
    cand = sorted(cand, key=lambda i: keys[i])
    chosen = [i for i in cand if p[i] > threshold]
    if not chosen:
        by_score = sorted(cand, key=lambda i: (-p[i], keys[i]))[:fallback_k]
        chosen = sorted(by_score, key=lambda i: keys[i])
    ks = _dedupe_in_order([(graph.nodes[i].surface.lower(), float(p[i])) for i in chosen])
    ks.provenance = "extractor"
    return ks


# ---------------------------------------------------------------------------
# comparison strategies


def baseline_random(record: MethodRecord, k: int = 4, seed: int = 0) -> KeywordSet:
    subs = list(dict.fromkeys(body_subtokens(record)))
    subs = [s for s in subs if not s.isdigit()]
    if not subs:
        return KeywordSet([], "random")
    rng = np.random.default_rng(seed)
    if len(subs) <= k:
        picked = subs
    else:
        idx = sorted(rng.choice(len(subs), size=k, replace=False))
        picked = [subs[i] for i in idx]
    return KeywordSet(picked, "random", [1.0] * len(picked))


def baseline_textrank(
    record: MethodRecord,
    k: int = 4,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> KeywordSet:
    seq = [s for s in body_subtokens(record) if not s.isdigit()]
    if not seq:
        return KeywordSet([], "textrank")
    words = list(dict.fromkeys(seq))
    index = {w: i for i, w in enumerate(words)}
    n = len(words)
    weight = np.zeros((n, n))
    for a, b in zip(seq, seq[1:]):  # window 2: adjacent pairs
        if a != b:
            i, j = index[a], index[b]
            weight[i, j] += 1.0
            weight[j, i] += 1.0
    out_sum = weight.sum(axis=1)
    scores = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        incoming = np.zeros(n)
        for j in range(n):
            if out_sum[j] > 0:
                incoming += scores[j] * weight[j] / out_sum[j]
        new = (1 - damping) / n + damping * incoming
        # dangling nodes keep only the teleport term; renormalize below
        if np.abs(new - scores).sum() < tol:
            scores = new
            break
        scores = new
    scores = scores / scores.sum()
    first_pos = {w: seq.index(w) for w in words}
    top = sorted(words, key=lambda w: (-scores[index[w]], first_pos[w]))[:k]
    top = sorted(top, key=lambda w: first_pos[w])
    return KeywordSet(top, "textrank", [float(scores[index[w]]) for w in top])


@dataclass
class TfidfStats:
    doc_freq: dict[str, int]
    num_docs: int

    @staticmethod
    def from_corpus(records: list[MethodRecord]) -> "TfidfStats":
        df: Counter = Counter()
        for rec in records:
            df.update(set(body_subtokens(rec)))
        return TfidfStats(dict(df), len(records))

    def idf(self, term: str) -> float:
        return math.log((self.num_docs + 1) / (self.doc_freq.get(term, 0) + 1)) + 1.0


def baseline_tfidf(stats: TfidfStats, record: MethodRecord, k: int = 4) -> KeywordSet:
    seq = [s for s in body_subtokens(record) if not s.isdigit()]
    if not seq:
        return KeywordSet([], "tfidf")
    counts = Counter(seq)
    total = len(seq)
    words = list(dict.fromkeys(seq))
    score = {w: counts[w] / total * stats.idf(w) for w in words}
    first_pos = {w: seq.index(w) for w in words}
    top = sorted(words, key=lambda w: (-score[w], first_pos[w]))[:k]
    top = sorted(top, key=lambda w: first_pos[w])
    return KeywordSet(top, "tfidf", [score[w] for w in top])


def reference_keywords(record: MethodRecord) -> KeywordSet:
    names = {s.lower() for s in record.name_subtokens}
    shared = [s for s in dict.fromkeys(body_subtokens(record)) if s in names]
    ks = KeywordSet(shared, "reference", [1.0] * len(shared))
    ks.provenance = "reference"
    return ks


def keyword_quality(keywords: KeywordSet, name_subtokens: list[str]) -> tuple[Score, Score, Score]:
    cand = [k for k in keywords.keywords if k != NO_KEYWORD]
    return score_pair(cand, [s.lower() for s in name_subtokens])
