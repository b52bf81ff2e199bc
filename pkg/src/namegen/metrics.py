"""ROUGE-1/2/L over lowercase name subtokens, per example and corpus level."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

TEMPLATE_PREFIXES = ("get", "set", "is")
TEMPLATE_NAMES = ({"to", "string"}, {"equals"}, {"hash", "code"})


@dataclass
class Score:
    precision: float
    recall: float
    f1: float


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ngrams(seq: list[str], n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int) -> Score:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    if not cand or not ref:
        return Score(0.0, 0.0, 0.0)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    p = overlap / sum(cand.values())
    r = overlap / sum(ref.values())
    return Score(p, r, _f1(p, r))


def lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> Score:
    if not candidate or not reference:
        return Score(0.0, 0.0, 0.0)
    ell = lcs_length(candidate, reference)
    p = ell / len(candidate)
    r = ell / len(reference)
    return Score(p, r, _f1(p, r))


@dataclass
class RougeReport:
    rouge1: Score
    rouge2: Score
    rougel: Score
    count: int = 0
    exact_match: float = 0.0
    by_shared_bucket: dict = field(default_factory=dict)
    by_template: dict = field(default_factory=dict)

    def format(self) -> str:
        lines = [
            f"examples: {self.count}",
            f"exact-match: {self.exact_match:.4f}",
        ]
        for label, s in (("ROUGE-1", self.rouge1), ("ROUGE-2", self.rouge2),
                         ("ROUGE-L", self.rougel)):
            lines.append(f"{label}: P={s.precision:.4f} R={s.recall:.4f} F1={s.f1:.4f}")
        if self.by_shared_bucket:
            lines.append("by shared-token bucket (ROUGE-1 F1 / count):")
            for k in ("0", "1", "2", "3", ">=4"):
                if k in self.by_shared_bucket:
                    f1, n = self.by_shared_bucket[k]
                    lines.append(f"  {k}: {f1:.4f} / {n}")
        if self.by_template:
            lines.append("by method class (ROUGE-1 F1 / count):")
            for k in ("template", "other"):
                if k in self.by_template:
                    f1, n = self.by_template[k]
                    lines.append(f"  {k}: {f1:.4f} / {n}")
        return "\n".join(lines) + "\n"


def score_pair(candidate: list[str], reference: list[str]) -> tuple[Score, Score, Score]:
    return (rouge_n(candidate, reference, 1),
            rouge_n(candidate, reference, 2),
            rouge_l(candidate, reference))


def is_template_name(name_subtokens: list[str]) -> bool:
    if name_subtokens and name_subtokens[0] in TEMPLATE_PREFIXES:
        return True
    return set(name_subtokens) in TEMPLATE_NAMES


def _mean(scores: list[Score]) -> Score:
    if not scores:
        return Score(0.0, 0.0, 0.0)
    n = len(scores)
    return Score(sum(s.precision for s in scores) / n,
                 sum(s.recall for s in scores) / n,
                 sum(s.f1 for s in scores) / n)


def evaluate_corpus(
    predictions: dict[str, list[str]],
    references: dict[str, list[str]],
    shared_counts: dict[str, int] | None = None,
) -> RougeReport:
    """Macro-average ROUGE over examples keyed by method id, with optional
    breakdowns by shared-token bucket and template-method class."""
    if set(predictions) != set(references):
        missing = sorted(set(references) - set(predictions))[:3]
        extra = sorted(set(predictions) - set(references))[:3]
        raise DataError(f"prediction/reference id mismatch: missing={missing} extra={extra}")
    r1s, r2s, rls = [], [], []
    exact = 0
    bucket_f1: dict[str, list[float]] = {}
    template_f1: dict[str, list[float]] = {}
    for mid in sorted(predictions):
        cand, ref = predictions[mid], references[mid]
        s1, s2, sl = score_pair(cand, ref)
        r1s.append(s1)
        r2s.append(s2)
        rls.append(sl)
        if cand == ref:
            exact += 1
        if shared_counts is not None and mid in shared_counts:
            k = shared_counts[mid]
            bucket = str(k) if k < 4 else ">=4"
            bucket_f1.setdefault(bucket, []).append(s1.f1)
        cls = "template" if is_template_name(ref) else "other"
        template_f1.setdefault(cls, []).append(s1.f1)
    n = len(predictions)
    if n == 0:
        raise DataError("no predictions to evaluate")
    return RougeReport(
        rouge1=_mean(r1s), rouge2=_mean(r2s), rougel=_mean(rls),
        count=n, exact_match=exact / n,
        by_shared_bucket={k: (sum(v) / len(v), len(v)) for k, v in bucket_f1.items()},
        by_template={k: (sum(v) / len(v), len(v)) for k, v in template_f1.items()},
    )
