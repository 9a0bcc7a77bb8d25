"""Corpus-level text metrics, ranking AUC, and the evaluation report table.

Implemented from the standard definitions: corpus BLEU with pooled clipped
n-gram counts and a closest-reference-length brevity penalty, ROUGE-L as the
corpus mean of the best-reference LCS F-measure (beta 1.2), CIDEr with raw
term-frequency weighting and log(N/df) inverse document frequency averaged
over orders 1..4 and scaled by 10, and the rank-based (Mann-Whitney) AUC
with half credit for ties.  Sentence-set diversity is summarized by the
distinct fraction and the fraction absent from a training corpus.
"""

import math
from collections import Counter
from dataclasses import dataclass

from .dataset import tokenize


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_corpus(candidates, references):
    if not candidates:
        raise MetricError("empty candidate corpus")
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    if any(not refs for refs in references):
        raise MetricError("every candidate needs at least one reference")


def bleu_scores(candidates, references, max_order=4):
    """Corpus BLEU-1..BLEU-k as a tuple; counts pooled before dividing."""
    _check_corpus(candidates, references)
    clipped = [0] * max_order
    total = [0] * max_order
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        ct = tokenize(cand)
        rts = [tokenize(r) for r in refs]
        cand_len += len(ct)
        ref_len += min((abs(len(rt) - len(ct)), len(rt)) for rt in rts)[1]
        for n in range(1, max_order + 1):
            counts = _ngrams(ct, n)
            limit = Counter()
            for rt in rts:
                limit |= _ngrams(rt, n)
            clipped[n - 1] += sum(min(c, limit[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())
    if cand_len == 0:
        return tuple(0.0 for _ in range(max_order))
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    for k in range(1, max_order + 1):
        precisions = [clipped[i] / total[i] if total[i] else 0.0 for i in range(k)]
        if min(precisions) <= 0.0:
            scores.append(0.0)
        else:
            scores.append(brevity * math.exp(sum(math.log(p) for p in precisions) / k))
    return tuple(scores)


def _lcs_length(a, b):
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = row[j]
            row[j] = prev + 1 if x == y else max(row[j - 1], cur)
            prev = cur
    return row[-1]


def rouge_l(candidates, references, beta=1.2):
    """Mean over the corpus of the best-reference LCS F-measure."""
    _check_corpus(candidates, references)
    total = 0.0
    for cand, refs in zip(candidates, references):
        ct = tokenize(cand)
        best = 0.0
        for ref in refs:
            rt = tokenize(ref)
            lcs = _lcs_length(ct, rt)
            if lcs == 0:
                continue
            prec = lcs / len(ct)
            rec = lcs / len(rt)
            f = (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec)
            best = max(best, f)
        total += best
    return total / len(candidates)


def cider(candidates, references, max_order=4):
    """Consensus score: idf-weighted n-gram cosine, averaged, times ten."""
    _check_corpus(candidates, references)
    n_docs = len(candidates)
    if n_docs < 2:
        raise MetricError("consensus scoring is undefined for a single-document corpus")
    doc_freq = [Counter() for _ in range(max_order)]
    ref_tokens = [[tokenize(r) for r in refs] for refs in references]
    for rts in ref_tokens:
        for n in range(max_order):
            seen = set()
            for rt in rts:
                seen.update(_ngrams(rt, n + 1))
            doc_freq[n].update(seen)

    def weighted(tokens, n):
        return {g: c * math.log(n_docs / max(doc_freq[n][g], 1))
                for g, c in _ngrams(tokens, n + 1).items()}

    def cosine(u, v):
        num = sum(w * v[g] for g, w in u.items() if g in v)
        den = math.sqrt(sum(w * w for w in u.values())) * \
            math.sqrt(sum(w * w for w in v.values()))
        return num / den if den > 0.0 else 0.0

    score = 0.0
    for cand, rts in zip(candidates, ref_tokens):
        ct = tokenize(cand)
        order_mean = 0.0
        for n in range(max_order):
            cu = weighted(ct, n)
            order_mean += sum(cosine(cu, weighted(rt, n)) for rt in rts) / len(rts)
        score += order_mean / max_order
    return 10.0 * score / n_docs


def auc(scores, labels):
    """Probability a positive outranks a negative; ties count half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    if not pos or not neg:
        raise MetricError("ranking needs at least one sample of each class")
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def _normalize(sentence):
    return " ".join(tokenize(sentence))


def unique_ratio(sentences):
    if not sentences:
        raise MetricError("no sentences to summarize")
    return len({_normalize(s) for s in sentences}) / len(sentences)


def novel_ratio(sentences, training_sentences):
    if not sentences:
        raise MetricError("no sentences to summarize")
    seen = {_normalize(s) for s in training_sentences}
    return sum(_normalize(s) not in seen for s in sentences) / len(sentences)


REPORT_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider",
               "unique_ratio", "novel_ratio", "auc")


@dataclass(frozen=True)
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rougeL: float
    cider: float
    unique_ratio: float
    novel_ratio: float
    auc: float

    def to_tsv(self):
        return "".join(f"{k}\t{getattr(self, k):.6f}\n" for k in REPORT_KEYS)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_tsv())

    @classmethod
    def read(cls, path):
        values = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                key, value = line.rstrip("\n").split("\t")
                values[key] = float(value)
        if tuple(values) != REPORT_KEYS:
            raise ValueError(f"{path}: malformed report table")
        return cls(**values)


def build_report(candidates, references, training_sentences, scores, labels):
    """Assemble the full table from generated text and ranking scores."""
    b1, b2, b3, b4 = bleu_scores(candidates, references)
    return EvalReport(
        bleu1=b1, bleu2=b2, bleu3=b3, bleu4=b4,
        rougeL=rouge_l(candidates, references),
        cider=cider(candidates, references),
        unique_ratio=unique_ratio(candidates),
        novel_ratio=novel_ratio(candidates, training_sentences),
        auc=auc(scores, labels),
    )
