"""Word-overlap metrics over a corpus of (candidate, references) items.

Tokens are pre-split; every function is pure and order-insensitive over
items. A corpus is a list of (candidate: list[str], references:
list[list[str]]) pairs with at least one reference per item.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_corpus(corpus) -> None:
    for cand, refs in corpus:
        if not refs:
            raise ValueError(f"candidate {cand!r} has no references")


def bleu(corpus, n: int = 4) -> float:
    """Corpus-level BLEU-n: clipped precision for orders 1..n, geometric mean,
    brevity penalty exp(1 - r/c) against closest-reference lengths.

    An order with no candidate n-grams at all counts as vacuously precise, so
    a perfect short candidate still scores 1.0 at high orders. An empty
    corpus scores 0 with a warning.
    """
    if not 1 <= n <= 4:
        raise ValueError(f"bleu order must be 1..4, got {n}")
    _check_corpus(corpus)
    if not corpus:
        warnings.warn("bleu over an empty corpus")
        return 0.0
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, refs in corpus:
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for k in range(1, n + 1):
            counts = _ngrams(cand, k)
            best = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, k).items():
                    best[gram] = max(best[gram], c)
            matched[k - 1] += sum(min(c, best[gram]) for gram, c in counts.items())
            total[k - 1] += sum(counts.values())
    log_sum = 0.0
    for k in range(n):
        if total[k] == 0:
            continue  # vacuous order
        if matched[k] == 0:
            return 0.0
        log_sum += math.log(matched[k] / total[k])
    precision = math.exp(log_sum / n)
    if cand_len == 0:
        warnings.warn("bleu with empty candidates")
        return 0.0
    brevity = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return precision * brevity


def _lcs_len(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(corpus, beta_sq: float = 1.2) -> float:
    """Mean over items of the best LCS F-measure against any reference."""
    _check_corpus(corpus)
    if not corpus:
        return 0.0
    scores = []
    for cand, refs in corpus:
        best = 0.0
        for ref in refs:
            lcs = _lcs_len(cand, ref)
            if lcs == 0:
                continue
            prec = lcs / len(cand)
            rec = lcs / len(ref)
            best = max(best, (1 + beta_sq) * prec * rec / (rec + beta_sq * prec))
        scores.append(best)
    return sum(scores) / len(scores)


def cider(corpus, max_n: int = 4) -> float:
    """Consensus score: mean over n-gram orders of the average cosine
    similarity between tf-idf vectors of candidate and references, times 10.

    Document frequencies come from the reference sides of the corpus (an
    n-gram counts once per item whose references contain it). A single-item
    corpus degenerates to idf = log(1) = 0 everywhere and scores 0; warned.
    """
    _check_corpus(corpus)
    if not corpus:
        return 0.0
    if len(corpus) < 2:
        warnings.warn("cider over a corpus of size 1: all idf weights are zero")
    n_items = len(corpus)
    doc_freq = [Counter() for _ in range(max_n)]
    for _, refs in corpus:
        for k in range(1, max_n + 1):
            grams = set()
            for ref in refs:
                grams.update(_ngrams(ref, k))
            for gram in grams:
                doc_freq[k - 1][gram] += 1

    def tfidf(tokens, k):
        counts = _ngrams(tokens, k)
        return {g: c * math.log(n_items / doc_freq[k - 1][g])
                for g, c in counts.items() if doc_freq[k - 1][g] > 0}

    def cosine(u, v):
        dot = sum(u[g] * v[g] for g in u.keys() & v.keys())
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        return dot / (nu * nv) if nu > 0 and nv > 0 else 0.0

    order_scores = []
    for k in range(1, max_n + 1):
        item_scores = []
        for cand, refs in corpus:
            cv = tfidf(cand, k)
            sims = [cosine(cv, tfidf(ref, k)) for ref in refs]
            item_scores.append(sum(sims) / len(sims))
        order_scores.append(sum(item_scores) / n_items)
    return 10.0 * sum(order_scores) / max_n


def token_accuracy(corpus) -> float:
    """Pooled fraction of positions where candidate matches the first
    reference, comparing up to the shorter of the two."""
    _check_corpus(corpus)
    matched = 0
    total = 0
    for cand, refs in corpus:
        ref = refs[0]
        k = min(len(cand), len(ref))
        matched += sum(1 for i in range(k) if cand[i] == ref[i])
        total += k
    return matched / total if total else 0.0


def metric_report(corpus, beam: int | None = None) -> dict:
    """All headline metrics, values fixed to six decimals."""
    report = {
        "bleu1": bleu(corpus, 1),
        "bleu2": bleu(corpus, 2),
        "bleu3": bleu(corpus, 3),
        "bleu4": bleu(corpus, 4),
        "rouge_l": rouge_l(corpus),
        "cider": cider(corpus),
        "token_accuracy": token_accuracy(corpus),
    }
    report = {k: round(v, 6) for k, v in report.items()}
    if beam is not None:
        report["beam"] = beam
    return report
