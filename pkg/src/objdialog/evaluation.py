"""Scoring decoded answers against ground truth on dataset splits.

Answers are decoded with teacher-forced history (the model never sees its
own previous answers), scored with the word-overlap metrics, and broken
down by co-reference distance. Turn-level subsets select the stress slices:
``lds`` keeps long-range pronoun turns, ``fvs`` keeps turns needing
fine-grained visual grounding, ``copy`` keeps rare-name echo turns.
"""

from __future__ import annotations

from . import synthworld as sw
from .metrics import metric_report, token_accuracy

SPLIT_CHOICES = ("test", "lds", "fvs", "copy")


def turn_subset(samples, split: str) -> list:
    """(sample, turn index) pairs for a named turn-level slice."""
    if split == "test":
        return [(s, t) for s in samples for t in range(len(s.dialog))]
    if split == "lds":
        return sw.lds_turns(samples)
    if split == "fvs":
        return sw.fvs_turns(samples)
    if split == "copy":
        return sw.copy_turns(samples)
    raise ValueError(f"unknown split {split!r}; choose from {SPLIT_CHOICES}")


def decode_subset(model, vocab, subset, beam: int = 3, max_len: int | None = None) -> list:
    """(candidate, [reference]) pairs for the selected turns.

    Whole dialogs are decoded once and indexed, so overlapping subsets do
    not repeat work.
    """
    cache: dict = {}
    corpus = []
    for sample, t in subset:
        if sample.world_id not in cache:
            cache[sample.world_id] = model.predict_dialog(sample, vocab, beam=beam,
                                                          max_len=max_len)
        cand, _ = cache[sample.world_id][t]
        corpus.append((cand, [list(sample.dialog[t].answer)]))
    return corpus


def evaluate(model, vocab, samples, split: str = "test", beam: int = 3,
             oracle: bool = False) -> dict:
    """Metric report over one split; ``oracle`` scores references against
    themselves (a fixture sanity mode)."""
    subset = turn_subset(samples, split)
    if not subset:
        raise sw.SpecError(f"split {split!r} selected no turns")
    if oracle:
        corpus = [(list(s.dialog[t].answer), [list(s.dialog[t].answer)]) for s, t in subset]
    else:
        corpus = decode_subset(model, vocab, subset, beam=beam)
    report = metric_report(corpus, beam=beam)
    report["split"] = split
    report["turns"] = len(corpus)
    buckets: dict = {}
    for (pair, (sample, t)) in zip(corpus, subset):
        buckets.setdefault(sample.dialog[t].coref_distance, []).append(pair)
    report["by_coref_distance"] = {
        str(dist): round(token_accuracy(pairs), 6) for dist, pairs in sorted(buckets.items())}
    return report
