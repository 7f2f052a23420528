"""The full dialog model: shared word embeddings, the per-turn reasoning
unit, the pointer-augmented answer decoder, and an auxiliary head that
re-generates the current question from the turn's object outputs.

A dialog is processed turn by turn on one tape: the recurrent state, the
answer-history memory, and the flattened history of question/answer word
ids accumulate as the conversation advances. Training and evaluation are
teacher-forced: the history always holds ground-truth answers.

Ablation switches (set in the config) mirror the model's moving parts:
``recurrence`` builds the interaction matrix from the current turn's inputs
with no carried state, ``objects`` blanks the per-object summaries so only
the holistic context remains, ``history-attn`` feeds the turn
representation to the decoder without memory retrieval, and ``pointer``
collapses the output mixture to the vocabulary softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import AnswerDecoder, beam_search, greedy_decode
from .nn import Attention, Linear
from .reasoner import DialogState, ObjectTracks, TurnMemory, TurnReasoner

ABLATIONS = ("recurrence", "objects", "history-attn", "pointer")


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    decoder_layers: int = 3
    graph_layers: int = 2
    vocab_size: int = 0
    max_answer_len: int = 8
    ablate: tuple = ()

    def __post_init__(self):
        self.ablate = tuple(self.ablate)
        if self.d < 1 or self.heads < 1 or self.vocab_size < 1 or self.max_answer_len < 1:
            raise ValueError("model dimensions and vocabulary must be at least 1")
        if self.d % self.heads != 0:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")
        for name in self.ablate:
            if name not in ABLATIONS:
                raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")

    def to_dict(self) -> dict:
        return {"d": self.d, "heads": self.heads, "decoder_layers": self.decoder_layers,
                "graph_layers": self.graph_layers, "vocab_size": self.vocab_size,
                "max_answer_len": self.max_answer_len, "ablate": list(self.ablate)}

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(d=raw["d"], heads=raw["heads"], decoder_layers=raw["decoder_layers"],
                   graph_layers=raw["graph_layers"], vocab_size=raw["vocab_size"],
                   max_answer_len=raw["max_answer_len"], ablate=tuple(raw.get("ablate", ())))


class QuestionReconstructor:
    """Two-step auxiliary decoder re-generating the turn's question.

    Own parameters apart from the shared embedding table: causal
    self-attention over the question prefix, attention over the turn's
    object outputs, then a vocabulary-only head.
    """

    def __init__(self, rng, d: int, vocab_size: int, heads: int = 4, dtype=np.float32):
        self.self_attn = Attention(rng, d, heads, dtype=dtype)
        self.object_attn = Attention(rng, d, heads, dtype=dtype)
        self.head = Linear(rng, d, vocab_size, bias=True, dtype=dtype)

    def params(self, prefix: str = "qdec") -> dict:
        out = {}
        out.update(self.self_attn.params(f"{prefix}.self_attn"))
        out.update(self.object_attn.params(f"{prefix}.object_attn"))
        out.update(self.head.params(f"{prefix}.head"))
        return out

    def logits(self, prefix_emb: T.Tensor, objects: T.Tensor) -> T.Tensor:
        n = prefix_emb.data.shape[0]
        causal = np.tril(np.ones((n, n), dtype=bool))
        v1 = T.add(prefix_emb, self.self_attn(prefix_emb, prefix_emb, prefix_emb, mask=causal))
        v2 = T.add(v1, self.object_attn(v1, objects, objects))
        return self.head(v2)

    def loss(self, prefix_emb: T.Tensor, objects: T.Tensor, targets) -> T.Tensor:
        return T.cross_entropy(self.logits(prefix_emb, objects), targets)


@dataclass
class TurnRecord:
    """Diagnostics for one teacher-forced turn."""

    answer_loss: T.Tensor
    question_loss: T.Tensor
    affinity: np.ndarray
    correct: int
    total: int
    predicted: list = field(default_factory=list)


class DialogModel:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.ablate = frozenset(cfg.ablate)
        limit = float(np.sqrt(6.0 / (cfg.vocab_size + cfg.d)))
        self.embeddings = T.param(
            rng.uniform(-limit, limit, size=(cfg.vocab_size, cfg.d)), dtype=dtype)
        self.reasoner = TurnReasoner(rng, cfg.d, cfg.heads, cfg.graph_layers, dtype=dtype)
        self.decoder = AnswerDecoder(rng, cfg.d, cfg.vocab_size, cfg.heads,
                                     cfg.decoder_layers, dtype=dtype)
        self.question_head = QuestionReconstructor(rng, cfg.d, cfg.vocab_size, cfg.heads,
                                                   dtype=dtype)

    def params(self) -> dict:
        out = {"embeddings": self.embeddings}
        out.update(self.reasoner.params("reasoner"))
        out.update(self.decoder.params("decoder"))
        out.update(self.question_head.params("qdec"))
        return out

    def embed_ids(self, ids) -> T.Tensor:
        return T.embedding_lookup(self.embeddings, ids)

    # -- dialog processing ----------------------------------------------------

    def _video_inputs(self, sample):
        tracks = ObjectTracks(feats=np.asarray(sample.feats), present=np.asarray(sample.present))
        context = T.Tensor(np.asarray(sample.context), dtype=self.dtype)
        return tracks, context

    def _run_turns(self, sample, vocab, upto: int, collect):
        """Drive turns 0..upto-1 teacher-forced; ``collect`` sees each turn."""
        tracks, context = self._video_inputs(sample)
        state = DialogState.initial(tracks.n_objects, self.cfg.d, dtype=self.dtype)
        memory = TurnMemory.empty(tracks.n_objects)
        history_ids: list = []
        for t in range(upto):
            turn = sample.dialog[t]
            q_ids = vocab.encode(turn.question)
            q_emb = self.embed_ids(q_ids)
            out, state = self.reasoner.step(q_emb, tracks, context, state, memory,
                                            ablate=self.ablate)
            a_ids = vocab.encode(turn.answer)
            collect(t, turn, q_ids, q_emb, a_ids, out, history_ids)
            self.reasoner.write_turn(memory, out.fused, self.embed_ids(a_ids), turn=t + 1)
            history_ids.extend(q_ids + a_ids)
        return tracks, context, state, memory, history_ids

    def turn_losses(self, sample, vocab, upto: int | None = None) -> list:
        """Teacher-forced per-turn records over the dialog (or its first turns)."""
        upto = len(sample.dialog) if upto is None else upto
        records: list = []

        def collect(t, turn, q_ids, q_emb, a_ids, out, history_ids):
            history_emb = self.embed_ids(history_ids)
            prefix = self.embed_ids([vocab.bos] + a_ids)
            targets = a_ids + [vocab.eos]
            reprs = self.decoder.reprs(prefix, history_emb, q_emb, out.objects)
            mixed, _, _, _ = self.decoder.mixture(
                reprs, q_emb, q_ids, use_pointer="pointer" not in self.ablate)
            answer_loss = T.nll_probs(mixed, targets)
            predicted = np.argmax(mixed.data, axis=1)
            correct = int((predicted == np.asarray(targets)).sum())
            q_prefix = self.embed_ids([vocab.bos] + q_ids)
            question_loss = self.question_head.loss(q_prefix, out.objects, q_ids + [vocab.eos])
            records.append(TurnRecord(
                answer_loss=answer_loss, question_loss=question_loss,
                affinity=out.affinity.data, correct=correct, total=len(targets),
                predicted=[int(p) for p in predicted]))

        self._run_turns(sample, vocab, upto, collect)
        return records

    def total_loss(self, sample, vocab, question_weight: float = 1.0) -> T.Tensor:
        """Sum over turns of answer NLL plus weighted question-reconstruction NLL."""
        records = self.turn_losses(sample, vocab)
        terms = []
        for rec in records:
            terms.append(rec.answer_loss)
            if question_weight != 0.0:
                terms.append(rec.question_loss if question_weight == 1.0
                             else T.scale(rec.question_loss, question_weight))
        total = terms[0]
        for term in terms[1:]:
            total = T.add(total, term)
        return total

    def token_stats(self, sample, vocab) -> tuple:
        """(correct, total) teacher-forced argmax token counts over the dialog."""
        records = self.turn_losses(sample, vocab)
        return sum(r.correct for r in records), sum(r.total for r in records)

    # -- inference -------------------------------------------------------------

    def predict_turn(self, sample, vocab, turn: int, beam: int = 3,
                     max_len: int | None = None) -> tuple:
        """Decode the answer for one turn with teacher-forced history.

        Returns (tokens, total log-probability). ``beam=1`` is greedy.
        """
        if not 0 <= turn < len(sample.dialog):
            raise ValueError(f"turn {turn} outside dialog of {len(sample.dialog)} turns")
        max_len = self.cfg.max_answer_len if max_len is None else max_len
        _, context, state, memory, history_ids = self._run_turns(
            sample, vocab, turn, lambda *a: None)
        tracks, _ = self._video_inputs(sample)
        q_ids = vocab.encode(sample.dialog[turn].question)
        q_emb = self.embed_ids(q_ids)
        out, _ = self.reasoner.step(q_emb, tracks, context, state, memory, ablate=self.ablate)
        history_emb = self.embed_ids(history_ids)
        use_pointer = "pointer" not in self.ablate

        def next_dist(prefix_tokens):
            prefix = self.embed_ids([vocab.bos] + list(prefix_tokens))
            reprs = self.decoder.reprs(prefix, history_emb, q_emb, out.objects)
            last = T.slice_rows(reprs, reprs.data.shape[0] - 1, reprs.data.shape[0])
            mixed, _, _, _ = self.decoder.mixture(last, q_emb, q_ids, use_pointer=use_pointer)
            return mixed.data[0]

        if beam == 1:
            ids, logprob = greedy_decode(next_dist, vocab.eos, max_len)
        else:
            ids, logprob = beam_search(next_dist, vocab.eos, max_len, beam=beam)
        return vocab.decode(ids), logprob

    def turn_scorers(self, sample, vocab) -> list:
        """One next-word distribution closure per turn, teacher-forced history.

        Each closure maps a token-id prefix to the mixed next-word
        probability vector; search strategies consume them directly.
        """
        use_pointer = "pointer" not in self.ablate
        scorers: list = []

        def collect(t, turn, q_ids, q_emb, a_ids, out, history_ids):
            history_emb = self.embed_ids(list(history_ids))

            def next_dist(prefix_tokens, q_ids=q_ids, q_emb=q_emb, out=out,
                          history_emb=history_emb):
                prefix = self.embed_ids([vocab.bos] + list(prefix_tokens))
                reprs = self.decoder.reprs(prefix, history_emb, q_emb, out.objects)
                last = T.slice_rows(reprs, reprs.data.shape[0] - 1, reprs.data.shape[0])
                mixed, _, _, _ = self.decoder.mixture(last, q_emb, q_ids,
                                                      use_pointer=use_pointer)
                return mixed.data[0]

            scorers.append(next_dist)

        self._run_turns(sample, vocab, len(sample.dialog), collect)
        return scorers

    def predict_dialog(self, sample, vocab, beam: int = 3, max_len: int | None = None) -> list:
        """Decode every turn in one teacher-forced history pass.

        Returns one (tokens, log-probability) pair per turn; the history fed
        to later turns always holds the ground-truth answers, never the
        decoded ones.
        """
        max_len = self.cfg.max_answer_len if max_len is None else max_len
        results: list = []
        for next_dist in self.turn_scorers(sample, vocab):
            if beam == 1:
                ids, logprob = greedy_decode(next_dist, vocab.eos, max_len)
            else:
                ids, logprob = beam_search(next_dist, vocab.eos, max_len, beam=beam)
            results.append((vocab.decode(ids), logprob))
        return results

    def score_answer(self, sample, vocab, turn: int, answer_tokens,
                     max_len: int | None = None) -> float:
        """Total log-probability the model assigns to a given answer at a turn.

        Follows the decoding convention: a sequence shorter than the length
        cap ends by emitting EOS, whose log-probability counts; a sequence
        at the cap ends forcibly without one.
        """
        max_len = self.cfg.max_answer_len if max_len is None else max_len
        _, context, state, memory, history_ids = self._run_turns(
            sample, vocab, turn, lambda *a: None)
        tracks, _ = self._video_inputs(sample)
        q_ids = vocab.encode(sample.dialog[turn].question)
        q_emb = self.embed_ids(q_ids)
        out, _ = self.reasoner.step(q_emb, tracks, context, state, memory, ablate=self.ablate)
        history_emb = self.embed_ids(history_ids)
        ids = vocab.encode(answer_tokens)
        targets = ids + ([vocab.eos] if len(ids) < max_len else [])
        prefix = self.embed_ids([vocab.bos] + ids)
        reprs = self.decoder.reprs(prefix, history_emb, q_emb, out.objects)
        if len(targets) < prefix.data.shape[0]:
            reprs = T.slice_rows(reprs, 0, len(targets))
        mixed, _, _, _ = self.decoder.mixture(reprs, q_emb, q_ids,
                                              use_pointer="pointer" not in self.ablate)
        picked = mixed.data[np.arange(len(targets)), targets]
        return float(np.log(np.maximum(picked, 1e-300)).sum())

    def trace_dialog(self, sample, vocab) -> list:
        """Per-turn interaction matrices with their questions, teacher-forced."""
        rows: list = []

        def collect(t, turn, q_ids, q_emb, a_ids, out, history_ids):
            rows.append({"turn": t + 1, "question": list(turn.question),
                         "matrix": np.asarray(out.affinity.data, dtype=np.float64)})

        self._run_turns(sample, vocab, len(sample.dialog), collect)
        return rows
