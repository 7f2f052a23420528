"""Autoregressive answer generation.

A four-step attention decoder builds a representation for every prefix
position: self-attention over the generated prefix (causal), then attention
over the flattened dialog history, the current question, and the per-object
turn outputs. Each of the four components is a residual stack of identical
multi-head attention layers. The next-word distribution mixes a vocabulary
softmax with a copy distribution over the current question's tokens through
a learned scalar gate.

Greedy and beam decoding operate on a ``next_dist`` closure mapping a token
prefix to the next-word probability vector, so they are independent of the
model internals they search over.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import AttentionStack, Linear


class AnswerDecoder:
    def __init__(self, rng, d: int, vocab_size: int, heads: int = 4, layers: int = 3,
                 dtype=np.float32):
        self.d = d
        self.vocab_size = vocab_size
        self.prefix_stack = AttentionStack(rng, d, heads, layers, dtype=dtype)
        self.history_stack = AttentionStack(rng, d, heads, layers, dtype=dtype)
        self.question_stack = AttentionStack(rng, d, heads, layers, dtype=dtype)
        self.object_stack = AttentionStack(rng, d, heads, layers, dtype=dtype)
        self.vocab_head = Linear(rng, d, vocab_size, bias=True, dtype=dtype)
        self.copy_map = Linear(rng, d, d, bias=False, dtype=dtype)
        self.gate = Linear(rng, d, 1, bias=True, dtype=dtype)

    def params(self, prefix: str = "decoder") -> dict:
        out = {}
        out.update(self.prefix_stack.params(f"{prefix}.prefix"))
        out.update(self.history_stack.params(f"{prefix}.history"))
        out.update(self.question_stack.params(f"{prefix}.question"))
        out.update(self.object_stack.params(f"{prefix}.objects"))
        out.update(self.vocab_head.params(f"{prefix}.vocab_head"))
        out.update(self.copy_map.params(f"{prefix}.copy_map"))
        out.update(self.gate.params(f"{prefix}.gate"))
        return out

    def reprs(self, prefix_emb: T.Tensor, history_emb: T.Tensor, question_emb: T.Tensor,
              objects: T.Tensor) -> T.Tensor:
        """Per-position decoder representation [L x d] for a teacher-forced prefix.

        Position l sees prefix rows <= l through a causal mask. An empty
        dialog history contributes nothing (zero attention plus residual),
        so at turn 1 the history step is an identity.
        """
        n = prefix_emb.data.shape[0]
        causal = np.tril(np.ones((n, n), dtype=bool))
        v1 = self.prefix_stack(prefix_emb, prefix_emb, prefix_emb, mask=causal)
        v2 = self.history_stack(v1, history_emb, history_emb)
        v3 = self.question_stack(v2, question_emb, question_emb)
        return self.object_stack(v3, objects, objects)

    def vocab_dist(self, reprs: T.Tensor) -> T.Tensor:
        return T.softmax(self.vocab_head(reprs))

    def pointer_dist(self, reprs: T.Tensor, question_emb: T.Tensor, question_ids) -> T.Tensor:
        """Copy distribution over vocabulary ids of the question's tokens.

        Attention scores of each decoder position against the (projected)
        question words, scatter-added onto the tokens' vocabulary ids;
        repeated tokens pool their probability mass.
        """
        if question_emb.data.shape[0] == 0:
            raise T.DegenerateInputError("pointer over an empty question")
        keys = self.copy_map(question_emb)
        scores = T.scale(T.matmul(reprs, T.transpose(keys)), 1.0 / np.sqrt(self.d))
        weights = T.softmax(scores)
        return T.scatter_probs(weights, question_ids, self.vocab_size)

    def gate_value(self, reprs: T.Tensor) -> T.Tensor:
        """Copy-vs-generate gate in (0, 1), one scalar per position."""
        return T.sigmoid(self.gate(reprs))

    def mixture(self, reprs: T.Tensor, question_emb: T.Tensor, question_ids,
                use_pointer: bool = True):
        """Next-word distributions [L x V]; returns (mixed, vocab, copy, gate)."""
        p_vocab = self.vocab_dist(reprs)
        if not use_pointer:
            return p_vocab, p_vocab, None, None
        p_copy = self.pointer_dist(reprs, question_emb, question_ids)
        alpha = self.gate_value(reprs)
        ones = T.Tensor(np.ones_like(alpha.data))
        mixed = T.add(T.mul(alpha, p_copy), T.mul(T.sub(ones, alpha), p_vocab))
        return mixed, p_vocab, p_copy, alpha


def mix_probs(p_copy: T.Tensor, p_vocab: T.Tensor, alpha: float) -> T.Tensor:
    """Fixed-gate convex combination; alpha must lie strictly in (0, 1)."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"gate value {alpha} outside (0, 1)")
    return T.add(T.scale(p_copy, alpha), T.scale(p_vocab, 1.0 - alpha))


# ---------------------------------------------------------------------------
# search


def greedy_decode(next_dist, eos_id: int, max_len: int):
    """Argmax rollout; ties pick the lowest token id. Returns (tokens, logprob).

    The terminating end-of-sequence token is consumed (its log-probability
    counts) but not emitted; hitting max_len ends without an EOS term.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    tokens: list = []
    logprob = 0.0
    for _ in range(max_len):
        p = np.asarray(next_dist(tuple(tokens)), dtype=np.float64)
        tok = int(np.argmax(p))
        logprob += float(np.log(max(p[tok], 1e-300)))
        if tok == eos_id:
            break
        tokens.append(tok)
    return tokens, logprob


def beam_search(next_dist, eos_id: int, max_len: int, beam: int = 3):
    """Beam search over summed log-probabilities. Returns (tokens, logprob).

    Per step, the top ``beam`` scored extensions are kept; extensions ending
    in EOS retire to a completed pool (taking a slot, which makes beam=1
    reproduce greedy exactly). No length normalization. The greedy rollout
    is always scored into the pool, so the result never falls below it.
    Ties break lexicographically on token ids.
    """
    if beam < 1:
        raise ValueError("beam must be at least 1")
    g_tokens, g_logprob = greedy_decode(next_dist, eos_id, max_len)
    completed = [(g_logprob, tuple(g_tokens))]
    live = [(0.0, ())]
    for _ in range(max_len):
        candidates = []
        for score, toks in live:
            p = np.asarray(next_dist(toks), dtype=np.float64)
            logp = np.log(np.maximum(p, 1e-300))
            for tok in range(p.shape[0]):
                candidates.append((score + float(logp[tok]), toks + (tok,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for score, toks in candidates[:beam]:
            if toks[-1] == eos_id:
                completed.append((score, toks[:-1]))
            else:
                live.append((score, toks))
        if not live:
            break
    completed.extend(live)  # hypotheses forced to end at max_len
    completed.sort(key=lambda c: (-c[0], c[1]))
    best_score, best_tokens = completed[0]
    return list(best_tokens), best_score
