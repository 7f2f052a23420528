"""Answer decoder: four-step representations, mixture distributions,
greedy/beam search against enumeration."""

import numpy as np
import pytest

from objdialog import tensor as T
from objdialog.decoder import AnswerDecoder, beam_search, greedy_decode, mix_probs
from objdialog.gradcheck import max_relative_error

F64 = np.float64


def make_decoder(d=8, vocab=12, heads=4, layers=3, seed=0, dtype=np.float32):
    return AnswerDecoder(np.random.default_rng(seed), d, vocab, heads, layers, dtype=dtype)


def rand_inputs(rng, d, n_prefix=3, n_hist=4, n_q=3, n_obj=2, dtype=np.float32):
    def mk(n):
        return T.Tensor(rng.normal(size=(n, d)).astype(dtype))
    return mk(n_prefix), mk(n_hist), mk(n_q), mk(n_obj)


# ---------------------------------------------------------------------------
# representations


def test_empty_history_is_skipped_exactly():
    dec = make_decoder()
    rng = np.random.default_rng(1)
    prefix, _, question, objects = rand_inputs(rng, 8)
    empty = T.Tensor(np.zeros((0, 8), dtype=np.float32))
    full = dec.reprs(prefix, empty, question, objects)
    causal = np.tril(np.ones((3, 3), dtype=bool))
    v1 = dec.prefix_stack(prefix, prefix, prefix, mask=causal)
    v3 = dec.question_stack(v1, question, question)
    v4 = dec.object_stack(v3, objects, objects)
    np.testing.assert_allclose(full.data, v4.data, atol=0)


def test_causality_later_prefix_rows_do_not_leak_back():
    dec = make_decoder()
    rng = np.random.default_rng(2)
    prefix, history, question, objects = rand_inputs(rng, 8, n_prefix=4)
    out1 = dec.reprs(prefix, history, question, objects)
    altered = prefix.data.copy()
    altered[3] += 5.0
    out2 = dec.reprs(T.Tensor(altered), history, question, objects)
    np.testing.assert_allclose(out1.data[:3], out2.data[:3], atol=1e-6)
    assert np.abs(out1.data[3] - out2.data[3]).max() > 1e-4


def test_single_object_attention_is_query_independent():
    dec = make_decoder(layers=1)
    rng = np.random.default_rng(3)
    obj = T.Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    qa = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    qb = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    layer = dec.object_stack.layers[0]
    np.testing.assert_allclose(layer(qa, obj, obj).data[0], layer(qb, obj, obj).data[1], atol=1e-6)


# ---------------------------------------------------------------------------
# distributions


def test_vocab_dist_uniform_at_zero_weights():
    dec = make_decoder(vocab=10)
    dec.vocab_head.w.data = np.zeros_like(dec.vocab_head.w.data)
    dec.vocab_head.b.data = np.zeros_like(dec.vocab_head.b.data)
    p = dec.vocab_dist(T.Tensor(np.random.default_rng(4).normal(size=(2, 8)).astype(np.float32)))
    np.testing.assert_allclose(p.data, np.full((2, 10), 0.1), atol=1e-7)


def test_pointer_single_word_is_indicator():
    dec = make_decoder(vocab=9)
    rng = np.random.default_rng(5)
    reprs = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    p = dec.pointer_dist(reprs, q, [7])
    expect = np.zeros((2, 9))
    expect[:, 7] = 1.0
    np.testing.assert_allclose(p.data, expect, atol=1e-7)


def test_pointer_repeated_token_pools_mass():
    dec = make_decoder(vocab=9)
    rng = np.random.default_rng(6)
    reprs = T.Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    p = dec.pointer_dist(reprs, q, [4, 4])
    expect = np.zeros((1, 9))
    expect[0, 4] = 1.0
    np.testing.assert_allclose(p.data, expect, atol=1e-7)


def test_pointer_two_token_hand_scores():
    dec = make_decoder(d=2, vocab=6, heads=1)
    dec.copy_map.w.data = np.eye(2, dtype=np.float32)
    reprs = T.Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
    q = T.Tensor(np.array([[2.0, 0.0], [0.0, 2.0]], dtype=np.float32))
    # scores = [2, 0] / sqrt(2) -> softmax([1.41421, 0])
    s = np.array([2.0, 0.0]) / np.sqrt(2.0)
    w = np.exp(s - s.max())
    w = w / w.sum()
    p = dec.pointer_dist(reprs, q, [3, 5])
    expect = np.zeros(6)
    expect[3], expect[5] = w[0], w[1]
    np.testing.assert_allclose(p.data[0], expect, atol=1e-6)


def test_pointer_support_is_question_ids():
    dec = make_decoder(vocab=20)
    rng = np.random.default_rng(7)
    reprs = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    ids = [2, 11, 5, 11]
    p = dec.pointer_dist(reprs, q, ids).data
    off_support = np.delete(p, sorted(set(ids)), axis=1)
    np.testing.assert_allclose(off_support, 0.0, atol=0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_gate_zero_weights_is_half_and_monotone():
    dec = make_decoder()
    dec.gate.w.data = np.zeros_like(dec.gate.w.data)
    dec.gate.b.data = np.zeros_like(dec.gate.b.data)
    reprs = T.Tensor(np.random.default_rng(8).normal(size=(2, 8)).astype(np.float32))
    np.testing.assert_allclose(dec.gate_value(reprs).data, np.full((2, 1), 0.5), atol=1e-7)
    dec.gate.b.data = np.array([[1.3]], dtype=np.float32)
    np.testing.assert_allclose(dec.gate_value(reprs).data,
                               np.full((2, 1), 1 / (1 + np.exp(-1.3))), atol=1e-6)


def test_mixture_gate_limits():
    dec = make_decoder(vocab=10)
    rng = np.random.default_rng(9)
    reprs = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    ids = [1, 4, 4]
    dec.gate.w.data = np.zeros_like(dec.gate.w.data)
    dec.gate.b.data = np.array([[-20.0]], dtype=np.float32)
    mixed, p_vocab, _, _ = dec.mixture(reprs, q, ids)
    np.testing.assert_allclose(mixed.data, p_vocab.data, atol=1e-7)
    dec.gate.b.data = np.array([[20.0]], dtype=np.float32)
    mixed, _, p_copy, _ = dec.mixture(reprs, q, ids)
    np.testing.assert_allclose(mixed.data, p_copy.data, atol=1e-7)


def test_mixture_sums_to_one_and_ablation():
    dec = make_decoder(vocab=14)
    rng = np.random.default_rng(10)
    reprs = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    ids = [0, 3, 9, 3]
    mixed, p_vocab, p_copy, alpha = dec.mixture(reprs, q, ids)
    for p in (mixed, p_vocab, p_copy):
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-5)
    assert np.all((alpha.data > 0) & (alpha.data < 1))
    plain, pv, pc, a = dec.mixture(reprs, q, ids, use_pointer=False)
    np.testing.assert_allclose(plain.data, pv.data, atol=0)
    assert pc is None and a is None


def test_mix_probs_hand_average_and_contract():
    p_copy = T.Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
    p_vocab = T.Tensor(np.array([[0.25, 0.75]], dtype=np.float32))
    out = mix_probs(p_copy, p_vocab, 0.5)
    np.testing.assert_allclose(out.data, [[0.625, 0.375]], atol=1e-7)
    for bad in (0.0, 1.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            mix_probs(p_copy, p_vocab, bad)


def test_decode_step_gradients():
    dec = make_decoder(d=4, vocab=6, heads=2, layers=2, dtype=F64)
    rng = np.random.default_rng(11)
    prefix, history, question, objects = rand_inputs(rng, 4, dtype=F64)
    for t in (prefix, history, question, objects):
        t.requires_grad = True
    ids = [1, 2, 1]

    def forward():
        reprs = dec.reprs(prefix, history, question, objects)
        mixed, _, _, _ = dec.mixture(reprs, question, ids)
        return T.nll_probs(mixed, [0, 5, 2])

    wrt = dict(dec.params(), prefix=prefix, history=history, question=question, objects=objects)
    assert max_relative_error(forward, wrt, step=1e-4) < 1e-5


# ---------------------------------------------------------------------------
# search


def table_model(seed, vocab=3, peaked=1.0):
    """Deterministic fake model: prefix -> distribution, via hashed RNG."""
    def next_dist(prefix):
        key = (seed, 1009) + tuple(int(p) + 1 for p in prefix)
        rng = np.random.default_rng(key)
        logits = rng.normal(size=vocab) * peaked
        e = np.exp(logits - logits.max())
        return e / e.sum()
    return next_dist


def enumerate_best(next_dist, eos_id, max_len, vocab):
    """Exhaustive argmax over all complete output sequences.

    A sequence is complete when EOS is emitted (its log-prob counts) or the
    length cap forces an end (no EOS term), matching the search convention.
    """
    best = None
    others = [t for t in range(vocab) if t != eos_id]

    def consider(cand):
        nonlocal best
        if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
            best = cand

    def walk(prefix, score, depth):
        if depth == max_len:
            consider((score, tuple(prefix)))
            return
        p = next_dist(tuple(prefix))
        logp = np.log(np.maximum(p, 1e-300))
        consider((score + float(logp[eos_id]), tuple(prefix)))
        for tok in others:
            walk(prefix + [tok], score + float(logp[tok]), depth + 1)

    walk([], 0.0, 0)
    return list(best[1]), best[0]


def test_greedy_eos_first_is_empty():
    def next_dist(prefix):
        return np.array([0.9, 0.05, 0.05])
    tokens, logprob = greedy_decode(next_dist, eos_id=0, max_len=5)
    assert tokens == []
    np.testing.assert_allclose(logprob, np.log(0.9), atol=1e-9)


def test_greedy_deterministic_and_tie_break():
    def next_dist(prefix):
        if len(prefix) >= 2:
            return np.array([1.0, 0.0, 0.0])
        return np.array([0.0, 0.5, 0.5])  # tie: lowest id wins
    t1, lp1 = greedy_decode(next_dist, eos_id=0, max_len=4)
    t2, lp2 = greedy_decode(next_dist, eos_id=0, max_len=4)
    assert t1 == t2 == [1, 1]
    assert lp1 == lp2


def test_beam_one_equals_greedy():
    for seed in range(12):
        model = table_model(seed, vocab=5, peaked=0.7)
        gt, gl = greedy_decode(model, eos_id=0, max_len=4)
        bt, bl = beam_search(model, eos_id=0, max_len=4, beam=1)
        assert gt == bt
        np.testing.assert_allclose(gl, bl, atol=1e-12)


def test_beam_never_below_greedy():
    for seed in range(12):
        model = table_model(seed, vocab=6, peaked=0.4)
        _, gl = greedy_decode(model, eos_id=0, max_len=5)
        _, bl = beam_search(model, eos_id=0, max_len=5, beam=3)
        assert bl >= gl - 1e-12


def test_beam_three_matches_exhaustive_on_micro_model():
    for seed in range(10):
        model = table_model(seed, vocab=3, peaked=0.8)
        bt, bl = beam_search(model, eos_id=0, max_len=2, beam=3)
        et, el = enumerate_best(model, eos_id=0, max_len=2, vocab=3)
        assert bt == et
        np.testing.assert_allclose(bl, el, atol=1e-12)


def test_wider_beam_never_scores_lower():
    for seed in range(8):
        model = table_model(seed, vocab=5, peaked=0.5)
        scores = [beam_search(model, eos_id=0, max_len=4, beam=b)[1] for b in (1, 2, 3, 5)]
        for narrow, wide in zip(scores, scores[1:]):
            assert wide >= narrow - 1e-12


def test_beam_validates_width():
    with pytest.raises(ValueError):
        beam_search(lambda p: np.ones(3) / 3, eos_id=0, max_len=2, beam=0)
