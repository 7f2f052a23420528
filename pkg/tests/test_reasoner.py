"""Per-turn reasoning unit: member operations against attention/GRU oracles,
plus structural invariants of the full step."""

import numpy as np
import pytest

from objdialog import nn
from objdialog import tensor as T
from objdialog.gradcheck import max_relative_error
from objdialog.reasoner import DialogState, ObjectTracks, TurnMemory, TurnOutput, TurnReasoner

F64 = np.float64


def make_reasoner(d=8, heads=4, graph_layers=2, seed=0, dtype=np.float32):
    return TurnReasoner(np.random.default_rng(seed), d=d, heads=heads,
                        graph_layers=graph_layers, dtype=dtype)


def unit_reasoner():
    """d=1, single head, every projection set to 1 so attention is bare."""
    r = make_reasoner(d=1, heads=1)
    for attn in (r.frame_attn, r.word_attn, r.context_attn, r.answer_attn, r.memory_attn):
        for w in (attn.wq, attn.wk, attn.wv, attn.wo):
            w.data = np.ones_like(w.data)
    return r


def random_tracks(rng, n, f, d, all_present=True):
    feats = rng.normal(size=(n, f, d)).astype(np.float32)
    present = np.ones((n, f), dtype=bool) if all_present else rng.random((n, f)) < 0.8
    return ObjectTracks(feats=feats, present=present)


# ---------------------------------------------------------------------------
# temporal summaries


def test_summary_single_frame_matches_single_key_attention():
    r = make_reasoner()
    rng = np.random.default_rng(1)
    tracks = random_tracks(rng, n=2, f=1, d=8)
    q = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    z = r.summarize_objects(q, tracks)
    frames0 = T.Tensor(tracks.feats[0])
    direct = r.frame_attn(T.Tensor(np.zeros((1, 8), dtype=np.float32)), frames0, frames0)
    np.testing.assert_allclose(z.data[0], direct.data[0], atol=1e-6)


def test_summary_fully_absent_object_is_zero():
    r = make_reasoner()
    rng = np.random.default_rng(2)
    tracks = random_tracks(rng, n=3, f=4, d=8)
    tracks.present[1, :] = False
    q = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    z = r.summarize_objects(q, tracks)
    np.testing.assert_allclose(z.data[1], np.zeros(8), atol=0)
    assert np.abs(z.data[0]).sum() > 0


def test_summary_two_frame_hand_composition():
    # mean over question words of single attention calls is the oracle
    r = unit_reasoner()
    tracks = ObjectTracks(feats=np.array([[[0.5], [1.5]]], dtype=np.float32),
                          present=np.ones((1, 2), dtype=bool))
    q = T.Tensor(np.array([[1.0], [2.0]], dtype=np.float32))
    z = r.summarize_objects(q, tracks)
    frames = T.Tensor(tracks.feats[0])
    w1 = r.frame_attn(T.Tensor([[1.0]]), frames, frames).data
    w2 = r.frame_attn(T.Tensor([[2.0]]), frames, frames).data
    np.testing.assert_allclose(z.data, (w1 + w2) / 2.0, atol=1e-6)


# ---------------------------------------------------------------------------
# question readout and modulation


def test_readout_single_word_ignores_summary():
    r = make_reasoner()
    rng = np.random.default_rng(3)
    q = T.Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    za = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    zb = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    np.testing.assert_allclose(r.question_readout(za, q).data,
                               r.question_readout(zb, q).data, atol=1e-6)


def test_readout_identical_words_symmetry():
    r = make_reasoner()
    rng = np.random.default_rng(4)
    word = rng.normal(size=(1, 8)).astype(np.float32)
    q = T.Tensor(np.repeat(word, 4, axis=0))
    z = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    single = r.question_readout(z, T.Tensor(word))
    np.testing.assert_allclose(r.question_readout(z, q).data, single.data, atol=1e-6)


def test_modulate_zeros_and_hand_case():
    r = make_reasoner(d=1, heads=1)
    zeros = T.Tensor(np.zeros((2, 1), dtype=np.float32))
    np.testing.assert_allclose(r.modulate(zeros, zeros).data, np.zeros((2, 3)))
    out = r.modulate(T.Tensor([[1.0]]), T.Tensor([[0.0]]))
    np.testing.assert_allclose(out.data, [[np.tanh(1.0), 0.0, 0.0]], atol=1e-7)


def test_modulate_range_and_mismatch():
    r = make_reasoner(d=4)
    rng = np.random.default_rng(5)
    out = r.modulate(T.Tensor(rng.normal(size=(3, 4)).astype(np.float32) * 10),
                     T.Tensor(rng.normal(size=(3, 4)).astype(np.float32) * 10))
    assert np.all(np.abs(out.data) <= 1.0)
    with pytest.raises(T.ShapeMismatchError):
        r.modulate(T.Tensor(np.zeros((3, 4))), T.Tensor(np.zeros((2, 4))))


# ---------------------------------------------------------------------------
# state dynamics and interaction matrix


def test_advance_zero_cell_halves_state():
    r = make_reasoner(d=2, heads=1)
    for p in r.cell.params("c").values():
        p.data = np.zeros_like(p.data)
    state = DialogState(states=T.Tensor(np.array([[2.0, -4.0], [6.0, 0.0]], dtype=np.float32)), turn=3)
    new = r.advance(state, T.Tensor(np.zeros((2, 6), dtype=np.float32)))
    np.testing.assert_allclose(new.states.data, [[1.0, -2.0], [3.0, 0.0]], atol=1e-7)
    assert new.turn == 4


def test_advance_zero_state_zero_candidate():
    r = make_reasoner(d=2, heads=1)
    for name in ("wh", "uh", "bh"):
        getattr(r.cell, name).data = np.zeros_like(getattr(r.cell, name).data)
    state = DialogState.initial(2, 2)
    new = r.advance(state, T.Tensor(np.random.default_rng(6).normal(size=(2, 6)).astype(np.float32)))
    np.testing.assert_allclose(new.states.data, np.zeros((2, 2)), atol=1e-7)


def test_advance_row_permutation():
    r = make_reasoner(d=4)
    rng = np.random.default_rng(7)
    h = rng.normal(size=(3, 4)).astype(np.float32)
    u = rng.normal(size=(3, 12)).astype(np.float32)
    perm = np.array([2, 0, 1])
    out = r.advance(DialogState(T.Tensor(h)), T.Tensor(u)).states.data
    out_p = r.advance(DialogState(T.Tensor(h[perm])), T.Tensor(u[perm])).states.data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-7)


def test_adjacency_uniform_for_zero_states():
    r = make_reasoner(d=4)
    k = r.adjacency(T.Tensor(np.zeros((3, 4), dtype=np.float32)))
    np.testing.assert_allclose(k.data, np.full((3, 3), 1 / 3), atol=1e-7)


def test_adjacency_hand_case():
    # states [[1],[2]], width 1: gram [[1,2],[2,4]], row softmaxes
    r = make_reasoner(d=1, heads=1)
    k = r.adjacency(T.Tensor(np.array([[1.0], [2.0]], dtype=np.float32)))
    np.testing.assert_allclose(k.data, [[0.26894142, 0.73105858],
                                        [0.11920292, 0.88079708]], atol=1e-6)


def test_adjacency_rows_sum_to_one():
    r = make_reasoner(d=8)
    rng = np.random.default_rng(8)
    k = r.adjacency(T.Tensor(rng.normal(size=(5, 8)).astype(np.float32)))
    np.testing.assert_allclose(k.data.sum(axis=1), np.ones(5), atol=1e-5)
    assert np.all(k.data > 0)


# ---------------------------------------------------------------------------
# graph refinement and context


def test_graph_refine_zero_weights_identity():
    r = make_reasoner(d=4)
    for lin in r.graph_maps:
        lin.w.data = np.zeros_like(lin.w.data)
    z = T.Tensor(np.random.default_rng(9).normal(size=(3, 4)).astype(np.float32))
    k = T.Tensor(np.full((3, 3), 1 / 3, dtype=np.float32))
    np.testing.assert_allclose(r.graph_refine(z, k).data, z.data, atol=0)


def test_graph_refine_identity_hand_case():
    r = make_reasoner(d=2, heads=1, graph_layers=1)
    r.graph_maps[0].w.data = np.eye(2, dtype=np.float32)
    z = T.Tensor(np.array([[1.0, -2.0], [-3.0, 4.0]], dtype=np.float32))
    out = r.graph_refine(z, T.Tensor(np.eye(2, dtype=np.float32)))
    np.testing.assert_allclose(out.data, z.data + np.maximum(z.data, 0.0), atol=1e-7)


def test_graph_refine_symmetry_preserved():
    r = make_reasoner(d=4)
    row = np.random.default_rng(10).normal(size=(1, 4)).astype(np.float32)
    z = T.Tensor(np.repeat(row, 3, axis=0))
    k = T.Tensor(np.full((3, 3), 1 / 3, dtype=np.float32))
    out = r.graph_refine(z, k).data
    np.testing.assert_allclose(out[0], out[1], atol=1e-7)
    np.testing.assert_allclose(out[1], out[2], atol=1e-7)


def test_graph_refine_rejects_non_square():
    r = make_reasoner(d=4)
    with pytest.raises(T.ShapeMismatchError):
        r.graph_refine(T.Tensor(np.zeros((3, 4))), T.Tensor(np.zeros((3, 2))))


def test_context_summary_single_and_identical_frames():
    r = make_reasoner()
    rng = np.random.default_rng(11)
    q = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    frame = rng.normal(size=(1, 8)).astype(np.float32)
    single = r.summarize_context(q, T.Tensor(frame))
    repeated = r.summarize_context(q, T.Tensor(np.repeat(frame, 5, axis=0)))
    np.testing.assert_allclose(single.data, repeated.data, atol=1e-6)
    assert single.data.shape == (1, 8)


def test_fuse_zero_weights_and_selection():
    r = make_reasoner(d=3, heads=1)
    rng = np.random.default_rng(12)
    refined = T.Tensor(rng.normal(size=(2, 3)).astype(np.float32))
    ctx = T.Tensor(rng.normal(size=(1, 3)).astype(np.float32))
    r.fuse_map.w.data = np.zeros_like(r.fuse_map.w.data)
    r.fuse_map.b.data = np.zeros_like(r.fuse_map.b.data)
    np.testing.assert_allclose(r.fuse(refined, ctx).data, np.zeros((2, 3)), atol=0)
    r.fuse_map.w.data = np.vstack([np.eye(3), np.zeros((3, 3))]).astype(np.float32)
    np.testing.assert_allclose(r.fuse(refined, ctx).data, refined.data, atol=0)


def test_fuse_matches_plain_matmul():
    r = make_reasoner(d=3, heads=1)
    rng = np.random.default_rng(13)
    refined = rng.normal(size=(2, 3)).astype(np.float32)
    ctx = rng.normal(size=(1, 3)).astype(np.float32)
    out = r.fuse(T.Tensor(refined), T.Tensor(ctx)).data
    stacked = np.concatenate([refined, np.repeat(ctx, 2, axis=0)], axis=1)
    expect = stacked @ r.fuse_map.w.data + r.fuse_map.b.data
    np.testing.assert_allclose(out, expect, atol=1e-6)


# ---------------------------------------------------------------------------
# answer history memory


def test_embed_answer_single_token_and_empty():
    r = make_reasoner()
    rng = np.random.default_rng(14)
    fused = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    token = T.Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    out = r.embed_answer(fused, token)
    direct = r.answer_attn(fused, token, token)
    np.testing.assert_allclose(out.data, direct.data, atol=0)
    empty = r.embed_answer(fused, T.Tensor(np.zeros((0, 8), dtype=np.float32)))
    np.testing.assert_allclose(empty.data, np.zeros((2, 8)), atol=0)


def test_recall_empty_memory_is_zero():
    r = make_reasoner()
    fused = T.Tensor(np.random.default_rng(15).normal(size=(3, 8)).astype(np.float32))
    out = r.recall(fused, TurnMemory.empty(3))
    np.testing.assert_allclose(out.data, np.zeros((3, 8)), atol=0)


def test_recall_single_entry_matches_attention():
    r = make_reasoner()
    rng = np.random.default_rng(16)
    fused = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    memory = TurnMemory.empty(2)
    entries = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    memory.write(entries)
    out = r.recall(fused, memory)
    for n in range(2):
        row = T.Tensor(entries.data[n:n + 1])
        direct = r.memory_attn(T.Tensor(fused.data[n:n + 1]), row, row)
        np.testing.assert_allclose(out.data[n], direct.data[0], atol=1e-6)


def test_memory_entry_hand_matmul():
    r = make_reasoner(d=2, heads=1)
    rng = np.random.default_rng(17)
    fused = rng.normal(size=(2, 2)).astype(np.float32)
    ansvec = rng.normal(size=(2, 2)).astype(np.float32)
    out = r.memory_entry(T.Tensor(fused), T.Tensor(ansvec), turn=3).data
    pos = np.repeat(nn.sinusoid_encoding(3, 2), 2, axis=0)
    expect = np.concatenate([fused, ansvec, pos], axis=1) @ r.entry_map.w.data + r.entry_map.b.data
    np.testing.assert_allclose(out, expect, atol=1e-6)


# ---------------------------------------------------------------------------
# full step


def run_dialog(reasoner, questions, tracks, context, ablate=frozenset(), write_answers=None):
    state = DialogState.initial(tracks.n_objects, reasoner.d, dtype=reasoner.dtype)
    memory = TurnMemory.empty(tracks.n_objects)
    outputs = []
    for i, q in enumerate(questions):
        out, state = reasoner.step(q, tracks, context, state, memory, ablate=ablate)
        outputs.append(out)
        if write_answers is not None:
            reasoner.write_turn(memory, out.fused, write_answers[i], turn=state.turn)
    return outputs


def test_step_turn_one_shapes_and_uniform_affinity_for_identical_objects():
    r = make_reasoner(d=8)
    rng = np.random.default_rng(18)
    row = rng.normal(size=(1, 3, 8)).astype(np.float32)
    tracks = ObjectTracks(feats=np.repeat(row, 2, axis=0), present=np.ones((2, 3), dtype=bool))
    context = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(2, 8)).astype(np.float32))
    out, state = r.step(q, tracks, context, DialogState.initial(2, 8), TurnMemory.empty(2))
    assert isinstance(out, TurnOutput)
    assert out.objects.data.shape == (2, 8)
    assert out.affinity.data.shape == (2, 2)
    assert state.turn == 1
    np.testing.assert_allclose(out.affinity.data, np.full((2, 2), 0.5), atol=1e-6)


def test_step_object_permutation_equivariance():
    r = make_reasoner(d=8)
    rng = np.random.default_rng(19)
    n = 4
    tracks = random_tracks(rng, n=n, f=5, d=8, all_present=False)
    tracks.present[:, 0] = True
    context = T.Tensor(rng.normal(size=(5, 8)).astype(np.float32))
    questions = [T.Tensor(rng.normal(size=(3, 8)).astype(np.float32)) for _ in range(2)]
    answers = [T.Tensor(rng.normal(size=(2, 8)).astype(np.float32)) for _ in range(2)]
    perm = np.array([2, 0, 3, 1])
    tracks_p = ObjectTracks(feats=tracks.feats[perm], present=tracks.present[perm])
    outs = run_dialog(r, questions, tracks, context, write_answers=answers)
    outs_p = run_dialog(r, questions, tracks_p, context, write_answers=answers)
    for out, out_p in zip(outs, outs_p):
        np.testing.assert_allclose(out_p.objects.data, out.objects.data[perm], atol=1e-6)
        np.testing.assert_allclose(out_p.affinity.data, out.affinity.data[perm][:, perm], atol=1e-6)


def test_step_mask_invariance_for_absent_frames():
    r = make_reasoner(d=8)
    rng = np.random.default_rng(20)
    tracks = random_tracks(rng, n=3, f=5, d=8, all_present=False)
    tracks.present[:, 2] = True
    context = T.Tensor(rng.normal(size=(5, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    out1, _ = r.step(q, tracks, context, DialogState.initial(3, 8), TurnMemory.empty(3))
    garbled = tracks.feats.copy()
    garbled[~tracks.present] = 1e4
    tracks2 = ObjectTracks(feats=garbled, present=tracks.present)
    out2, _ = r.step(q, tracks2, context, DialogState.initial(3, 8), TurnMemory.empty(3))
    np.testing.assert_allclose(out1.objects.data, out2.objects.data, atol=1e-6)
    np.testing.assert_allclose(out1.affinity.data, out2.affinity.data, atol=1e-6)


def test_step_without_recurrence_ignores_earlier_turn_order():
    r = make_reasoner(d=8)
    rng = np.random.default_rng(21)
    tracks = random_tracks(rng, n=3, f=4, d=8)
    context = T.Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    qa, qb, qc = (T.Tensor(rng.normal(size=(3, 8)).astype(np.float32)) for _ in range(3))
    answers = [T.Tensor(rng.normal(size=(2, 8)).astype(np.float32)) for _ in range(3)]
    # state path ablated: affinity and fused output of the last turn must not
    # depend on how earlier questions were ordered
    outs1 = run_dialog(r, [qa, qb, qc], tracks, context, ablate={"recurrence"},
                       write_answers=answers)
    outs2 = run_dialog(r, [qb, qa, qc], tracks, context, ablate={"recurrence"},
                       write_answers=answers)
    np.testing.assert_allclose(outs1[2].affinity.data, outs2[2].affinity.data, atol=1e-6)
    np.testing.assert_allclose(outs1[2].fused.data, outs2[2].fused.data, atol=1e-6)
    # with the history path ablated as well, the full outputs match too
    outs3 = run_dialog(r, [qa, qb, qc], tracks, context, ablate={"recurrence", "history-attn"})
    outs4 = run_dialog(r, [qb, qa, qc], tracks, context, ablate={"recurrence", "history-attn"})
    np.testing.assert_allclose(outs3[2].objects.data, outs4[2].objects.data, atol=1e-6)
    # with recurrence on, order matters
    outs5 = run_dialog(r, [qa, qb, qc], tracks, context)
    outs6 = run_dialog(r, [qb, qa, qc], tracks, context)
    assert np.abs(outs5[2].objects.data - outs6[2].objects.data).max() > 1e-6


def test_step_objects_ablation_ignores_tracks():
    r = make_reasoner(d=8)
    rng = np.random.default_rng(22)
    tracks1 = random_tracks(rng, n=3, f=4, d=8)
    tracks2 = random_tracks(rng, n=3, f=4, d=8)
    context = T.Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    q = T.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    out1, _ = r.step(q, tracks1, context, DialogState.initial(3, 8), TurnMemory.empty(3),
                     ablate={"objects"})
    out2, _ = r.step(q, tracks2, context, DialogState.initial(3, 8), TurnMemory.empty(3),
                     ablate={"objects"})
    np.testing.assert_allclose(out1.objects.data, out2.objects.data, atol=0)


def test_step_end_to_end_gradients():
    r = make_reasoner(d=4, heads=2, graph_layers=1, dtype=F64)
    rng = np.random.default_rng(23)
    feats = T.Tensor(rng.normal(size=(2, 3, 4)).reshape(6, 4), requires_grad=True, dtype=F64)
    present = np.ones((2, 3), dtype=bool)
    present[1, 2] = False
    context = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=F64)
    q1 = T.Tensor(rng.normal(size=(2, 4)), dtype=F64)
    q2 = T.Tensor(rng.normal(size=(2, 4)), dtype=F64)
    ans = T.Tensor(rng.normal(size=(2, 4)), dtype=F64)
    # frozen copy for the second step: the checked feature gradient flows
    # through the explicit turn-1 path below, not through step 2's wrapping
    tracks = ObjectTracks(feats=feats.data.reshape(2, 3, 4).copy(), present=present)

    def forward():
        state = DialogState.initial(2, 4, dtype=F64)
        memory = TurnMemory.empty(2)
        # leaf features re-enter the graph through explicit slices so their
        # gradient is exercised end to end
        rows = []
        for n in range(2):
            frames = T.slice_rows(feats, n * 3, n * 3 + 3)
            per_word = r.frame_attn(q1, frames, frames, mask=present[n])
            rows.append(T.mean_axis(per_word, axis=0))
        summaries = T.concat(rows, axis=0)
        readouts = r.question_readout(summaries, q1)
        state = r.advance(state, r.modulate(summaries, readouts))
        affinity = r.adjacency(state.states)
        fused = r.fuse(r.graph_refine(summaries, affinity), r.summarize_context(q1, context))
        r.write_turn(memory, fused, ans, turn=1)
        out, state = r.step(q2, tracks, context, state, memory)
        return T.sum_all(T.tanh(out.objects))

    wrt = dict(r.params(), feats=feats, context=context)
    assert max_relative_error(forward, wrt, step=1e-4) < 1e-5
