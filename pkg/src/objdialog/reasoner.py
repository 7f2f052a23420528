"""One reasoning step per dialog turn over object trajectories.

Each turn: summarize every object's frame sequence under the current
question, modulate with an object-specific question readout, advance
per-object recurrent dialog states, derive a row-stochastic object
interaction matrix from the states, refine object vectors with a small
residual graph convolution over that matrix, blend in a question-driven
context summary, and finally retrieve from the per-object answer history.
The interaction matrix is exposed on the output for tracing.

Presence masks make undetected frames invisible: an object absent from
every frame contributes exact zero vectors, so it cannot poison a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Attention, GRUCell, Linear, sinusoid_encoding


@dataclass
class ObjectTracks:
    """Per-object frame features [N x F x d] plus detection flags [N x F]."""

    feats: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        if self.feats.shape[:2] != self.present.shape:
            raise T.ShapeMismatchError(
                f"tracks: features {self.feats.shape} vs presence {self.present.shape}")

    @property
    def n_objects(self) -> int:
        return self.feats.shape[0]

    @property
    def n_frames(self) -> int:
        return self.feats.shape[1]


@dataclass
class DialogState:
    """Recurrent per-object memory of the conversation, one row per object."""

    states: T.Tensor
    turn: int = 0

    @classmethod
    def initial(cls, n_objects: int, d: int, dtype=np.float32) -> "DialogState":
        # all-zero start keeps turn-1 behavior reproducible
        return cls(states=T.Tensor(np.zeros((n_objects, d), dtype=dtype)), turn=0)


@dataclass
class TurnMemory:
    """Answer-guided history: for each object, one entry per completed turn."""

    per_object: list = field(default_factory=list)

    @classmethod
    def empty(cls, n_objects: int) -> "TurnMemory":
        return cls(per_object=[[] for _ in range(n_objects)])

    def __len__(self) -> int:
        return len(self.per_object[0]) if self.per_object else 0

    def write(self, entries: T.Tensor) -> None:
        for n in range(len(self.per_object)):
            self.per_object[n].append(T.slice_rows(entries, n, n + 1))


@dataclass
class TurnOutput:
    objects: T.Tensor      # [N x d] final per-object turn representation
    affinity: T.Tensor     # [N x N] row-stochastic interaction matrix
    fused: T.Tensor        # [N x d] pre-history object representation


class TurnReasoner:
    """The per-turn reasoning unit. Parameters are shared across objects."""

    def __init__(self, rng, d: int, heads: int = 4, graph_layers: int = 2, dtype=np.float32):
        self.d = d
        self.dtype = dtype
        self.frame_attn = Attention(rng, d, heads, dtype=dtype)
        self.word_attn = Attention(rng, d, heads, dtype=dtype)
        self.context_attn = Attention(rng, d, heads, dtype=dtype)
        self.answer_attn = Attention(rng, d, heads, dtype=dtype)
        self.memory_attn = Attention(rng, d, heads, dtype=dtype)
        self.cell = GRUCell(rng, 3 * d, d, dtype=dtype)
        self.graph_maps = [Linear(rng, d, d, bias=False, dtype=dtype) for _ in range(graph_layers)]
        self.fuse_map = Linear(rng, 2 * d, d, dtype=dtype)
        self.entry_map = Linear(rng, 3 * d, d, dtype=dtype)
        self.output_map = Linear(rng, 2 * d, d, dtype=dtype)
        # projection used only when recurrence is ablated: modulated inputs
        # stand in for dialog states when building the interaction matrix
        self.state_proxy = Linear(rng, 3 * d, d, bias=False, dtype=dtype)

    def params(self, prefix: str = "reasoner") -> dict:
        out = {}
        out.update(self.frame_attn.params(f"{prefix}.frame_attn"))
        out.update(self.word_attn.params(f"{prefix}.word_attn"))
        out.update(self.context_attn.params(f"{prefix}.context_attn"))
        out.update(self.answer_attn.params(f"{prefix}.answer_attn"))
        out.update(self.memory_attn.params(f"{prefix}.memory_attn"))
        out.update(self.cell.params(f"{prefix}.cell"))
        for i, lin in enumerate(self.graph_maps):
            out.update(lin.params(f"{prefix}.graph.{i}"))
        out.update(self.fuse_map.params(f"{prefix}.fuse"))
        out.update(self.entry_map.params(f"{prefix}.entry"))
        out.update(self.output_map.params(f"{prefix}.output"))
        out.update(self.state_proxy.params(f"{prefix}.state_proxy"))
        return out

    # -- member operations ---------------------------------------------------

    def summarize_objects(self, question: T.Tensor, tracks: ObjectTracks) -> T.Tensor:
        """Question-driven temporal summary of each object, [N x d].

        Mean over question words of attention over the object's frames,
        restricted to frames where the object was detected. A fully absent
        object summarizes to the zero vector.
        """
        rows = []
        for n in range(tracks.n_objects):
            frames = T.Tensor(tracks.feats[n], dtype=self.dtype)
            per_word = self.frame_attn(question, frames, frames, mask=tracks.present[n])
            rows.append(T.mean_axis(per_word, axis=0))
        return T.concat(rows, axis=0)

    def question_readout(self, summaries: T.Tensor, question: T.Tensor) -> T.Tensor:
        """Each object's own view of the question words, [N x d]."""
        return self.word_attn(summaries, question, question)

    def modulate(self, summaries: T.Tensor, readouts: T.Tensor) -> T.Tensor:
        """tanh([z, q, q*z]) per object, [N x 3d]; no learned parameters."""
        if summaries.data.shape != readouts.data.shape:
            raise T.ShapeMismatchError(
                f"modulate: {summaries.data.shape} vs {readouts.data.shape}")
        return T.tanh(T.concat([summaries, readouts, T.mul(readouts, summaries)], axis=-1))

    def advance(self, state: DialogState, modulated: T.Tensor) -> DialogState:
        """One shared-parameter GRU step applied independently per object row."""
        if modulated.data.shape[0] != state.states.data.shape[0]:
            raise T.ShapeMismatchError(
                f"advance: {modulated.data.shape[0]} inputs vs "
                f"{state.states.data.shape[0]} state rows")
        return DialogState(states=self.cell(state.states, modulated), turn=state.turn + 1)

    def adjacency(self, states: T.Tensor) -> T.Tensor:
        """Row-softmax of the scaled state Gram matrix, [N x N]."""
        gram = T.scale(T.matmul(states, T.transpose(states)), 1.0 / np.sqrt(self.d))
        return T.softmax(gram)

    def graph_refine(self, vertices: T.Tensor, adjacency: T.Tensor) -> T.Tensor:
        """Residual graph convolution: Z <- Z + relu(K Z W), per layer."""
        kd = adjacency.data
        if kd.ndim != 2 or kd.shape[0] != kd.shape[1]:
            raise T.ShapeMismatchError(f"graph_refine: adjacency {kd.shape} is not square")
        out = vertices
        for lin in self.graph_maps:
            out = T.add(out, T.relu(lin(T.matmul(adjacency, out))))
        return out

    def summarize_context(self, question: T.Tensor, context: T.Tensor) -> T.Tensor:
        """Question-driven summary of the holistic per-frame context, [1 x d]."""
        per_word = self.context_attn(question, context, context)
        return T.mean_axis(per_word, axis=0)

    def fuse(self, refined: T.Tensor, context_vec: T.Tensor) -> T.Tensor:
        """Per-object linear blend of refined vertex and context summary."""
        n = refined.data.shape[0]
        ones = T.Tensor(np.ones((n, 1), dtype=refined.data.dtype))
        tiled = T.matmul(ones, context_vec)
        return self.fuse_map(T.concat([refined, tiled], axis=-1))

    def embed_answer(self, fused: T.Tensor, answer_emb: T.Tensor) -> T.Tensor:
        """Object-specific readout of an answer's word embeddings, [N x d]."""
        if answer_emb.data.shape[0] == 0:
            return T.Tensor(np.zeros_like(fused.data))
        return self.answer_attn(fused, answer_emb, answer_emb)

    def memory_entry(self, fused: T.Tensor, answer_vec: T.Tensor, turn: int) -> T.Tensor:
        """History entry combining object state, answer readout, and turn code."""
        n = fused.data.shape[0]
        pos = sinusoid_encoding(turn, self.d, dtype=self.dtype)
        tiled = T.Tensor(np.repeat(pos, n, axis=0))
        return self.entry_map(T.concat([fused, answer_vec, tiled], axis=-1))

    def recall(self, fused: T.Tensor, memory: TurnMemory) -> T.Tensor:
        """Retrieve each object's relevant history; empty history reads zero."""
        rows = []
        for n in range(fused.data.shape[0]):
            entries = memory.per_object[n]
            query = T.slice_rows(fused, n, n + 1)
            if not entries:
                rows.append(T.Tensor(np.zeros((1, self.d), dtype=fused.data.dtype)))
            else:
                hist = T.concat(entries, axis=0) if len(entries) > 1 else entries[0]
                rows.append(self.memory_attn(query, hist, hist))
        return T.concat(rows, axis=0)

    # -- full step -----------------------------------------------------------

    def step(self, question: T.Tensor, tracks: ObjectTracks, context: T.Tensor,
             state: DialogState, memory: TurnMemory, ablate=frozenset()) -> tuple:
        """Run one turn; returns (TurnOutput, new DialogState).

        The memory write for this turn happens separately via
        :meth:`write_turn` once the turn's answer is known.
        """
        n = tracks.n_objects
        if len(memory.per_object) != n:
            raise T.ShapeMismatchError(f"memory tracks {len(memory.per_object)} objects, step got {n}")
        if "objects" in ablate:
            summaries = T.Tensor(np.zeros((n, self.d), dtype=self.dtype))
        else:
            summaries = self.summarize_objects(question, tracks)
        readouts = self.question_readout(summaries, question)
        modulated = self.modulate(summaries, readouts)
        if "recurrence" in ablate:
            # interaction matrix straight from the current turn's inputs;
            # no state carried between turns
            new_state = DialogState(states=state.states, turn=state.turn + 1)
            affinity = self.adjacency(self.state_proxy(modulated))
        else:
            new_state = self.advance(state, modulated)
            affinity = self.adjacency(new_state.states)
        refined = self.graph_refine(summaries, affinity)
        context_vec = self.summarize_context(question, context)
        fused = self.fuse(refined, context_vec)
        if "history-attn" in ablate:
            objects = fused
        else:
            recalled = self.recall(fused, memory)
            objects = self.output_map(T.concat([recalled, fused], axis=-1))
        return TurnOutput(objects=objects, affinity=affinity, fused=fused), new_state

    def write_turn(self, memory: TurnMemory, fused: T.Tensor, answer_emb: T.Tensor,
                   turn: int) -> None:
        """Append this turn's answer-guided entry to every object's history."""
        answer_vec = self.embed_answer(fused, answer_emb)
        memory.write(self.memory_entry(fused, answer_vec, turn))
