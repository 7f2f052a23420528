"""Synthetic trajectory videos with scripted multi-turn dialogs.

A "video" is a set of colored shapes moving piecewise-linearly on a small
grid, each visible over a contiguous frame interval. Questions come from a
handful of templates (attribute, location, meeting events, counting,
pronoun co-reference, and name-assignment echoes whose answers can only be
copied from the question); answers are produced symbolically from the world
and re-validated by an independent question parser, so ground truth is
exact by construction.

Per-object features are synthetic embeddings, not pixels: a fixed random
code per (shape, color) pair, plus sinusoidal codes of the grid position
and of the frame index, plus small content-keyed noise. The holistic
context track is the mean of the visible objects' features per frame plus
the frame code. Everything is a pure function of the seed, so regenerating
a dataset yields byte-identical files.

Dialog grounding rules (the data contract the model has to learn):
  - "it" refers to the object mentioned by the most recent earlier question
    that mentioned exactly one object; meeting/count questions never rebind.
  - A pronoun question always asks a property that no earlier turn revealed
    for that object, so its answer is never recoverable from history text.
  - coref_distance is the number of turns back to the binding question;
    fine_grained marks attribute/location questions, whose answers require
    looking at the object features rather than text statistics.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .nn import sinusoid_encoding

SHAPES = ("cube", "ball", "cone")
COLORS = ("red", "green", "blue", "yellow")
PLURALS = {"cube": "cubes", "ball": "balls", "cone": "cones"}
NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight")
NAME_POOL = ("zog", "blick", "quix", "marn", "felp", "dax", "vimp", "gorb", "plon",
             "kree", "sull", "twee", "nid", "rop", "juva", "tolk", "brix", "fen")
MAX_OBJECTS = len(NUMBER_WORDS) - 1


class GenerationError(RuntimeError):
    """World constraints could not be satisfied within the retry budget."""


class SpecError(ValueError):
    """A requested dataset split or filter came out empty."""


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Token-to-id mapping with the four reserved ids 0..3."""

    RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

    def __init__(self, mapping: dict):
        for i, tok in enumerate(self.RESERVED):
            if mapping.get(tok) != i:
                raise SpecError(f"vocabulary must reserve {tok!r} as id {i}")
        self.token_to_id = dict(mapping)
        self.id_to_token = {i: t for t, i in mapping.items()}
        self.oov_count = 0

    pad, bos, eos, unk = 0, 1, 2, 3

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        mapping = {tok: i for i, tok in enumerate(cls.RESERVED)}
        for tok in sorted(set(tokens) - set(cls.RESERVED)):
            mapping[tok] = len(mapping)
        return cls(mapping)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens) -> list:
        ids = []
        for tok in tokens:
            idx = self.token_to_id.get(tok)
            if idx is None:
                self.oov_count += 1
                warnings.warn(f"token {tok!r} not in vocabulary, mapped to <unk>")
                idx = self.unk
            ids.append(idx)
        return ids

    def decode(self, ids) -> list:
        return [self.id_to_token[int(i)] for i in ids]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.token_to_id, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path) as fh:
            return cls(json.load(fh))


# ---------------------------------------------------------------------------
# worlds


@dataclass
class WorldObject:
    oid: int
    shape: str
    color: str
    path: list                      # one (x, y) grid cell per frame
    enter: int                      # first visible frame
    exit: int                       # last visible frame

    def visible(self, frame: int) -> bool:
        return self.enter <= frame <= self.exit


@dataclass
class WorldEvent:
    frame: int
    kind: str                       # enter | exit | meet | pickup
    participants: tuple


@dataclass
class World:
    world_id: str
    grid: int
    n_frames: int
    objects: list
    events: list

    def by_descriptor(self, color: str | None, shape: str):
        hits = [o for o in self.objects
                if o.shape == shape and (color is None or o.color == color)]
        if len(hits) != 1:
            raise GenerationError(f"descriptor ({color}, {shape}) matches {len(hits)} objects")
        return hits[0]


def quadrant(pos, grid: int) -> list:
    x, y = pos
    return ["top" if y < grid / 2 else "bottom", "left" if x < grid / 2 else "right"]


def _interp_path(waypoints, n_frames: int, grid: int) -> list:
    """Piecewise-linear path through the waypoints, rounded to grid cells."""
    pts = np.asarray(waypoints, dtype=np.float64)
    knots = np.linspace(0, n_frames - 1, len(pts))
    frames = np.arange(n_frames)
    xs = np.interp(frames, knots, pts[:, 0])
    ys = np.interp(frames, knots, pts[:, 1])
    return [(int(np.clip(round(x), 0, grid - 1)), int(np.clip(round(y), 0, grid - 1)))
            for x, y in zip(xs, ys)]


def detect_events(objects, n_frames: int) -> list:
    """Derive the event list from trajectories and visibility intervals."""
    events = []
    for obj in objects:
        events.append(WorldEvent(frame=obj.enter, kind="enter", participants=(obj.oid,)))
        events.append(WorldEvent(frame=obj.exit, kind="exit", participants=(obj.oid,)))
    for i, a in enumerate(objects):
        for b in objects[i + 1:]:
            run = 0
            for f in range(n_frames):
                together = a.visible(f) and b.visible(f) and a.path[f] == b.path[f]
                if together:
                    if run == 0:
                        events.append(WorldEvent(frame=f, kind="meet",
                                                 participants=(a.oid, b.oid)))
                    run += 1
                    if run == 3:
                        events.append(WorldEvent(frame=f - 2, kind="pickup",
                                                 participants=(a.oid, b.oid)))
                else:
                    run = 0
    events.sort(key=lambda e: (e.frame, e.kind, e.participants))
    return events


def pair_meets(world: World, oid_a: int, oid_b: int) -> bool:
    key = tuple(sorted((oid_a, oid_b)))
    return any(e.kind == "meet" and tuple(sorted(e.participants)) == key for e in world.events)


def gen_world(seed: int, n_objects: int, n_frames: int, grid: int = 8,
              world_id: str | None = None) -> World:
    """Seeded random world: attributes, trajectories, visibility, one meet.

    Guarantees: all (color, shape) pairs distinct; at least one shape occurs
    exactly once (so bare-shape questions can be unambiguous); every object
    visible for at least half the frames; at least one meet event; every
    frame has at least one visible object.
    """
    if n_objects < 2 or n_objects > MAX_OBJECTS:
        raise GenerationError(f"need 2..{MAX_OBJECTS} objects, got {n_objects}")
    if n_frames < 4:
        raise GenerationError(f"need at least 4 frames, got {n_frames}")
    rng = np.random.default_rng((int(seed), 101))
    for _attempt in range(64):
        world = _try_world(rng, seed, n_objects, n_frames, grid, world_id)
        if world is not None:
            return world
    raise GenerationError(f"no valid world for seed {seed} after 64 attempts")


def _try_world(rng, seed, n_objects, n_frames, grid, world_id):
    # shape counts: one singleton shape plus a split of the rest, capped by
    # the number of distinct colors available per shape
    order = list(rng.permutation(len(SHAPES)))
    counts = [0, 0, 0]
    counts[order[0]] = 1
    remaining = n_objects - 1
    cap = len(COLORS)
    hi = min(cap, remaining)
    lo = max(0, remaining - cap)
    first = int(rng.integers(lo, hi + 1)) if hi >= lo else 0
    counts[order[1]] = first
    counts[order[2]] = remaining - first
    if max(counts) > cap:
        return None

    objects = []
    oid = 0
    for si, shape in enumerate(SHAPES):
        colors = rng.choice(len(COLORS), size=counts[si], replace=False)
        for ci in colors:
            span = int(rng.integers(int(np.ceil(n_frames / 2)), n_frames + 1))
            enter = int(rng.integers(0, n_frames - span + 1))
            waypoints = rng.integers(0, grid, size=(3, 2))
            objects.append(WorldObject(
                oid=oid, shape=shape, color=COLORS[ci],
                path=_interp_path(waypoints, n_frames, grid),
                enter=enter, exit=enter + span - 1))
            oid += 1

    # force at least one meet: route one object through another's position
    # at a frame where both are visible
    pairs = [(a, b) for a in objects for b in objects if a.oid < b.oid]
    rng.shuffle(pairs)
    forced = False
    for a, b in pairs:
        lo_f, hi_f = max(a.enter, b.enter), min(a.exit, b.exit)
        if hi_f - lo_f < 2:
            continue
        f_meet = int(rng.integers(lo_f, hi_f + 1))
        start = np.asarray(b.path[0], dtype=np.float64)
        end = np.asarray(b.path[-1], dtype=np.float64)
        target = np.asarray(a.path[f_meet], dtype=np.float64)
        n = len(b.path)
        new_path = []
        for f in range(n):
            if f <= f_meet:
                t = f / f_meet if f_meet > 0 else 1.0
                p = start + t * (target - start)
            else:
                t = (f - f_meet) / (n - 1 - f_meet) if f_meet < n - 1 else 1.0
                p = target + t * (end - target)
            new_path.append((int(np.clip(round(p[0]), 0, grid - 1)),
                             int(np.clip(round(p[1]), 0, grid - 1))))
        b.path = new_path
        forced = True
        break
    if not forced:
        return None

    for f in range(n_frames):
        if not any(o.visible(f) for o in objects):
            return None
    events = detect_events(objects, n_frames)
    if not any(e.kind == "meet" for e in events):
        return None
    return World(world_id=world_id or f"w{seed}", grid=grid, n_frames=n_frames,
                 objects=objects, events=events)


# ---------------------------------------------------------------------------
# features


def _stable_rng(*key) -> np.random.Generator:
    digest = hashlib.blake2s(repr(key).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def attribute_code(seed: int, shape: str, color: str, d: int) -> np.ndarray:
    pair = SHAPES.index(shape) * len(COLORS) + COLORS.index(color)
    rng = _stable_rng("attr", seed, pair)
    return (rng.normal(size=d) / np.sqrt(d)).astype(np.float32)


def position_code(x: int, y: int, d: int) -> np.ndarray:
    half = d // 2
    return 0.7 * np.concatenate(
        [sinusoid_encoding(x, half)[0], sinusoid_encoding(y, d - half)[0]])


def render_features(world: World, d: int, seed: int):
    """Feature tensors for one world: (feats [N,F,d], present [N,F], context [F,d]).

    Per object and frame: attribute code + position code + frame code +
    content-keyed noise. Context per frame is a holistic spatial gist: the
    mean of the visible objects' position codes plus the frame code. It
    deliberately carries no attribute codes, so object identities stay
    recoverable only through the per-object tracks (a plain feature mean
    turned out to leak every attribute as a linearly demixable sum, which
    let an object-blind model answer attribute questions).
    """
    if d < 16:
        raise GenerationError(f"feature width must be at least 16, got {d}")
    n, F = len(world.objects), world.n_frames
    feats = np.zeros((n, F, d), dtype=np.float32)
    present = np.zeros((n, F), dtype=bool)
    frame_codes = np.stack([0.5 * sinusoid_encoding(f, d)[0] for f in range(F)])
    pos_codes = np.zeros((n, F, d), dtype=np.float32)
    for i, obj in enumerate(world.objects):
        attr = attribute_code(seed, obj.shape, obj.color, d)
        for f in range(F):
            x, y = obj.path[f]
            pos_codes[i, f] = position_code(x, y, d)
            noise = 0.02 * _stable_rng("noise", seed, obj.shape, obj.color, x, y, f
                                       ).normal(size=d).astype(np.float32)
            feats[i, f] = attr + pos_codes[i, f] + frame_codes[f] + noise
            present[i, f] = obj.visible(f)
    context = np.zeros((F, d), dtype=np.float32)
    for f in range(F):
        vis = present[:, f]
        context[f] = (pos_codes[vis, f].mean(axis=0) if vis.any() else 0.0) + frame_codes[f]
    return feats, present, context


# ---------------------------------------------------------------------------
# dialogs


@dataclass
class DialogTurn:
    question: list
    answer: list
    coref_distance: int = 0
    fine_grained: bool = False
    kind: str = ""                  # template family; not serialized


@dataclass
class Sample:
    world_id: str
    feats: np.ndarray
    present: np.ndarray
    context: np.ndarray
    dialog: list
    objects: list = field(default_factory=list)   # [{id, shape, color}]


def _mention(obj: WorldObject, with_color: bool) -> list:
    return ["the", obj.color, obj.shape] if with_color else ["the", obj.shape]


def _unique_shapes(world: World) -> list:
    counts = {}
    for o in world.objects:
        counts[o.shape] = counts.get(o.shape, 0) + 1
    return [s for s, c in counts.items() if c == 1]


class _DialogBuilder:
    """Stateful template sampler enforcing the grounding rules."""

    def __init__(self, world: World, rng: np.random.Generator):
        self.world = world
        self.rng = rng
        self.referent: WorldObject | None = None
        self.referent_turn = 0
        self.revealed: dict = {o.oid: set() for o in world.objects}
        self.turns: list = []

    def _bind(self, obj: WorldObject, turn_index: int) -> None:
        self.referent = obj
        self.referent_turn = turn_index

    def _loc_answer(self, obj: WorldObject, endpoint: str) -> list:
        frame = obj.enter if endpoint == "start" else obj.exit
        return quadrant(obj.path[frame], self.world.grid)

    def intro_turn(self, turn_index: int, prefer: str | None = None) -> DialogTurn:
        rng = self.rng
        unique = _unique_shapes(self.world)
        choices = ["loc_pair"]
        if unique:
            choices += ["color_of_shape", "loc_shape"]
        if prefer in choices:
            kind = prefer
        else:
            kind = choices[int(rng.integers(0, len(choices)))]
        if kind == "color_of_shape":
            obj = self.world.by_descriptor(None, unique[int(rng.integers(0, len(unique)))])
            self._bind(obj, turn_index)
            self.revealed[obj.oid].add("color")
            return DialogTurn(question=["what", "color", "is"] + _mention(obj, False),
                              answer=[obj.color], fine_grained=True, kind="attribute")
        endpoint = "start" if rng.integers(0, 2) == 0 else "end"
        if kind == "loc_shape":
            obj = self.world.by_descriptor(None, unique[int(rng.integers(0, len(unique)))])
            mention = _mention(obj, False)
        else:
            obj = self.world.objects[int(rng.integers(0, len(self.world.objects)))]
            mention = _mention(obj, True)
            self.revealed[obj.oid].add("color")
        self._bind(obj, turn_index)
        self.revealed[obj.oid].add(f"loc_{endpoint}")
        return DialogTurn(question=["where", "is"] + mention + ["at", "the", endpoint],
                          answer=self._loc_answer(obj, endpoint),
                          fine_grained=True, kind="location")

    def coref_turn(self, turn_index: int, prefer: str | None = None) -> DialogTurn | None:
        if self.referent is None:
            return None
        obj = self.referent
        options = [p for p in ("color", "loc_start", "loc_end")
                   if p not in self.revealed[obj.oid]]
        if not options:
            return None
        if prefer in options:
            prop = prefer
        elif "color" in options:
            # color pronouns are the sharpest co-reference probe: one token,
            # four-way marginal, answerable only by binding plus lookup
            prop = "color"
        else:
            prop = options[int(self.rng.integers(0, len(options)))]
        self.revealed[obj.oid].add(prop)
        distance = turn_index - self.referent_turn
        if prop == "color":
            return DialogTurn(question=["what", "color", "is", "it"], answer=[obj.color],
                              coref_distance=distance, fine_grained=True, kind="attribute")
        endpoint = prop.split("_")[1]
        return DialogTurn(question=["where", "is", "it", "at", "the", endpoint],
                          answer=self._loc_answer(obj, endpoint),
                          coref_distance=distance, fine_grained=True, kind="location")

    def count_turn(self) -> DialogTurn:
        rng = self.rng
        if rng.integers(0, 4) == 0:
            return DialogTurn(question=["how", "many", "objects", "are", "there"],
                              answer=[NUMBER_WORDS[len(self.world.objects)]], kind="count")
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        count = sum(1 for o in self.world.objects if o.shape == shape)
        return DialogTurn(question=["how", "many", PLURALS[shape], "are", "there"],
                          answer=[NUMBER_WORDS[count]], kind="count")

    def event_turn(self) -> DialogTurn:
        rng = self.rng
        n = len(self.world.objects)
        i, j = rng.choice(n, size=2, replace=False)
        a, b = self.world.objects[int(i)], self.world.objects[int(j)]
        meets = pair_meets(self.world, a.oid, b.oid)
        return DialogTurn(
            question=["do"] + _mention(a, True) + ["and"] + _mention(b, True) + ["meet"],
            answer=["yes" if meets else "no"], kind="event")

    def name_turn(self, turn_index: int) -> DialogTurn:
        rng = self.rng
        obj = self.world.objects[int(rng.integers(0, len(self.world.objects)))]
        name = NAME_POOL[int(rng.integers(0, len(NAME_POOL)))]
        self._bind(obj, turn_index)
        self.revealed[obj.oid].add("color")
        mention = _mention(obj, True)
        return DialogTurn(
            question=mention + ["is", "named", name, "what", "is"] + mention + ["named"],
            answer=[name], kind="name")


def gen_dialog(world: World, n_turns: int, seed: int, lds_chance: float = 0.75) -> list:
    """Scripted question/answer turns; every answer re-checked by the parser oracle.

    With probability ``lds_chance`` the dialog opens with an introduction
    followed by non-binding filler turns so a pronoun question lands at
    co-reference distance >= 3.
    """
    if n_turns < 2:
        raise GenerationError(f"need at least 2 turns, got {n_turns}")
    rng = np.random.default_rng((int(seed), 977))
    builder = _DialogBuilder(world, rng)
    long_gap = n_turns >= 5 and rng.random() < lds_chance
    probed = False
    turns: list = []
    for t in range(1, n_turns + 1):
        turn = None
        if t == 1:
            # a bare-shape introduction keeps the referent's color unrevealed
            # so the long-gap pronoun can probe it
            turn = builder.intro_turn(t, prefer="loc_shape" if long_gap else None)
        elif long_gap and t in (2, 3):
            turn = builder.count_turn() if rng.integers(0, 2) == 0 else builder.event_turn()
        elif long_gap and t == 4:
            turn = builder.coref_turn(t, prefer="color")
            probed = turn is not None
            long_gap = turn is not None  # fall through on retry
        if turn is None:
            for _retry in range(8):
                pick = rng.random()
                # a long-gap dialog keeps its single distance-3 probe clean;
                # other dialogs mix short-distance pronouns for training signal
                coref_share = 0.0 if probed else 0.35
                if pick < coref_share:
                    turn = builder.coref_turn(t)
                elif pick < coref_share + 0.20:
                    turn = builder.name_turn(t)
                elif pick < coref_share + 0.38:
                    turn = builder.count_turn()
                elif pick < coref_share + 0.55:
                    turn = builder.event_turn()
                else:
                    turn = builder.intro_turn(t)
                if turn is not None:
                    break
            if turn is None:
                turn = builder.count_turn()
        check = oracle_answer(world, [p.question for p in turns], turn.question)
        if check != turn.answer:
            raise GenerationError(
                f"oracle disagrees on {' '.join(turn.question)!r}: "
                f"{turn.answer} vs {check}")
        turns.append(turn)
    return turns


# ---------------------------------------------------------------------------
# independent answer oracle (token parser; shares no state with the builder)


def _parse_descriptor(tokens: list) -> tuple:
    """['the', 'red', 'cube', ...] -> (('red', 'cube'), rest); color optional."""
    if tokens[0] != "the":
        raise ValueError(f"descriptor must start with 'the': {tokens}")
    if tokens[1] in COLORS:
        return (tokens[1], tokens[2]), tokens[3:]
    return (None, tokens[1]), tokens[2:]


def _resolve_pronoun(world: World, history: list) -> WorldObject:
    """Most recent earlier question that mentioned exactly one object."""
    for q in reversed(history):
        text = list(q)
        found = []
        i = 0
        while i < len(text):
            if text[i] == "the" and i + 1 < len(text):
                try:
                    (color, shape), _ = _parse_descriptor(text[i:])
                except (ValueError, IndexError):
                    i += 1
                    continue
                if shape in SHAPES:
                    found.append((color, shape))
                    i += 3 if color else 2
                    continue
            i += 1
        distinct = set(found)
        if len(distinct) == 1:
            color, shape = next(iter(distinct))
            return world.by_descriptor(color, shape)
    raise ValueError("pronoun with no bindable mention in history")


def oracle_answer(world: World, history: list, question: list) -> list:
    """Answer a templated question from the world alone, by parsing its tokens."""
    q = list(question)
    if q[:2] == ["how", "many"]:
        if q[2] == "objects":
            return [NUMBER_WORDS[len(world.objects)]]
        shape = next(s for s, p in PLURALS.items() if p == q[2])
        return [NUMBER_WORDS[sum(1 for o in world.objects if o.shape == shape)]]
    if q[0] == "do" and q[-1] == "meet":
        (c1, s1), rest = _parse_descriptor(q[1:])
        assert rest[0] == "and"
        (c2, s2), _ = _parse_descriptor(rest[1:])
        a, b = world.by_descriptor(c1, s1), world.by_descriptor(c2, s2)
        return ["yes" if pair_meets(world, a.oid, b.oid) else "no"]
    if "named" in q:
        name = q[q.index("named") + 1]
        return [name]
    if q[:3] == ["what", "color", "is"]:
        obj = (_resolve_pronoun(world, history) if q[3] == "it"
               else world.by_descriptor(*_parse_descriptor(q[3:])[0]))
        return [obj.color]
    if q[:2] == ["where", "is"]:
        endpoint = q[-1]
        obj = (_resolve_pronoun(world, history) if q[2] == "it"
               else world.by_descriptor(*_parse_descriptor(q[2:])[0]))
        frame = obj.enter if endpoint == "start" else obj.exit
        return quadrant(obj.path[frame], world.grid)
    raise ValueError(f"unparseable question: {' '.join(q)}")


# ---------------------------------------------------------------------------
# datasets, splits, files


def make_sample(world: World, d: int, n_turns: int, seed: int) -> Sample:
    feats, present, context = render_features(world, d, seed)
    dialog = gen_dialog(world, n_turns, seed=_world_seed_of(world.world_id, seed))
    return Sample(world_id=world.world_id, feats=feats, present=present, context=context,
                  dialog=dialog,
                  objects=[{"id": o.oid, "shape": o.shape, "color": o.color}
                           for o in world.objects])


def _world_seed_of(world_id: str, seed: int) -> int:
    digest = hashlib.blake2s(f"{seed}:{world_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generate_worlds(seed: int, n_worlds: int, n_objects: int, n_frames: int,
                    grid: int = 8) -> list:
    worlds = []
    for wi in range(n_worlds):
        world_id = f"w{wi:04d}"
        worlds.append(gen_world(seed * 1_000_003 + wi, n_objects, n_frames, grid=grid,
                                world_id=world_id))
    return worlds


def generate_dataset(seed: int, n_worlds: int, n_objects: int, n_frames: int,
                     d: int, n_turns: int, grid: int = 8) -> list:
    return [make_sample(w, d, n_turns, seed)
            for w in generate_worlds(seed, n_worlds, n_objects, n_frames, grid=grid)]


def build_vocab(samples) -> Vocab:
    tokens = set()
    for sample in samples:
        for turn in sample.dialog:
            tokens.update(turn.question)
            tokens.update(turn.answer)
    return Vocab.from_tokens(tokens)


def build_splits(samples, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> dict:
    """Deterministic train/val/test partition by seeded hash order of world id.

    Samples are ranked by a keyed hash and cut at the exact ratio boundaries,
    so sizes match the ratios to within rounding and no world id crosses
    splits.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SpecError(f"split ratios {ratios} do not sum to 1")
    ranked = sorted(samples, key=lambda s: (_world_seed_of(s.world_id, seed), s.world_id))
    n = len(ranked)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    splits = {"train": ranked[:n_train],
              "val": ranked[n_train:n_train + n_val],
              "test": ranked[n_train + n_val:]}
    for name, part in splits.items():
        if not part:
            raise SpecError(f"split {name!r} is empty for {n} samples at ratios {ratios}")
    return splits


def lds_turns(samples, min_distance: int = 3) -> list:
    """(sample, turn index) pairs with long-range pronoun dependencies."""
    return [(s, t) for s in samples for t, turn in enumerate(s.dialog)
            if turn.coref_distance >= min_distance]


def fvs_turns(samples) -> list:
    """(sample, turn index) pairs needing fine-grained visual grounding."""
    return [(s, t) for s in samples for t, turn in enumerate(s.dialog) if turn.fine_grained]


def copy_turns(samples) -> list:
    """(sample, turn index) pairs whose question injects a rare name token."""
    names = set(NAME_POOL)
    return [(s, t) for s in samples for t, turn in enumerate(s.dialog)
            if names.intersection(turn.question)]


def sample_to_record(sample: Sample) -> dict:
    n, f, d = sample.feats.shape
    return {
        "world_id": sample.world_id, "n": n, "f": f, "d": d,
        "x": [[[float(v) for v in row] for row in obj] for obj in sample.feats],
        "present": [[bool(v) for v in row] for row in sample.present],
        "c": [[float(v) for v in row] for row in sample.context],
        "dialog": [{"q": list(t.question), "a": list(t.answer),
                    "coref_distance": int(t.coref_distance),
                    "fine_grained": bool(t.fine_grained)} for t in sample.dialog],
        "objects": [dict(o) for o in sample.objects],
    }


def record_to_sample(record: dict) -> Sample:
    return Sample(
        world_id=record["world_id"],
        feats=np.asarray(record["x"], dtype=np.float32),
        present=np.asarray(record["present"], dtype=bool),
        context=np.asarray(record["c"], dtype=np.float32),
        dialog=[DialogTurn(question=t["q"], answer=t["a"],
                           coref_distance=t["coref_distance"],
                           fine_grained=t["fine_grained"]) for t in record["dialog"]],
        objects=record.get("objects", []))


def write_jsonl(path, samples) -> None:
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_record(sample), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [record_to_sample(json.loads(line)) for line in fh if line.strip()]


def dataset_stats(samples, splits: dict | None = None) -> dict:
    stats = {
        "worlds": len(samples),
        "turns": sum(len(s.dialog) for s in samples),
        "lds_turns": len(lds_turns(samples)),
        "fvs_turns": len(fvs_turns(samples)),
        "copy_turns": len(copy_turns(samples)),
    }
    if splits is not None:
        stats["splits"] = {name: len(part) for name, part in splits.items()}
        stats["test_lds_turns"] = len(lds_turns(splits["test"]))
        stats["test_fvs_turns"] = len(fvs_turns(splits["test"]))
    return stats
