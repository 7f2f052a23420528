"""Teacher-forced training with Adam and a cosine learning-rate schedule.

One optimizer step per mini-batch: per-sample losses (answer NLL plus the
question-reconstruction NLL, summed over turns) are scaled by 1/batch and
their gradients accumulated in index order, clipped at a global norm, then
applied. Everything is driven by seeded generators, so a fixed seed and
config reproduce the loss curve and checkpoint bytes exactly.

Checkpoints are a little-endian binary: a 4-byte header length, a JSON
manifest (config, epoch, RNG state, tensor directory with byte offsets),
then the raw float32 payload. Reloading restores bit-identical forward
behavior, and interrupted runs resume with continued epoch numbering.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import DialogModel, ModelConfig

CHECKPOINT_FORMAT = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, world_ids):
        super().__init__(f"non-finite loss at step {step} (batch worlds: {list(world_ids)})")
        self.step = step
        self.world_ids = list(world_ids)


class CheckpointError(ValueError):
    """Corrupt checkpoint or config-hash mismatch."""


@dataclass
class TrainConfig:
    d: int = 64
    heads: int = 4
    decoder_layers: int = 3
    graph_layers: int = 2
    n_objects: int = 6
    n_frames: int = 20
    vocab_size: int = 0
    batch_size: int = 16
    epochs: int = 100
    base_lr: float = 1e-3
    seed: int = 0
    beam: int = 3
    max_answer_len: int = 8
    clip_norm: float = 5.0
    question_weight: float = 1.0
    ablate: tuple = ()

    def __post_init__(self):
        self.ablate = tuple(self.ablate)
        counts = (self.d, self.heads, self.decoder_layers, self.n_objects, self.n_frames,
                  self.batch_size, self.epochs, self.beam, self.max_answer_len)
        if any(c < 1 for c in counts):
            raise ValueError("all config counts must be at least 1")
        if self.d % self.heads != 0:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) if f != "ablate" else list(self.ablate)
                for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**known)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, heads=self.heads, decoder_layers=self.decoder_layers,
                           graph_layers=self.graph_layers, vocab_size=self.vocab_size,
                           max_answer_len=self.max_answer_len, ablate=self.ablate)


def config_hash(cfg: TrainConfig) -> str:
    """Hash of the architecture-relevant fields; guards checkpoint reuse."""
    arch = {"d": cfg.d, "heads": cfg.heads, "decoder_layers": cfg.decoder_layers,
            "graph_layers": cfg.graph_layers, "vocab_size": cfg.vocab_size,
            "max_answer_len": cfg.max_answer_len, "ablate": list(cfg.ablate)}
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside schedule of {total_steps}")
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * step / total_steps))


# ---------------------------------------------------------------------------
# checkpoint file format


def save_checkpoint(path, model: DialogModel, opt: T.Adam, cfg: TrainConfig, epoch: int,
                    rng_state: dict, best_val: float | None = None) -> None:
    params = model.params()
    tensors = []
    for name in sorted(params):
        tensors.append((name, params[name].data))
    for name in sorted(params):
        tensors.append((f"adam.m.{name}", opt.m[name]))
        tensors.append((f"adam.v.{name}", opt.v[name]))
    directory = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoint tensors must be float32, {name} is {arr.dtype}")
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "dtype": "<f4",
                          "byte_offset": offset, "byte_len": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "adam_step": opt.step_count,
        "rng_state": rng_state,
        "best_val": best_val,
        "tensors": directory,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        (head_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(head_len).decode())
        payload = fh.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')}")
    cfg = TrainConfig.from_dict(header["config"])
    if config_hash(cfg) != header["config_hash"]:
        raise CheckpointError("config hash mismatch: checkpoint config was altered")
    tensors = {}
    for entry in header["tensors"]:
        start, length = entry["byte_offset"], entry["byte_len"]
        arr = np.frombuffer(payload[start:start + length], dtype=entry["dtype"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return {"config": cfg, "epoch": header["epoch"], "adam_step": header["adam_step"],
            "rng_state": header["rng_state"], "best_val": header["best_val"],
            "tensors": tensors}


def model_from_checkpoint(ckpt: dict) -> DialogModel:
    cfg: TrainConfig = ckpt["config"]
    model = DialogModel(cfg.model_config(), np.random.default_rng(cfg.seed))
    params = model.params()
    for name, p in params.items():
        stored = ckpt["tensors"].get(name)
        if stored is None:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if tuple(stored.shape) != tuple(p.data.shape):
            raise CheckpointError(f"tensor {name}: stored {stored.shape} vs model {p.data.shape}")
        p.data = stored.astype(np.float32)
    return model


def _restore_adam(opt: T.Adam, ckpt: dict) -> None:
    opt.step_count = int(ckpt["adam_step"])
    for name in opt.params:
        opt.m[name] = ckpt["tensors"][f"adam.m.{name}"].astype(np.float32)
        opt.v[name] = ckpt["tensors"][f"adam.v.{name}"].astype(np.float32)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    log: list = field(default_factory=list)
    best_val: float | None = None


def dataset_loss(model: DialogModel, samples, vocab, question_weight: float) -> float:
    """Mean per-sample total loss, forward only (no tape)."""
    total = 0.0
    for sample in samples:
        total += float(model.total_loss(sample, vocab, question_weight).data)
    return total / max(len(samples), 1)


def token_accuracy_teacher_forced(model: DialogModel, samples, vocab) -> float:
    correct = total = 0
    for sample in samples:
        c, t = model.token_stats(sample, vocab)
        correct += c
        total += t
    return correct / max(total, 1)


def train(cfg: TrainConfig, train_samples, val_samples, vocab, out_dir,
          resume=None, log_fn=None, stop_epoch: int | None = None) -> TrainResult:
    """Run (or resume) training; keeps the best-validation checkpoint.

    Writes ``best.ckpt`` and ``last.ckpt`` under ``out_dir`` and returns the
    per-epoch log entries (epoch, lr, train and validation losses). The
    cosine schedule always spans ``cfg.epochs``; ``stop_epoch`` pauses a run
    early so that stopping and resuming reproduces an uninterrupted run
    bit for bit.
    """
    import os

    if not train_samples:
        raise ValueError("empty training set")
    if cfg.vocab_size == 0:
        cfg.vocab_size = len(vocab)
    if cfg.vocab_size != len(vocab):
        raise CheckpointError(f"config vocab {cfg.vocab_size} vs vocabulary {len(vocab)}")
    os.makedirs(out_dir, exist_ok=True)
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")

    model = DialogModel(cfg.model_config(), np.random.default_rng(cfg.seed))
    opt = T.Adam(model.params())
    shuffle_rng = np.random.default_rng((cfg.seed, 1))
    start_epoch = 0
    best_val = None
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if config_hash(ckpt["config"]) != config_hash(cfg):
            raise CheckpointError("resume checkpoint was trained with a different architecture")
        model = model_from_checkpoint(ckpt)
        opt = T.Adam(model.params())
        _restore_adam(opt, ckpt)
        shuffle_rng.bit_generator.state = ckpt["rng_state"]
        start_epoch = int(ckpt["epoch"])
        best_val = ckpt["best_val"]

    batches_per_epoch = int(np.ceil(len(train_samples) / cfg.batch_size))
    total_steps = cfg.epochs * batches_per_epoch
    last_epoch = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    log: list = []
    lr = cosine_lr(min(opt.step_count, total_steps), total_steps, cfg.base_lr)
    for epoch in range(start_epoch, last_epoch):
        order = shuffle_rng.permutation(len(train_samples))
        epoch_losses = []
        for b in range(batches_per_epoch):
            batch = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            opt.zero_grad()
            for idx in batch:
                sample = train_samples[int(idx)]
                with T.Tape() as tape:
                    loss = model.total_loss(sample, vocab, cfg.question_weight)
                    tape.backward(T.scale(loss, 1.0 / len(batch)))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDiverged(opt.step_count + 1,
                                           [train_samples[int(i)].world_id for i in batch])
                epoch_losses.append(value)
            if cfg.clip_norm > 0:
                T.clip_global_norm(opt.params, cfg.clip_norm)
            lr = cosine_lr(min(opt.step_count, total_steps - 1), total_steps, cfg.base_lr)
            opt.step(lr)
        val_loss = dataset_loss(model, val_samples, vocab, cfg.question_weight)
        entry = {"epoch": epoch + 1, "lr": lr,
                 "train_loss": float(np.mean(epoch_losses)), "val_loss": val_loss}
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)
        rng_state = shuffle_rng.bit_generator.state
        if best_val is None or val_loss < best_val:
            best_val = val_loss
            save_checkpoint(best_path, model, opt, cfg, epoch + 1, rng_state, best_val)
        save_checkpoint(last_path, model, opt, cfg, epoch + 1, rng_state, best_val)
    if not os.path.exists(best_path):
        rng_state = shuffle_rng.bit_generator.state
        save_checkpoint(best_path, model, opt, cfg, start_epoch, rng_state, best_val)
    return TrainResult(best_path=best_path, last_path=last_path, log=log, best_val=best_val)
