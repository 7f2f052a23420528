"""Decoding: vocabulary/copy mixture, greedy vs beam search.

Trains briefly on a handful of dialogs so the distributions carry signal,
then compares search strategies and shows the pointer copying a rare name.

Run:  python3 demos/04_decoding.py   (about a minute)
"""

import numpy as np

from objdialog import synthworld as sw
from objdialog import training as tr

samples = sw.generate_dataset(seed=8, n_worlds=10, n_objects=4, n_frames=8, d=32, n_turns=5)
vocab = sw.build_vocab(samples)
cfg = tr.TrainConfig(d=32, heads=4, decoder_layers=2, graph_layers=2, n_objects=4, n_frames=8,
                     vocab_size=len(vocab), batch_size=8, epochs=80, base_lr=2e-3,
                     seed=0, max_answer_len=6)
print("training on 10 dialogs ...")
result = tr.train(cfg, samples, samples[:2], vocab, "/tmp/objdialog_demo04")
model = tr.model_from_checkpoint(tr.load_checkpoint(result.last_path))
print(f"final train loss {result.log[-1]['train_loss']:.3f}")

sample = samples[0]
print(f"\nworld {sample.world_id}: greedy vs beam-3 (log-probabilities in parentheses)")
greedy = model.predict_dialog(sample, vocab, beam=1)
beam = model.predict_dialog(sample, vocab, beam=3)
for t, turn in enumerate(sample.dialog):
    g_tok, g_lp = greedy[t]
    b_tok, b_lp = beam[t]
    marker = "  <- beam improved" if b_lp > g_lp + 1e-9 else ""
    print(f"  Q: {' '.join(turn.question)}")
    print(f"     greedy: {' '.join(g_tok) or '(empty)'} ({g_lp:.2f})"
          f" | beam: {' '.join(b_tok) or '(empty)'} ({b_lp:.2f})"
          f" | ref: {' '.join(turn.answer)}{marker}")

print("\ncopy turns: answers that exist nowhere but in the question")
hits = sw.copy_turns(samples)
for s, t in hits[:3]:
    tokens, _ = model.predict_turn(s, vocab, t, beam=3)
    print(f"  Q: {' '.join(s.dialog[t].question)}")
    print(f"     model: {' '.join(tokens)} | ref: {' '.join(s.dialog[t].answer)}")
