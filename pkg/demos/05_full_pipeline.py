"""End-to-end pipeline through the CLI surface: generate a dataset, train,
evaluate the stress splits, ask one question, export interaction matrices.

Run:  python3 demos/05_full_pipeline.py   (a few minutes)
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

root = Path(tempfile.mkdtemp(prefix="objdialog_demo_"))
data, run = root / "data", root / "run"


def cli(*args):
    print("\n$ objdialog", " ".join(args))
    proc = subprocess.run([sys.executable, "-m", "objdialog.cli", *args],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        print(proc.stderr)
        raise SystemExit(proc.returncode)
    return json.loads(proc.stdout)


stats = cli("gen-data", "--out", str(data), "--worlds", "40", "--turns", "5",
            "--seed", "12", "--n", "4", "--f", "8", "--d", "32")
print("dataset:", stats["stats"])

summary = cli("train", "--data", str(data), "--out", str(run),
              "--epochs", "60", "--batch-size", "16", "--d", "32",
              "--decoder-layers", "2", "--seed", "0", "--base-lr", "0.002",
              "--max-answer-len", "6")
print("best validation loss:", summary["best_val"])
ckpt = summary["checkpoint"]

for split in ("test", "fvs", "copy"):
    report = cli("eval", "--checkpoint", ckpt, "--data", str(data), "--split", split)
    print(f"{split}: token_accuracy={report['token_accuracy']}"
          f" bleu1={report['bleu1']} over {report['turns']} turns")

world = json.loads((data / "data.jsonl").read_text().splitlines()[0])["world_id"]
answer = cli("ask", "--checkpoint", ckpt, "--data", str(data), "--world", world, "--turn", "1")
print(f"Q: {answer['question']}\nA: {answer['answer']} (ref: {answer['reference']},"
      f" logprob {answer['logprob']:.2f})")

trace = cli("trace", "--checkpoint", ckpt, "--data", str(data), "--world", world)
print("turn-1 interaction matrix rows:",
      [[round(v, 3) for v in row] for row in trace["turns"][0]["k"]])
print("\nartifacts left under", root)
