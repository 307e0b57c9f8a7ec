"""Training on a synthetic corpus, then the same flow through the command line.

Run: python3 demos/08_train_and_cli.py
"""
import subprocess
import sys
import tempfile
from pathlib import Path

from msmtfn.config import ModelConfig
from msmtfn.dataio import load_manifest, synth_dataset
from msmtfn.train import TrainConfig, train

small = ModelConfig(d_model=16, n_heads=4, d_ff=32, pathway_depth=2, bottleneck_layers=2, bottleneck_tokens=4,
                    gru_layers=2, gru_hidden=16)

with tempfile.TemporaryDirectory() as d:
    d = Path(d)
    train_m, _ = synth_dataset(d / "train", n_calls=16, seed=0)
    val_m, _ = synth_dataset(d / "val", n_calls=10, seed=1, split="val", id_prefix="v")

    config = TrainConfig(learning_rate=3e-3, epochs=20, patience=3, model=small)
    result = train(load_manifest(train_m), load_manifest(val_m), config, d / "run")
    print(f"{result.steps} optimiser steps, best epoch {result.best_epoch}")
    print(result.report.summary())
    print("outputs:", sorted(p.name for p in (d / "run").iterdir()))

    def cli(*args):
        print("$ msmtfn", " ".join(args))
        done = subprocess.run([sys.executable, "-m", "msmtfn", *args], capture_output=True, text=True)
        print(done.stdout.strip() or done.stderr.strip(), f"[exit {done.returncode}]")

    cli("eval", "--checkpoint", str(d / "run" / "model.ckpt"), "--manifest", str(val_m))
    cli("predict", "--checkpoint", str(d / "run" / "model.ckpt"), "--manifest", str(val_m),
        "--out", str(d / "pred.jsonl"))
    print((d / "pred.jsonl").read_text().splitlines()[0])
    cli("gradcheck", "--max-coords", "2")
