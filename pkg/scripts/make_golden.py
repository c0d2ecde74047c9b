"""Regenerate the golden-file fixtures under tests/golden/.

The goldens pin the end-to-end numeric behavior: a small synthetic dataset,
a checkpoint trained on it, and the metrics.json that `sgnn eval` must
reproduce byte-for-byte. Regenerate only when an intentional change alters
numeric output, and say so in the commit that updates them.

Usage: python3 scripts/make_golden.py
"""

import json
import shutil
import tempfile
from pathlib import Path

from sgnn.cli import main

GOLDEN_CONFIG = {
    "seed": 123,
    "block_size": 2,
    "synth": {
        "num_parcels": 8,
        "timepoints": 30,
        "edges_per_class": 3,
        "train_blocks": 12,
        "val_blocks": 4,
        "test_blocks": 4,
    },
    "model": {"d1": 16, "d2": 16, "d_hidden": 8},
    "training": {"max_epochs": 60, "patience": 15},
    "explain": {"top_k": 5},
}


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise SystemExit(f"golden pipeline step failed with exit code {code}: {argv}")


def main_():
    golden = Path(__file__).resolve().parent.parent / "tests" / "golden"
    golden.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config_path = tmp / "config.json"
        config_path.write_text(json.dumps(GOLDEN_CONFIG, indent=2, sort_keys=True) + "\n")

        run("synth", "--config", config_path, "--run-dir", tmp / "synth")
        run(
            "train", "--config", config_path, "--run-dir", tmp / "train",
            "--manifest", tmp / "synth" / "manifest.json",
            "--labels", tmp / "synth" / "labels.json",
        )
        run(
            "eval", "--config", config_path, "--run-dir", tmp / "eval",
            "--checkpoint", tmp / "train" / "model.ckpt",
            "--graphs", tmp / "train" / "graphs.bin",
            "--labels", tmp / "synth" / "labels.json",
        )

        shutil.copy(config_path, golden / "config.json")
        shutil.copy(tmp / "synth" / "labels.json", golden / "labels.json")
        shutil.copy(tmp / "train" / "graphs.bin", golden / "graphs.bin")
        shutil.copy(tmp / "train" / "model.ckpt", golden / "model.ckpt")
        shutil.copy(tmp / "eval" / "metrics.json", golden / "metrics.json")
    print(f"golden files written to {golden}")
    print((golden / "metrics.json").read_text())


if __name__ == "__main__":
    main_()
