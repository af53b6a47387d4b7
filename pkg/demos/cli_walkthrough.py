"""End-to-end artifact tour using the command line interface.

Generates a small two-party CSV dataset, trains the two-step method on
it, evaluates the final checkpoint, and prints the metric report. Every
artifact lands under a temp directory so reruns are clean.

Run: python3 demos/cli_walkthrough.py
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

CONFIG = """
[data]
mode = "synthetic"
n_train = 3000
n_val = 600
n_test = 600
aligned_fraction = 0.6
host_slots = 6
guest_slots = 6
vocab_size = 200
label_noise = 1.5
seed = 11

[model]
embed_dim = 4
bottom_dims = [64, 32]
top_dims = [32]
rep_dims = [32]

[training]
batch_size = 128
max_epochs = 4
patience = 1
"""


def run(args, out_dir):
    cmd = [sys.executable, "-m", "fedud.cli", *args]
    print(f"$ fedud {' '.join(args)}")
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        print(proc.stderr)
        raise SystemExit(proc.returncode)
    for line in proc.stdout.splitlines():
        print(f"  {line}")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config = tmp / "demo.toml"
        config.write_text(CONFIG)
        data_dir = tmp / "data"
        run_dir = tmp / "run"

        run(["gen-data", "--config", str(config), "--out", str(data_dir)], tmp)
        run(["train", "--config", str(config), "--out", str(run_dir)], tmp)
        run(["eval", str(run_dir / "step2.ckpt"), "--config", str(config),
             "--out", str(run_dir)], tmp)

        report = json.loads((run_dir / "report.json").read_text())
        print("\nmetric report slices:")
        for name, cell in report["slices"].items():
            print(f"  {name:<10} n={cell['n']:<5} auc={cell['auc']:.4f} "
                  f"logloss={cell['logloss']:.4f}")
        print("\nartifacts written during the run:")
        for p in sorted(run_dir.iterdir()):
            print(f"  {p.name} ({p.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
